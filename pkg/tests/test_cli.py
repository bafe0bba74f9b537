"""CLI plumbing: exit codes, provenance, and stage artifacts."""
import json

import pandas as pd
import pytest

from gazeeg.cli import main


def test_version_exits_zero(capsys):
    assert main(["--version"]) == 0
    assert "gazeeg" in capsys.readouterr().out


def test_unknown_flag_usage_error(capsys):
    assert main(["synth", "--bogus"]) == 1
    assert "usage" in capsys.readouterr().err


def test_missing_subcommand_usage_error(capsys):
    assert main([]) == 1


def test_unknown_config_key_is_usage_error(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("not.a.key = 1\n")
    assert main(["synth", "--config", str(cfg), "--out", str(tmp_path / "d")]) == 1


def test_missing_input_is_runtime_error(tmp_path):
    assert main(["gaze", "--in", str(tmp_path / "nope"),
                 "--out", str(tmp_path / "o.csv")]) == 2


@pytest.fixture(scope="module")
def synth_out(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli_synth")
    cfg = out / "c.cfg"
    cfg.write_text("synth.n_participants = 2\n"
                   "synth.trials_per_participant = 16\n"
                   "seed = 11\n")
    assert main(["synth", "--config", str(cfg), "--out", str(out / "data")]) == 0
    return out


def test_synth_writes_provenance(synth_out):
    eff = (synth_out / "data" / "effective_config.txt").read_text()
    assert "seed = 11" in eff
    assert "synth.trials_per_participant = 16" in eff
    assert (synth_out / "data" / "p00" / "gaze.csv").exists()


def test_gaze_subcommand(synth_out, tmp_path):
    out = tmp_path / "fix.csv"
    assert main(["gaze", "--in", str(synth_out / "data" / "p00"),
                 "--out", str(out)]) == 0
    df = pd.read_csv(out)
    assert {"kind", "onset_ms", "duration_ms"} <= set(df.columns)
    assert (df["kind"] == "fixation").any()


def test_eeg_then_features_then_train(synth_out, tmp_path):
    epochs = tmp_path / "epochs.bin"
    assert main(["eeg", "--in", str(synth_out / "data" / "p00"),
                 "--out", str(epochs)]) == 0
    feats = tmp_path / "features.csv"
    assert main(["features", "--epochs", str(epochs), "--set", "fusion",
                 "--out", str(feats)]) == 0
    df = pd.read_csv(feats)
    assert "fix_dur_ms" in df.columns
    assert sum(c.startswith("csp_") for c in df.columns) == 15
    model_path = tmp_path / "model.json"
    assert main(["train", "--features", str(feats),
                 "--out", str(model_path)]) == 0
    model = json.loads(model_path.read_text())
    assert model["kernel"] in ("linear", "poly", "rbf")
    assert len(model["cv_table"]) == 18


def test_eval_single_condition(synth_out, tmp_path):
    cfg = tmp_path / "e.cfg"
    cfg.write_text("eval.k_folds = 4\n"
                   "learn.inner_folds = 3\n"
                   "eval.splits = within_user\n")
    out = tmp_path / "report"
    assert main(["eval", "--config", str(cfg),
                 "--data", str(synth_out / "data"),
                 "--conditions", "both->both", "--features", "gaze,csp15",
                 "--out", str(out)]) == 0
    df = pd.read_csv(out / "report.csv")
    assert len(df) == 2
    assert set(df["feature_set"]) == {"gaze", "csp15"}
    assert (out / "effective_config.txt").exists()
    payload = json.loads((out / "report.json").read_text())
    assert "reference_accuracies" in payload


def test_eval_deterministic(synth_out, tmp_path):
    cfg = tmp_path / "e.cfg"
    cfg.write_text("eval.k_folds = 3\n"
                   "learn.inner_folds = 2\n"
                   "eval.splits = cross_user\n")
    args = ["eval", "--config", str(cfg), "--data", str(synth_out / "data"),
            "--conditions", "W->W", "--features", "gaze"]
    assert main(args + ["--out", str(tmp_path / "r1")]) == 0
    assert main(args + ["--out", str(tmp_path / "r2")]) == 0
    assert (tmp_path / "r1" / "report.csv").read_bytes() == \
           (tmp_path / "r2" / "report.csv").read_bytes()


def test_report_rerender(synth_out, tmp_path):
    cfg = tmp_path / "e.cfg"
    cfg.write_text("eval.k_folds = 3\nlearn.inner_folds = 2\n"
                   "eval.splits = within_user\n")
    out = tmp_path / "r"
    assert main(["eval", "--config", str(cfg),
                 "--data", str(synth_out / "data"),
                 "--conditions", "both->both", "--features", "gaze",
                 "--out", str(out)]) == 0
    out2 = tmp_path / "r2"
    assert main(["report", "--report-json", str(out / "report.json"),
                 "--out", str(out2)]) == 0
    assert (out2 / "report.csv").exists()
