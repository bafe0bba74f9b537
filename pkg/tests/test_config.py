"""Flat key=value config: precedence, typing, and typed views."""
import pytest

from gazeeg.config import DEFAULTS, PipelineConfig
from gazeeg.errors import ConfigError


def test_defaults_load_without_file():
    cfg = PipelineConfig.load(None)
    assert cfg["seed"] == 0
    assert cfg["eval.k_folds"] == 10


def test_file_overrides_defaults(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("seed = 42\nsynth.noise_scale_uv = 2.5  # comment\n\n")
    cfg = PipelineConfig.load(p)
    assert cfg["seed"] == 42
    assert cfg["synth.noise_scale_uv"] == 2.5
    assert cfg["eval.k_folds"] == DEFAULTS["eval.k_folds"]


def test_unknown_key_rejected(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("nope = 1\n")
    with pytest.raises(ConfigError):
        PipelineConfig.load(p)


def test_bad_value_type_rejected(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("eval.k_folds = often\n")
    with pytest.raises(ConfigError):
        PipelineConfig.load(p)


def test_boolean_parsing(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("eeg.run_sobi = off\nsynth.include_eeg = TRUE\n")
    cfg = PipelineConfig.load(p)
    assert cfg["eeg.run_sobi"] is False
    assert cfg["synth.include_eeg"] is True


def test_dump_round_trip(tmp_path):
    cfg = PipelineConfig.load(None)
    cfg.set("seed", 9)
    out = tmp_path / "dump.cfg"
    cfg.dump(out)
    again = PipelineConfig.load(out)
    assert again.values == cfg.values


def test_typed_views():
    cfg = PipelineConfig.load(None)
    sc = cfg.synth_config()
    assert sc.n_participants == DEFAULTS["synth.n_participants"]
    ivt = cfg.ivt_params()
    assert ivt.velocity_threshold_deg_s == 30.0
    assert cfg.feature_sets() == ("gaze", "pyeeg", "csp15", "srp", "fusion")
    assert cfg.splits() == ("within_user", "cross_user")
