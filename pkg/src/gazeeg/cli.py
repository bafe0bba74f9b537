"""Command-line entry point: synth, gaze, eeg, features, train, eval, report, all."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__, evaluation, learn
from .config import PipelineConfig
from .dataset import load_recording
from .eeg import EegMatrix, epoch_fixations, epoch_srp, load_epochs, preprocess, save_epochs
from .errors import ConfigError, GazeegError
from .features import csp_fit, csp_transform, pyeeg_features, srp_features
from .gaze import Geometry, detect_fixations, fixations_to_rows
from .synth import generate

log = logging.getLogger("gazeeg")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _write_provenance(out_dir: Path, cfg: PipelineConfig) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg.dump(out_dir / "effective_config.txt")


def _load_cfg(args) -> PipelineConfig:
    cfg = PipelineConfig.load(getattr(args, "config", None))
    if getattr(args, "seed", None) is not None:
        cfg.set("seed", args.seed)
    if getattr(args, "jobs", None) is not None:
        cfg.set("jobs", args.jobs)
    return cfg


def _timed(stage: str):
    class _Timer:
        def __enter__(self):
            self.t0 = time.perf_counter()
            log.info("%s: started", stage)
            return self

        def __exit__(self, *exc):
            log.info("%s: finished in %.2f s", stage, time.perf_counter() - self.t0)
    return _Timer()


def cmd_synth(args) -> int:
    cfg = _load_cfg(args)
    out = Path(args.out)
    with _timed("synth"):
        paths = generate(cfg.synth_config(), out)
    _write_provenance(out, cfg)
    log.info("wrote %d participant directories under %s", len(paths), out)
    return EXIT_OK


def cmd_gaze(args) -> int:
    cfg = PipelineConfig.load(args.params)
    rec = load_recording(args.in_dir)
    with _timed("gaze"):
        fixations, saccades = detect_fixations(rec.gaze, cfg.ivt_params(),
                                               Geometry.of(rec), rec.events)
    rows = fixations_to_rows(fixations, saccades)
    pd.DataFrame(rows).to_csv(args.out, index=False, float_format="%.6g")
    log.info("wrote %d events to %s", len(rows), args.out)
    return EXIT_OK


def cmd_eeg(args) -> int:
    cfg = _load_cfg(args)
    rec = load_recording(args.in_dir)
    with _timed("eeg"):
        fixations, saccades = detect_fixations(rec.gaze, cfg.ivt_params(),
                                               Geometry.of(rec), rec.events)
        labeled = evaluation.label_fixations(fixations, rec.events,
                                             rec.participant_id,
                                             cfg["eval.include_unfound"])
        clean, info = preprocess(EegMatrix.from_recording(rec),
                                 n_lags=cfg["eeg.n_lags"],
                                 corr_threshold=cfg["eeg.corr_threshold"],
                                 ocular_corr_threshold=cfg["eeg.ocular_corr_threshold"],
                                 kurtosis_threshold=cfg["eeg.kurtosis_threshold"],
                                 run_sobi=cfg["eeg.run_sobi"])
        epochs = []
        sacc_by_offset = {round(s.offset_ms, 3): s for s in saccades}
        for lf in labeled:
            eps, _ = epoch_fixations(clean, [lf.fixation], rec.participant_id)
            for ep in eps:
                ep.label, ep.trial_id, ep.scene_domain = \
                    lf.label, lf.trial, lf.scene_domain
                epochs.append(ep)
            sac = sacc_by_offset.get(round(lf.fixation.onset_ms, 3))
            if sac is not None:
                srp_eps, _ = epoch_srp(clean, [sac],
                                       cfg["features.srp_length_ms"],
                                       rec.participant_id)
                for ep in srp_eps:
                    ep.label, ep.trial_id, ep.scene_domain = \
                        lf.label, lf.trial, lf.scene_domain
                    epochs.append(ep)
    save_epochs(args.out, epochs, clean.channels, clean.fs,
                provenance={"bad_channels": info.bad_channels,
                            "rejected_components": info.rejected_components,
                            "sobi_converged": info.sobi_converged,
                            "seed": cfg["seed"]})
    log.info("wrote %d epochs to %s", len(epochs), args.out)
    return EXIT_OK


def cmd_features(args) -> int:
    cfg = _load_cfg(args)
    epochs, channels, fs, _prov = load_epochs(args.epochs)
    fix_epochs = [e for e in epochs if e.kind == "fixation"]
    srp_epochs = [e for e in epochs if e.kind == "srp"]
    with _timed("features"):
        vectors = []
        blocks = evaluation.fusion_blocks(args.set)
        csp_model = None
        if "csp15" in blocks:
            # standalone tool fits CSP on everything it is given; the eval
            # harness refits per training fold instead
            csp_model = csp_fit(fix_epochs, cfg["features.csp_components"])
        srp_by_key = {(e.trial_id, e.participant_id): e for e in srp_epochs}
        for e in fix_epochs:
            parts = []
            ok = True
            for b in blocks:
                if b == "gaze":
                    from .features import FeatureVector
                    parts.append(FeatureVector(np.array([e.duration_ms]),
                                               ["fix_dur_ms"], e.label))
                elif b == "pyeeg":
                    parts.append(pyeeg_features(e, fs, channels,
                                                cfg["features.higuchi_kmax"]))
                elif b == "csp15":
                    parts.append(csp_transform(csp_model, e))
                elif b == "srp":
                    se = srp_by_key.get((e.trial_id, e.participant_id))
                    if se is None:
                        ok = False
                        break
                    parts.append(srp_features(se, fs, channels))
                else:
                    raise ConfigError(f"unknown feature set {b!r}")
            if ok:
                v = learn.fuse(*parts) if len(parts) > 1 else parts[0]
                vectors.append((e, v))
    if not vectors:
        raise GazeegError("no feature vectors produced")
    schema = vectors[0][1].schema
    rows = []
    for e, v in vectors:
        row = {"label": e.label, "participant": e.participant_id,
               "trial": e.trial_id, "domain": e.scene_domain}
        row.update(dict(zip(schema, v.values)))
        rows.append(row)
    pd.DataFrame(rows).to_csv(args.out, index=False, float_format="%.9g")
    log.info("wrote %d x %d feature matrix to %s", len(rows), len(schema), args.out)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    df = pd.read_csv(args.features)
    meta_cols = [c for c in ("label", "participant", "trial", "domain")
                 if c in df.columns]
    schema = [c for c in df.columns if c not in meta_cols]
    X = df[schema].to_numpy(float)
    y = df["label"].astype(str).to_numpy()
    with _timed("train"):
        scaler = learn.fit_scaler(X)
        Xs = scaler.apply(X)
        grid = None if args.grid == "default" else None
        best, table = learn.grid_search(Xs, y, folds=cfg["learn.inner_folds"],
                                        seed=cfg["seed"], grid=grid,
                                        tol=cfg["learn.tol"],
                                        max_passes=cfg["learn.max_passes"])
        model = learn.svm_fit(Xs, y, best, tol=cfg["learn.tol"],
                              max_passes=cfg["learn.max_passes"],
                              schema=schema, scaler=None)
    model.scaler = scaler
    model.schema = schema
    payload = model.to_json()
    payload["cv_table"] = [
        {k: r[k] for k in ("kernel", "C", "gamma", "mean_accuracy")} for r in table]
    Path(args.out).write_text(json.dumps(payload, indent=1) + "\n")
    log.info("selected %s C=%s gamma=%s", best.kernel, best.C, best.gamma)
    return EXIT_OK


def _load_records(data_dirs, cfg: PipelineConfig):
    records = []
    fs = None
    channels = None
    for d in data_dirs:
        d = Path(d)
        session_dirs = [d] if (d / "meta.json").exists() else \
            sorted(p for p in d.iterdir() if (p / "meta.json").exists())
        for sdir in session_dirs:
            rec = load_recording(sdir)
            records.extend(evaluation.prepare_recording(
                rec, cfg.ivt_params(), n_lags=cfg["eeg.n_lags"],
                run_sobi=cfg["eeg.run_sobi"],
                include_unfound=cfg["eval.include_unfound"],
                srp_length_ms=cfg["features.srp_length_ms"]))
            fs = rec.eeg.rate_hz
            channels = rec.eeg.channels
    return records, fs, channels


def cmd_eval(args) -> int:
    cfg = _load_cfg(args)
    if args.features:
        cfg.set("eval.feature_sets", args.features)
    if args.conditions:
        cfg.set("eval.conditions", args.conditions)
    out = Path(args.out)
    with _timed("prepare"):
        records, fs, channels = _load_records(args.data, cfg)
    if not records:
        raise GazeegError("no labeled samples found in the input data")
    wanted = None if cfg["eval.conditions"] == "all" else \
        {s.strip() for s in str(cfg["eval.conditions"]).split(",")}
    results = []
    with _timed("eval"):
        for split in cfg.splits():
            for cond in evaluation.canonical_conditions(split):
                if wanted is not None and cond.name not in wanted:
                    continue
                for fset in cfg.feature_sets():
                    results.append(evaluation.run_condition(
                        records, cond, fset, fs, channels,
                        k=cfg["eval.k_folds"], seed=cfg["seed"],
                        inner_folds=cfg["learn.inner_folds"],
                        n_jobs=cfg["jobs"]))
    evaluation.report(results, out, svg=args.svg)
    _write_provenance(out, cfg)
    log.info("wrote report with %d rows to %s", len(results), out)
    return EXIT_OK


def cmd_report(args) -> int:
    payload = json.loads(Path(args.report_json).read_text())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = payload["rows"]
    if not rows:
        raise GazeegError("nothing to report")
    pd.DataFrame(rows).to_csv(out / "report.csv", index=False)
    (out / "report.json").write_text(json.dumps(payload, indent=1) + "\n")
    log.info("re-rendered report with %d rows to %s", len(rows), out)
    return EXIT_OK


def cmd_all(args) -> int:
    cfg = _load_cfg(args)
    out = Path(args.out)
    data_dir = out / "data"
    with _timed("all"):
        generate(cfg.synth_config(), data_dir)
        ns = argparse.Namespace(config=getattr(args, "config", None),
                                seed=cfg["seed"], jobs=cfg["jobs"],
                                data=[data_dir], out=out / "report",
                                features=None, conditions=None, svg=args.svg)
        cmd_eval(ns)
    _write_provenance(out, cfg)
    return EXIT_OK


def build_parser() -> _Parser:
    p = _Parser(prog="gazeeg",
                description="Target vs. non-target fixation classification pipeline")
    p.add_argument("--version", action="version", version=f"gazeeg {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", default=None)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--jobs", type=int, default=None)

    sp = sub.add_parser("synth", help="generate synthetic recordings")
    common(sp)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("gaze", help="detect fixations/saccades")
    sp.add_argument("--in", dest="in_dir", required=True)
    sp.add_argument("--params", default=None)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_gaze)

    sp = sub.add_parser("eeg", help="clean EEG and extract epochs")
    common(sp)
    sp.add_argument("--in", dest="in_dir", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_eeg)

    sp = sub.add_parser("features", help="compute feature vectors from epochs")
    common(sp)
    sp.add_argument("--epochs", required=True)
    sp.add_argument("--set", required=True,
                    help="gaze|pyeeg|csp15|srp|fusion|fusion:a+b")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_features)

    sp = sub.add_parser("train", help="grid-search and train an SVM")
    common(sp)
    sp.add_argument("--features", required=True)
    sp.add_argument("--grid", default="default")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="run evaluation conditions")
    common(sp)
    sp.add_argument("--data", nargs="+", required=True)
    sp.add_argument("--conditions", default=None)
    sp.add_argument("--features", default=None)
    sp.add_argument("--out", required=True)
    sp.add_argument("--svg", action="store_true")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("report", help="re-render a saved report")
    sp.add_argument("--report-json", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_report)

    sp = sub.add_parser("all", help="synth -> eval -> report")
    common(sp)
    sp.add_argument("--out", required=True)
    sp.add_argument("--svg", action="store_true")
    sp.set_defaults(func=cmd_all)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("invalid configuration: %s", exc)
        return EXIT_USAGE
    except GazeegError as exc:
        log.error("%s", exc)
        return EXIT_RUNTIME
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
