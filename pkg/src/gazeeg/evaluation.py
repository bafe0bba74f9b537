"""Labeled-dataset construction and the within-/cross-user evaluation harness.

Ground truth: per clicked trial, the first fixation whose centroid lies
inside the (closed, buffered) target bounding box is the target; all
earlier fixations in the trial are non-targets; later fixations are
discarded. Non-targets are randomly sub-sampled to balance classes, so
the chance baseline is 0.5 everywhere.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed

from . import learn
from .dataset import Recording, TrialEvent
from .eeg import EegMatrix, Epoch, epoch_fixations, epoch_srp, preprocess
from .errors import NothingToReport, TooFewSamples
from .features import csp_fit, csp_transform, pyeeg_features, srp_features
from .gaze import Fixation, IvtParams, Geometry, detect_fixations

TARGET, NONTARGET = "target", "nontarget"

# (name, train domains, test domain); 'both' means no test-side filter
SEVEN_CONDITIONS: list[tuple[str, tuple[str, ...], str]] = [
    ("both->both", ("workshop", "desktop"), "both"),
    ("W->W", ("workshop",), "workshop"),
    ("D->W", ("desktop",), "workshop"),
    ("W+D->W", ("workshop", "desktop"), "workshop"),
    ("D->D", ("desktop",), "desktop"),
    ("W->D", ("workshop",), "desktop"),
    ("W+D->D", ("workshop", "desktop"), "desktop"),
]

FEATURE_SETS = ("gaze", "pyeeg", "csp15", "srp", "fusion")
FUSION_DEFAULT_BLOCKS = ("csp15", "gaze")

# headline numbers reported by the study this pipeline reproduces; attached
# to reports as annotations, not reproducible on synthetic data
REFERENCE_ACCURACIES = {
    "cross_user.fusion": 0.836,
    "cross_user.srp": 0.569,
    "within_user.fusion": 0.789,
    "within_user.gaze": 0.708,
    "within_user.csp15": 0.725,
    "within_user.pyeeg": 0.521,
}


@dataclass(frozen=True)
class Condition:
    split: str  # within_user | cross_user
    name: str
    train_domains: tuple[str, ...]
    test_domain: str  # workshop | desktop | both

    def __post_init__(self):
        if self.split not in ("within_user", "cross_user"):
            raise ValueError(f"unknown split {self.split!r}")


def canonical_conditions(split: str) -> list[Condition]:
    return [Condition(split, name, tr, te) for name, tr, te in SEVEN_CONDITIONS]


@dataclass
class LabeledFixation:
    fixation: Fixation
    label: str
    participant: str
    trial: int
    scene_domain: str


@dataclass
class SampleRecord:
    """One labeled fixation with everything feature extraction needs."""

    labeled: LabeledFixation
    epoch: Epoch
    srp_epoch: Epoch | None
    _pyeeg_cache: np.ndarray | None = field(default=None, repr=False)

    @property
    def label(self) -> str:
        return self.labeled.label

    @property
    def participant(self) -> str:
        return self.labeled.participant

    @property
    def domain(self) -> str:
        return self.labeled.scene_domain


def _in_bbox(centroid: tuple[float, float], bbox) -> bool:
    x0, y0, x1, y1 = bbox
    return x0 <= centroid[0] <= x1 and y0 <= centroid[1] <= y1


def label_fixations(fixations: list[Fixation], events: list[TrialEvent],
                    participant: str = "",
                    include_unfound: bool = False) -> list[LabeledFixation]:
    """Assign target/nontarget labels per trial; see module docstring."""
    by_trial: dict[int, list[Fixation]] = {}
    for f in fixations:
        if f.trial_id is not None:
            by_trial.setdefault(f.trial_id, []).append(f)
    ev_by_id = {ev.trial_id: ev for ev in events}
    out: list[LabeledFixation] = []
    for trial_id in sorted(by_trial):
        ev = ev_by_id.get(trial_id)
        if ev is None or ev.outcome != "clicked":
            continue
        fixs = sorted(by_trial[trial_id], key=lambda f: f.onset_ms)
        hit = next((i for i, f in enumerate(fixs)
                    if _in_bbox(f.centroid_px, ev.target_bbox)), None)
        if hit is None:
            if include_unfound:
                out.extend(LabeledFixation(f, NONTARGET, participant, trial_id,
                                           ev.scene_domain) for f in fixs)
            continue
        for i, f in enumerate(fixs[:hit]):
            out.append(LabeledFixation(f, NONTARGET, participant, trial_id,
                                       ev.scene_domain))
        out.append(LabeledFixation(fixs[hit], TARGET, participant, trial_id,
                                   ev.scene_domain))
    return out


def balance(indices: np.ndarray, labels: np.ndarray,
            rng: np.random.Generator) -> np.ndarray:
    """Uniform random subsample of the majority class to match the minority."""
    indices = np.asarray(indices)
    labels = np.asarray(labels)
    classes = sorted(set(labels.tolist()))
    if len(classes) < 2:
        return indices
    per_class = {c: indices[labels == c] for c in classes}
    n_min = min(len(v) for v in per_class.values())
    kept = []
    for c in classes:
        idx = per_class[c]
        if len(idx) > n_min:
            idx = idx[rng.choice(len(idx), size=n_min, replace=False)]
        kept.append(idx)
    return np.sort(np.concatenate(kept))


def prepare_recording(rec: Recording, ivt_params: IvtParams | None = None,
                      n_lags: int = 50, run_sobi: bool = True,
                      include_unfound: bool = False,
                      srp_length_ms: float = 1000.0) -> list[SampleRecord]:
    """Full per-recording pipeline: detect, label, clean, epoch."""
    params = ivt_params or IvtParams()
    geometry = Geometry.of(rec)
    fixations, saccades = detect_fixations(rec.gaze, params, geometry, rec.events)
    labeled = label_fixations(fixations, rec.events, rec.participant_id,
                              include_unfound)
    clean, _info = preprocess(EegMatrix.from_recording(rec), n_lags=n_lags,
                              run_sobi=run_sobi)

    sacc_by_offset = {round(s.offset_ms, 3): s for s in saccades}
    records: list[SampleRecord] = []
    for lf in labeled:
        eps, skipped = epoch_fixations(clean, [lf.fixation], rec.participant_id)
        if skipped or not eps:
            continue
        ep = eps[0]
        ep.label = lf.label
        ep.trial_id = lf.trial
        ep.scene_domain = lf.scene_domain
        srp_ep = None
        sac = sacc_by_offset.get(round(lf.fixation.onset_ms, 3))
        if sac is not None:
            srp_eps, _ = epoch_srp(clean, [sac], srp_length_ms, rec.participant_id)
            if srp_eps:
                srp_ep = srp_eps[0]
                srp_ep.label = lf.label
                srp_ep.trial_id = lf.trial
                srp_ep.scene_domain = lf.scene_domain
        records.append(SampleRecord(lf, ep, srp_ep))
    return records


def fusion_blocks(feature_set: str) -> list[str]:
    """Block list for a feature-set name; 'fusion:a+b' selects blocks."""
    if feature_set.startswith("fusion:"):
        return feature_set.split(":", 1)[1].split("+")
    if feature_set == "fusion":
        return list(FUSION_DEFAULT_BLOCKS)
    return [feature_set]


def _pyeeg_row(rec: SampleRecord, fs: float, channels: list[str]) -> np.ndarray:
    if rec._pyeeg_cache is None:
        rec._pyeeg_cache = pyeeg_features(rec.epoch, fs, channels).values
    return rec._pyeeg_cache


def build_fold_features(records: list[SampleRecord], train_idx: np.ndarray,
                        test_idx: np.ndarray, feature_set: str, fs: float,
                        channels: list[str], n_csp: int = 15,
                        ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray,
                                   np.ndarray, np.ndarray]:
    """Leak-free per-fold features: CSP and scalers are fit on train rows only.

    Returns (X_train, y_train, X_test, y_test, kept_train_idx, kept_test_idx);
    rows lacking a required SRP epoch are dropped from both sides.
    """
    blocks = fusion_blocks(feature_set)
    if "srp" in blocks:
        train_idx = np.array([i for i in train_idx if records[i].srp_epoch is not None])
        test_idx = np.array([i for i in test_idx if records[i].srp_epoch is not None])

    def block_matrix(name: str, idx: np.ndarray, csp_model) -> np.ndarray:
        rows = []
        for i in idx:
            r = records[i]
            if name == "gaze":
                rows.append([r.labeled.fixation.duration_ms])
            elif name == "pyeeg":
                rows.append(_pyeeg_row(r, fs, channels))
            elif name == "csp15":
                rows.append(csp_transform(csp_model, r.epoch).values)
            elif name == "srp":
                rows.append(srp_features(r.srp_epoch, fs, channels).values)
            else:
                raise ValueError(f"unknown feature block {name!r}")
        return np.array(rows, float)

    xtr_blocks, xte_blocks = [], []
    for name in blocks:
        csp_model = None
        if name == "csp15":
            csp_model = csp_fit([records[i].epoch for i in train_idx], n_csp)
        btr = block_matrix(name, train_idx, csp_model)
        bte = block_matrix(name, test_idx, csp_model)
        scaler = learn.fit_scaler(btr)
        xtr_blocks.append(scaler.apply(btr))
        xte_blocks.append(scaler.apply(bte))
    X_train = np.hstack(xtr_blocks)
    X_test = np.hstack(xte_blocks)
    y_train = np.array([records[i].label for i in train_idx])
    y_test = np.array([records[i].label for i in test_idx])
    return X_train, y_train, X_test, y_test, train_idx, test_idx


def make_splits(records: list[SampleRecord], condition: Condition, k: int = 10,
                seed: int = 0, min_targets: int = 10,
                ) -> list[tuple[np.ndarray, np.ndarray, str | None]]:
    """(train indices, test indices, participant-or-None) per fold.

    Domain filters are applied to each side; both sides are balanced
    independently with seeded subsampling.
    """
    rng = np.random.default_rng(seed)
    labels = np.array([r.label for r in records])
    domains = np.array([r.domain for r in records])
    participants = np.array([r.participant for r in records])
    all_idx = np.arange(len(records))

    def domain_mask(which: str | tuple[str, ...]) -> np.ndarray:
        if which == "both":
            return np.ones(len(records), bool)
        if isinstance(which, str):
            which = (which,)
        return np.isin(domains, which)

    train_mask = domain_mask(condition.train_domains)
    test_mask = domain_mask(condition.test_domain)
    splits: list[tuple[np.ndarray, np.ndarray, str | None]] = []

    if condition.split == "cross_user":
        users = sorted(set(participants.tolist()))
        order = rng.permutation(len(users))
        groups: list[list[str]] = [[] for _ in range(min(k, len(users)))]
        for j, ui in enumerate(order):
            groups[j % len(groups)].append(users[ui])
        for g in groups:
            te_users = np.isin(participants, g)
            tr = all_idx[~te_users & train_mask]
            te = all_idx[te_users & test_mask]
            tr = balance(tr, labels[tr], rng)
            te = balance(te, labels[te], rng)
            if len(tr) and len(te):
                splits.append((tr, te, None))
        return splits

    # within_user: balanced stratified folds per participant
    for user in sorted(set(participants.tolist())):
        u_idx = all_idx[(participants == user) & (train_mask | test_mask)]
        n_targets = int(np.sum(labels[u_idx] == TARGET))
        if n_targets < min_targets:
            continue
        u_idx = balance(u_idx, labels[u_idx], rng)
        folds = learn.stratified_kfold(labels[u_idx], k, rng)
        for f in folds:
            te = u_idx[f]
            tr = np.setdiff1d(u_idx, te)
            tr = tr[train_mask[tr]]
            te = te[test_mask[te]]
            if len(tr) and len(te):
                splits.append((tr, te, user))
    if not splits:
        raise TooFewSamples("no usable folds for this condition")
    return splits


@dataclass
class ConditionResult:
    condition: Condition
    feature_set: str
    fold_accuracies: list[float]
    mean_accuracy: float
    ci95: float
    n_train: int
    n_test: int
    chosen_specs: list[dict]
    seed: int
    participants_skipped: int = 0

    def to_row(self) -> dict:
        return {
            "split": self.condition.split,
            "condition": self.condition.name,
            "feature_set": self.feature_set,
            "n_folds": len(self.fold_accuracies),
            "mean_accuracy": self.mean_accuracy,
            "ci95": self.ci95,
            "n_train": self.n_train,
            "n_test": self.n_test,
            "seed": self.seed,
            "fold_accuracies": ";".join(f"{a:.6f}" for a in self.fold_accuracies),
            "chosen_specs": json.dumps(self.chosen_specs),
        }


def _mean_ci(values: list[float]) -> tuple[float, float]:
    arr = np.asarray(values, float)
    mean = float(arr.mean())
    if len(arr) < 2:
        return mean, 0.0
    return mean, float(1.96 * arr.std(ddof=1) / np.sqrt(len(arr)))


def _run_fold(records, tr, te, feature_set, fs, channels, grid, inner_folds,
              fold_seed):
    X_tr, y_tr, X_te, y_te, tr, te = build_fold_features(
        records, tr, te, feature_set, fs, channels)
    if len(set(y_tr)) < 2 or len(y_te) == 0:
        return None
    best, _table = learn.grid_search(X_tr, y_tr, folds=inner_folds,
                                     seed=fold_seed, grid=grid)
    model = learn.svm_fit(X_tr, y_tr, best)
    acc = float(np.mean(model.predict(X_te) == y_te))
    spec_d = {"kernel": best.kernel, "C": best.C,
              "gamma": best.gamma if isinstance(best.gamma, str) else float(best.gamma)}
    return acc, spec_d, len(y_tr), len(y_te)


def run_condition(records: list[SampleRecord], condition: Condition,
                  feature_set: str, fs: float, channels: list[str],
                  k: int = 10, seed: int = 0, inner_folds: int = 5,
                  grid: list[learn.SvmSpec] | None = None,
                  n_jobs: int = 1) -> ConditionResult:
    """Evaluate one condition x feature set with leak-free per-fold fitting."""
    splits = make_splits(records, condition, k, seed)
    jobs = [(tr, te, user, seed * 100003 + fi)
            for fi, (tr, te, user) in enumerate(splits)]
    results = Parallel(n_jobs=n_jobs)(
        delayed(_run_fold)(records, tr, te, feature_set, fs, channels, grid,
                           inner_folds, fold_seed)
        for tr, te, user, fold_seed in jobs)

    per_user: dict[str | None, list[float]] = {}
    specs = []
    n_train = n_test = 0
    for (tr, te, user, _), res in zip(jobs, results):
        if res is None:
            continue
        acc, spec_d, ntr, nte = res
        per_user.setdefault(user, []).append(acc)
        specs.append(spec_d)
        n_train = max(n_train, ntr)
        n_test += nte

    if not per_user:
        raise TooFewSamples("no fold produced a usable train/test pair")
    if condition.split == "within_user":
        # fold mean per participant, then CI across participants
        user_means = [float(np.mean(v)) for _, v in sorted(per_user.items(),
                                                           key=lambda kv: str(kv[0]))]
        folds = user_means
    else:
        folds = per_user[None]
    mean, ci = _mean_ci(folds)
    return ConditionResult(condition, feature_set, [float(a) for a in folds],
                           mean, ci, n_train, n_test, specs, seed)


def run_evaluation(records: list[SampleRecord], fs: float, channels: list[str],
                   splits: tuple[str, ...] = ("within_user", "cross_user"),
                   feature_sets: tuple[str, ...] = FEATURE_SETS,
                   k: int = 10, seed: int = 0,
                   grid: list[learn.SvmSpec] | None = None,
                   n_jobs: int = 1) -> list[ConditionResult]:
    out = []
    for split in splits:
        for cond in canonical_conditions(split):
            for fset in feature_sets:
                out.append(run_condition(records, cond, fset, fs, channels,
                                         k=k, seed=seed, grid=grid,
                                         n_jobs=n_jobs))
    return out


def report(results: list[ConditionResult], out_dir: str | Path,
           svg: bool = False) -> dict[str, Path]:
    """Write report.csv / report.json (and optional per-condition SVG bars)."""
    if not results:
        raise NothingToReport("empty result list")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = [r.to_row() for r in results]
    csv_path = out_dir / "report.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()),
                                lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    json_path = out_dir / "report.json"
    json_path.write_text(json.dumps({
        "rows": rows,
        "reference_accuracies": REFERENCE_ACCURACIES,
    }, indent=1) + "\n")
    paths = {"csv": csv_path, "json": json_path}
    if svg:
        paths["svg"] = _render_svg(results, out_dir / "report.svg")
    return paths


def _render_svg(results: list[ConditionResult], path: Path) -> Path:
    """Minimal grouped bar chart with CI whiskers, one bar per result row."""
    width_per_bar, h = 60, 300
    margin = 50
    w = margin * 2 + width_per_bar * len(results)
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h + 80}">']
    parts.append(f'<line x1="{margin}" y1="{h}" x2="{w - margin}" y2="{h}" stroke="black"/>')
    base_y = h
    for i, r in enumerate(results):
        x = margin + i * width_per_bar + 10
        bar_h = r.mean_accuracy * (h - 40)
        ci_h = r.ci95 * (h - 40)
        parts.append(f'<rect x="{x}" y="{base_y - bar_h:.1f}" width="40" '
                     f'height="{bar_h:.1f}" fill="#4878a8"/>')
        cx = x + 20
        parts.append(f'<line x1="{cx}" y1="{base_y - bar_h - ci_h:.1f}" '
                     f'x2="{cx}" y2="{base_y - bar_h + ci_h:.1f}" stroke="black"/>')
        label = f"{r.condition.name}/{r.feature_set}"
        parts.append(f'<text x="{cx}" y="{base_y + 15}" font-size="8" '
                     f'text-anchor="middle">{label}</text>')
        parts.append(f'<text x="{cx}" y="{base_y - bar_h - ci_h - 4:.1f}" '
                     f'font-size="9" text-anchor="middle">'
                     f'{r.mean_accuracy:.3f}</text>')
    parts.append("</svg>")
    path.write_text("\n".join(parts) + "\n")
    return path
