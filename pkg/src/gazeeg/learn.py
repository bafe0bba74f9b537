"""Scaling, early fusion, two-class SVM (SMO solver), and grid search."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DuplicateFeatureName, OneClassOnly
from .features import FeatureVector

C_GRID = (0.1, 1.0, 10.0)
GAMMA_GRID = (0.1, 1.0, "scale", "auto")
KERNEL_ORDER = ("linear", "poly", "rbf")

DEFAULT_TOL = 1e-3
DEFAULT_MAX_PASSES = 100_000
# below this training-set size a final exact pair-polish pass is cheap and
# tightens KKT residuals well past the guaranteed tolerance
POLISH_MAX_N = 60


@dataclass(frozen=True)
class SvmSpec:
    kernel: str = "rbf"
    C: float = 1.0
    gamma: float | str = "scale"  # rbf only; poly always resolves "scale"
    degree: int = 3
    coef0: float = 1.0

    def __post_init__(self):
        if self.kernel not in KERNEL_ORDER:
            raise ValueError(f"unknown kernel {self.kernel!r}")
        if self.C <= 0:
            raise ValueError("C must be positive")


def resolve_gamma(gamma: float | str, X: np.ndarray) -> float:
    d = X.shape[1]
    if gamma == "scale":
        var = float(X.var())
        return 1.0 / (d * var) if var > 0 else 1.0 / d
    if gamma == "auto":
        return 1.0 / d
    g = float(gamma)
    if g <= 0:
        raise ValueError("gamma must resolve to a positive real")
    return g


def kernel_matrix(spec: SvmSpec, X: np.ndarray, Z: np.ndarray,
                  gamma: float) -> np.ndarray:
    if spec.kernel == "linear":
        return X @ Z.T
    if spec.kernel == "poly":
        return (gamma * (X @ Z.T) + spec.coef0) ** spec.degree
    sq = (np.sum(X ** 2, axis=1)[:, None] + np.sum(Z ** 2, axis=1)[None, :]
          - 2.0 * X @ Z.T)
    return np.exp(-gamma * np.maximum(sq, 0.0))


# --- min-max scaling ---

@dataclass
class Scaler:
    min_: np.ndarray
    max_: np.ndarray
    clip: tuple[float, float] = (-0.5, 1.5)

    def apply(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, float))
        span = self.max_ - self.min_
        out = np.zeros_like(X)
        nz = span > 0
        out[:, nz] = (X[:, nz] - self.min_[nz]) / span[nz]
        return np.clip(out, *self.clip)


def fit_scaler(X: np.ndarray) -> Scaler:
    """Per-feature min/max from training rows; constant features map to 0."""
    X = np.atleast_2d(np.asarray(X, float))
    return Scaler(X.min(axis=0), X.max(axis=0))


def apply_scaler(scaler: Scaler, X: np.ndarray) -> np.ndarray:
    return scaler.apply(X)


def fuse(*vectors: FeatureVector) -> FeatureVector:
    """Early fusion: schema-checked concatenation of per-modality blocks."""
    schema: list[str] = []
    seen: set[str] = set()
    for v in vectors:
        for name in v.schema:
            if name in seen:
                raise DuplicateFeatureName(name)
            seen.add(name)
        schema.extend(v.schema)
    values = np.concatenate([v.values for v in vectors])
    first = vectors[0]
    return FeatureVector(values, schema, label=first.label, groups=first.groups)


# --- SMO solver ---

def _smo(K: np.ndarray, y: np.ndarray, C: float, tol: float,
         max_passes: int, track_objective: bool = False, polish: bool = True):
    """Platt-style sequential minimal optimization on a precomputed kernel.

    Returns (alpha, b, converged, objective_history).
    """
    n = len(y)
    alpha = np.zeros(n)
    b = 0.0
    # error cache: E_i = f(x_i) - y_i
    errors = -y.astype(float)
    history: list[float] = []
    step_eps = 1e-9

    def objective() -> float:
        ay = alpha * y
        return float(alpha.sum() - 0.5 * ay @ K @ ay)

    def take_step(i1: int, i2: int) -> bool:
        nonlocal b, errors
        if i1 == i2:
            return False
        a1, a2 = alpha[i1], alpha[i2]
        y1, y2 = y[i1], y[i2]
        e1, e2 = errors[i1], errors[i2]
        s = y1 * y2
        if s > 0:
            lo, hi = max(0.0, a1 + a2 - C), min(C, a1 + a2)
        else:
            lo, hi = max(0.0, a2 - a1), min(C, C + a2 - a1)
        if lo >= hi:
            return False
        k11, k12, k22 = K[i1, i1], K[i1, i2], K[i2, i2]
        eta = k11 + k22 - 2.0 * k12
        if eta > 0:
            a2_new = a2 + y2 * (e1 - e2) / eta
            a2_new = min(max(a2_new, lo), hi)
        else:
            # degenerate curvature: pick the better bound by objective slope
            f1 = y1 * (e1 - b) - a1 * k11 - s * a2 * k12
            f2 = y2 * (e2 - b) - s * a1 * k12 - a2 * k22
            l1 = a1 + s * (a2 - lo)
            h1 = a1 + s * (a2 - hi)
            obj_lo = (l1 * f1 + lo * f2 + 0.5 * l1 ** 2 * k11
                      + 0.5 * lo ** 2 * k22 + s * lo * l1 * k12)
            obj_hi = (h1 * f1 + hi * f2 + 0.5 * h1 ** 2 * k11
                      + 0.5 * hi ** 2 * k22 + s * hi * h1 * k12)
            if obj_lo < obj_hi - 1e-12:
                a2_new = lo
            elif obj_lo > obj_hi + 1e-12:
                a2_new = hi
            else:
                return False
        snap = 1e-8 * C
        if a2_new < snap:
            a2_new = 0.0
        elif a2_new > C - snap:
            a2_new = C
        if abs(a2_new - a2) < step_eps * (a2_new + a2 + step_eps):
            return False
        a1_new = a1 + s * (a2 - a2_new)

        b1 = b - e1 - y1 * (a1_new - a1) * k11 - y2 * (a2_new - a2) * k12
        b2 = b - e2 - y1 * (a1_new - a1) * k12 - y2 * (a2_new - a2) * k22
        if 0 < a1_new < C:
            b_new = b1
        elif 0 < a2_new < C:
            b_new = b2
        else:
            b_new = 0.5 * (b1 + b2)

        errors += (y1 * (a1_new - a1) * K[i1]
                   + y2 * (a2_new - a2) * K[i2] + (b_new - b))
        alpha[i1], alpha[i2] = a1_new, a2_new
        b = b_new
        if track_objective:
            history.append(objective())
        return True

    if track_objective:
        history.append(objective())

    converged = _mvp_outer(take_step, K, y, alpha, errors, C, tol, max_passes)
    if polish and n <= POLISH_MAX_N:
        # exact pairwise polish: tightens KKT far below tol on small problems
        step_eps = 1e-12
        for _ in range(200):
            moved = False
            for i in range(n):
                for j in range(i + 1, n):
                    moved |= take_step(i, j)
            if not moved:
                break
    # center the bias between the active up/low KKT bounds
    pos = y > 0
    up = np.where(pos, alpha < C - 1e-12, alpha > 1e-12)
    low = np.where(pos, alpha > 1e-12, alpha < C - 1e-12)
    v = -errors
    if up.any() and low.any():
        shift = 0.5 * (float(np.max(v[up])) + float(np.min(v[low])))
        b += shift
        errors += shift
    return alpha, b, converged, history


def _mvp_outer(take_step, K: np.ndarray, y: np.ndarray, alpha: np.ndarray,
               errors: np.ndarray, C: float, tol: float,
               max_passes: int) -> bool:
    """Maximal-violating-pair working-set selection.

    At the dual optimum max_{I_up} v - min_{I_low} v <= 0 for v = -(f - y)
    (the bias drops out of the difference); each step optimizes the worst
    KKT-violating pair exactly, so the dual objective never decreases.
    """
    n = len(y)
    eps = 1e-8 * C
    tau = 1e-12
    pos = y > 0
    diag = K.diagonal()
    # stall detector: badly conditioned kernels can keep the KKT gap
    # oscillating without progress; give up (flagged) instead of spinning
    best_gap = np.inf
    since_improved = 0
    stall_window = 3000
    for _ in range(max_passes):
        v = -errors  # = y - f; monotone in the negative dual gradient
        up = np.where(pos, alpha < C - eps, alpha > eps)
        low = np.where(pos, alpha > eps, alpha < C - eps)
        if not up.any() or not low.any():
            return True
        vu = np.where(up, v, -np.inf)
        vl = np.where(low, v, np.inf)
        i = int(np.argmax(vu))
        gap = vu[i] - np.min(vl)
        if gap <= 2.0 * tol:
            return True
        if gap < best_gap * 0.999:
            best_gap = gap
            since_improved = 0
        else:
            since_improved += 1
            if since_improved >= stall_window:
                return False
        # second-order partner choice: maximal decrease (gap^2 / curvature),
        # which stays fast when the kernel is badly conditioned
        d = vu[i] - v
        eta = np.maximum(diag[i] + diag - 2.0 * K[i], tau)
        gain = np.where(low & (d > 0), d * d / eta, -np.inf)
        j = int(np.argmax(gain))
        if take_step(i, j):
            continue
        # the best pair cannot move (clipped at a bound); scan the worst
        # violators on each side for the first pair that can
        m = min(32, n)
        ups = np.argsort(-vu)[:m]
        lows = np.argsort(vl)[:m]
        stepped = False
        for i2 in ups:
            if not np.isfinite(vu[i2]):
                break
            for j2 in lows:
                if not np.isfinite(vl[j2]):
                    break
                if vu[i2] - vl[j2] <= 2.0 * tol:
                    break
                if take_step(int(i2), int(j2)):
                    stepped = True
                    break
            if stepped:
                break
        if not stepped:
            return True
    return False


@dataclass
class FittedModel:
    spec: SvmSpec
    support_vectors: np.ndarray
    dual_coef: np.ndarray  # alpha_i * y_i at the support vectors
    bias: float
    gamma_resolved: float
    labels: tuple[str, str]  # (negative, positive); ties predict the negative
    schema: list[str] = field(default_factory=list)
    scaler: Scaler | None = None
    converged: bool = True
    support_idx: np.ndarray | None = None

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, float))
        if self.scaler is not None:
            X = self.scaler.apply(X)
        Kx = kernel_matrix(self.spec, self.support_vectors, X, self.gamma_resolved)
        return self.dual_coef @ Kx + self.bias

    def predict(self, X: np.ndarray) -> np.ndarray:
        d = self.decision_function(X)
        return np.where(d > 0, self.labels[1], self.labels[0])

    def to_json(self) -> dict:
        return {
            "kernel": self.spec.kernel, "C": self.spec.C,
            "gamma": self.spec.gamma if isinstance(self.spec.gamma, str)
            else float(self.spec.gamma),
            "degree": self.spec.degree, "coef0": self.spec.coef0,
            "gamma_resolved": self.gamma_resolved,
            "bias": self.bias,
            "labels": list(self.labels),
            "support_vectors": self.support_vectors.tolist(),
            "dual_coef": self.dual_coef.tolist(),
            "schema": self.schema,
            "scaler": None if self.scaler is None else
            {"min": self.scaler.min_.tolist(), "max": self.scaler.max_.tolist()},
            "converged": self.converged,
        }

    @classmethod
    def from_json(cls, d: dict) -> "FittedModel":
        spec = SvmSpec(d["kernel"], d["C"], d["gamma"], d["degree"], d["coef0"])
        scaler = None
        if d.get("scaler"):
            scaler = Scaler(np.array(d["scaler"]["min"]), np.array(d["scaler"]["max"]))
        return cls(spec, np.array(d["support_vectors"]), np.array(d["dual_coef"]),
                   d["bias"], d["gamma_resolved"], tuple(d["labels"]),
                   d.get("schema", []), scaler, d.get("converged", True))


def _encode_labels(y) -> tuple[np.ndarray, tuple[str, str]]:
    labels = sorted({str(v) for v in y})
    if len(labels) != 2:
        raise OneClassOnly(f"need exactly 2 classes, got {labels}")
    enc = np.where(np.array([str(v) for v in y]) == labels[1], 1.0, -1.0)
    return enc, (labels[0], labels[1])


def svm_fit(X: np.ndarray, y, spec: SvmSpec, tol: float = DEFAULT_TOL,
            max_passes: int = DEFAULT_MAX_PASSES, schema: list[str] | None = None,
            scaler: Scaler | None = None,
            precomputed_kernel: np.ndarray | None = None,
            track_objective: bool = False) -> FittedModel:
    """Train a soft-margin SVM by sequential minimal optimization."""
    X = np.atleast_2d(np.asarray(X, float))
    enc, labels = _encode_labels(y)
    gamma = resolve_gamma(spec.gamma if spec.kernel == "rbf" else "scale", X)
    K = precomputed_kernel if precomputed_kernel is not None \
        else kernel_matrix(spec, X, X, gamma)
    alpha, b, converged, history = _smo(K, enc, spec.C, tol, max_passes,
                                        track_objective)
    sv = alpha > 1e-8
    model = FittedModel(spec, X[sv].copy(), (alpha * enc)[sv], float(b), gamma,
                        labels, schema or [], scaler, converged,
                        np.where(sv)[0])
    model.objective_history = history
    return model


def predict(model: FittedModel, X: np.ndarray) -> np.ndarray:
    """Class labels by decision-function sign; exact zero goes negative."""
    return model.predict(X)


# --- stratified k-fold and grid search ---

def stratified_kfold(y, k: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Index arrays of k folds with per-class round-robin assignment."""
    y = np.asarray([str(v) for v in y])
    folds: list[list[int]] = [[] for _ in range(k)]
    for lab in sorted(set(y)):
        idx = np.where(y == lab)[0]
        idx = idx[rng.permutation(len(idx))]
        for j, i in enumerate(idx):
            folds[j % k].append(int(i))
    return [np.array(sorted(f), dtype=int) for f in folds]


def default_grid() -> list[SvmSpec]:
    grid = [SvmSpec("linear", c, "scale") for c in C_GRID]
    grid += [SvmSpec("poly", c, "scale") for c in C_GRID]
    grid += [SvmSpec("rbf", c, g) for c in C_GRID for g in GAMMA_GRID]
    return grid


def _tie_break_key(spec: SvmSpec, X: np.ndarray):
    return (spec.C, KERNEL_ORDER.index(spec.kernel),
            resolve_gamma(spec.gamma if spec.kernel == "rbf" else "scale", X))


def grid_search(X: np.ndarray, y, folds: int = 5, seed: int = 0,
                grid: list[SvmSpec] | None = None,
                tol: float = DEFAULT_TOL,
                max_passes: int = DEFAULT_MAX_PASSES,
                ) -> tuple[SvmSpec, list[dict]]:
    """Stratified k-fold CV over the kernel x C x gamma grid on train data only.

    Ties on mean accuracy break toward lower C, then kernel order
    linear < poly < rbf, then smaller resolved gamma.
    """
    X = np.atleast_2d(np.asarray(X, float))
    y = np.asarray([str(v) for v in y])
    grid = grid if grid is not None else default_grid()
    rng = np.random.default_rng(seed)
    fold_idx = stratified_kfold(y, folds, rng)
    all_idx = np.arange(len(y))

    accs = {i: [] for i in range(len(grid))}
    for f in fold_idx:
        test_mask = np.zeros(len(y), bool)
        test_mask[f] = True
        tr, te = all_idx[~test_mask], all_idx[test_mask]
        if len(te) == 0 or len(set(y[tr])) < 2:
            continue
        # one kernel matrix per (kernel, resolved gamma); reused across C
        kcache: dict = {}
        for gi, spec in enumerate(grid):
            gamma = resolve_gamma(spec.gamma if spec.kernel == "rbf" else "scale",
                                  X[tr])
            key = (spec.kernel, spec.degree, spec.coef0, round(gamma, 15))
            if key not in kcache:
                kcache[key] = (kernel_matrix(spec, X[tr], X[tr], gamma),
                               kernel_matrix(spec, X[tr], X[te], gamma))
            Ktr, Kte = kcache[key]
            enc, labels = _encode_labels(y[tr])
            alpha, b, _, _ = _smo(Ktr, enc, spec.C, tol, max_passes,
                                  polish=False)
            dec = (alpha * enc) @ Kte + b
            pred = np.where(dec > 0, labels[1], labels[0])
            accs[gi].append(float(np.mean(pred == y[te])))

    table = []
    for gi, spec in enumerate(grid):
        mean = float(np.mean(accs[gi])) if accs[gi] else 0.0
        table.append({"kernel": spec.kernel, "C": spec.C,
                      "gamma": spec.gamma, "fold_accuracies": accs[gi],
                      "mean_accuracy": mean})
    best_mean = max(r["mean_accuracy"] for r in table)
    candidates = [grid[i] for i, r in enumerate(table)
                  if r["mean_accuracy"] >= best_mean - 1e-12]
    best = min(candidates, key=lambda s: _tie_break_key(s, X))
    return best, table
