"""Feature extraction: per-channel spectral/complexity features, common
spatial patterns, saccade-locked potential vectors, and the fixation
duration feature."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .eeg import Epoch
from .errors import (DegenerateSignal, EpochTooShort, OneClassOnly,
                     SingularCovariance)
from .gaze import Fixation

BANDS = {
    "delta": (0.5, 4.0),
    "theta": (4.0, 7.0),
    "alpha": (7.0, 12.0),
    "beta": (12.0, 30.0),
    "gamma": (30.0, 40.0),
}
BAND_NAMES = list(BANDS.keys())

PYEEG_NAMES = BAND_NAMES + ["pfd", "mobility", "complexity", "higuchi", "dfa",
                            "skew", "kurt", "min", "max", "std"]

MIN_EPOCH_SAMPLES = 16


@dataclass
class FeatureVector:
    """Named, ordered real feature vector with grouping keys."""

    values: np.ndarray
    schema: list[str]
    label: str | None = None
    groups: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, float)
        if self.values.shape != (len(self.schema),):
            raise ValueError("values/schema length mismatch")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("non-finite feature values")

    def __len__(self) -> int:
        return len(self.values)


def band_power(x: np.ndarray, fs: float, bands: dict | None = None) -> np.ndarray:
    """Relative magnitude-spectrum mass per band, normalized over 0.5-40 Hz."""
    bands = bands or BANDS
    x = np.asarray(x, float)
    spec = np.abs(np.fft.rfft(x))
    freqs = np.fft.rfftfreq(len(x), d=1.0 / fs)
    total_lo = min(lo for lo, _ in bands.values())
    total_hi = max(hi for _, hi in bands.values())
    total = spec[(freqs >= total_lo) & (freqs < total_hi)].sum()
    if total <= 0:
        return np.full(len(bands), 1.0 / len(bands))
    out = np.empty(len(bands))
    for i, (lo, hi) in enumerate(bands.values()):
        out[i] = spec[(freqs >= lo) & (freqs < hi)].sum() / total
    return out


def petrosian_fd(x: np.ndarray) -> float:
    """Petrosian fractal dimension from sign changes of the first difference."""
    x = np.asarray(x, float)
    n = len(x)
    if n < 3:
        raise DegenerateSignal("signal too short")
    d = np.diff(x)
    n_delta = int(np.sum(d[1:] * d[:-1] < 0))
    if n_delta == 0:
        return 1.0
    log_n = np.log10(n)
    return log_n / (log_n + np.log10(n / (n + 0.4 * n_delta)))


def hjorth(x: np.ndarray) -> tuple[float, float]:
    """Hjorth mobility and complexity via first-difference variance ratios."""
    x = np.asarray(x, float)
    var_x = np.var(x)
    if var_x == 0:
        raise DegenerateSignal("zero-variance signal")
    d1 = np.diff(x)
    var_d1 = np.var(d1)
    mobility = np.sqrt(var_d1 / var_x)
    if var_d1 == 0:
        raise DegenerateSignal("zero-variance first difference")
    d2 = np.diff(d1)
    mobility_d = np.sqrt(np.var(d2) / var_d1)
    return float(mobility), float(mobility_d / mobility)


def higuchi_fd(x: np.ndarray, kmax: int = 8) -> float:
    """Higuchi fractal dimension: slope of ln L(k) against ln(1/k)."""
    x = np.asarray(x, float)
    n = len(x)
    if kmax < 2:
        raise ValueError("kmax must be >= 2 to fit a slope")
    if n < kmax + 2:
        raise DegenerateSignal("signal too short for kmax")
    lk = np.empty(kmax)
    for k in range(1, kmax + 1):
        lengths = []
        for m in range(k):
            seg = x[m::k]
            nseg = len(seg) - 1
            if nseg < 1:
                continue
            lm = np.sum(np.abs(np.diff(seg))) * (n - 1) / (nseg * k * k)
            lengths.append(lm)
        lk[k - 1] = np.mean(lengths)
    ks = np.arange(1, kmax + 1)
    slope = np.polyfit(np.log(1.0 / ks), np.log(lk), 1)[0]
    return float(slope)


def dfa_alpha(x: np.ndarray, window_sizes: np.ndarray | None = None) -> float:
    """Detrended fluctuation scaling exponent of the integrated signal."""
    x = np.asarray(x, float)
    n = len(x)
    if window_sizes is None:
        upper = max(n // 4, 8)
        window_sizes = np.unique(np.round(
            np.geomspace(4, upper, num=10)).astype(int))
        window_sizes = window_sizes[window_sizes * 2 <= n]
    window_sizes = np.asarray(window_sizes, int)
    if len(window_sizes) < 3:
        raise DegenerateSignal("need at least 3 window sizes for the DFA fit")
    y = np.cumsum(x - x.mean())
    fluct = np.empty(len(window_sizes))
    for i, w in enumerate(window_sizes):
        n_win = n // w
        segs = y[:n_win * w].reshape(n_win, w)
        t = np.arange(w, dtype=float)
        t = t - t.mean()
        denom = float(t @ t)
        means = segs.mean(axis=1, keepdims=True)
        slopes = (segs @ t / denom)[:, None]
        resid = segs - means - slopes * t
        fluct[i] = np.sqrt(np.mean(resid ** 2))
    good = fluct > 0
    if good.sum() < 3:
        raise DegenerateSignal("degenerate fluctuation values")
    slope = np.polyfit(np.log(window_sizes[good]), np.log(fluct[good]), 1)[0]
    return float(slope)


def moments_minmaxstd(x: np.ndarray) -> tuple[float, float, float, float, float]:
    """(skewness, excess kurtosis, min, max, population std)."""
    x = np.asarray(x, float)
    m = x.mean()
    c = x - m
    m2 = np.mean(c ** 2)
    if m2 == 0:
        raise DegenerateSignal("zero-variance signal")
    skew = float(np.mean(c ** 3) / m2 ** 1.5)
    kurt = float(np.mean(c ** 4) / m2 ** 2 - 3.0)
    return skew, kurt, float(x.min()), float(x.max()), float(np.sqrt(m2))


def pyeeg_features(epoch: Epoch, fs: float, channels: list[str],
                   higuchi_kmax: int = 8) -> FeatureVector:
    """15 features per channel, channel-major order."""
    if epoch.n_samples < MIN_EPOCH_SAMPLES:
        raise EpochTooShort(
            f"epoch has {epoch.n_samples} samples, need >= {MIN_EPOCH_SAMPLES}")
    values = []
    schema = []
    for ci, name in enumerate(channels):
        sig = epoch.data[ci]
        bp = band_power(sig, fs)
        mob, comp = hjorth(sig)
        skew, kurt, mn, mx, sd = moments_minmaxstd(sig)
        row = list(bp) + [petrosian_fd(sig), mob, comp,
                          higuchi_fd(sig, higuchi_kmax), dfa_alpha(sig),
                          skew, kurt, mn, mx, sd]
        values.extend(row)
        schema.extend(f"{name}.{f}" for f in PYEEG_NAMES)
    return FeatureVector(np.array(values), schema, label=epoch.label,
                         groups=_groups(epoch))


def _groups(epoch: Epoch) -> dict:
    return {"participant": epoch.participant_id, "trial": epoch.trial_id,
            "domain": epoch.scene_domain}


@dataclass
class CspModel:
    """Spatial filters from the two-class generalized eigenproblem."""

    filters: np.ndarray      # (n_components, n_channels)
    eigenvalues: np.ndarray  # matching the kept components, in kept order
    n_components: int

    def __post_init__(self):
        if self.filters.shape[0] != self.n_components:
            raise ValueError("filter count mismatch")


def _epoch_cov(data: np.ndarray) -> np.ndarray:
    c = data @ data.T / data.shape[1]
    tr = np.trace(c)
    if tr <= 0:
        raise SingularCovariance("zero-trace epoch covariance")
    return c / tr


def csp_fit(epochs: list[Epoch], n_components: int = 15,
            ridge_scale: float = 1e-10) -> CspModel:
    """Fit CSP filters on labeled epochs (two classes required)."""
    labels = sorted({e.label for e in epochs if e.label is not None})
    if len(labels) != 2:
        raise OneClassOnly(f"need exactly 2 classes, got {labels}")
    covs = {lab: [] for lab in labels}
    for e in epochs:
        if e.label is not None:
            covs[e.label].append(_epoch_cov(e.data))
    c1 = np.mean(covs[labels[0]], axis=0)
    c2 = np.mean(covs[labels[1]], axis=0)
    n_ch = c1.shape[0]
    if n_components > n_ch:
        raise ValueError("n_components exceeds channel count")
    ridge = ridge_scale * np.trace(c1 + c2) / n_ch * np.eye(n_ch)
    try:
        evals, evecs = linalg.eigh(c1 + ridge / 2, c1 + c2 + ridge)
    except linalg.LinAlgError as exc:
        raise SingularCovariance(str(exc)) from exc
    order = np.argsort(np.maximum(evals, 1.0 - evals))[::-1]
    evals, evecs = evals[order], evecs[:, order]
    filters = evecs.T[:n_components]
    # deterministic sign: largest-magnitude coefficient positive
    for i in range(filters.shape[0]):
        j = np.argmax(np.abs(filters[i]))
        if filters[i, j] < 0:
            filters[i] = -filters[i]
    return CspModel(filters, evals[:n_components], n_components)


def csp_transform(model: CspModel, epoch: Epoch,
                  eps: float = 1e-12) -> FeatureVector:
    """Log-variance of each spatially filtered epoch."""
    proj = model.filters @ epoch.data
    var = proj.var(axis=1)
    values = np.log(np.maximum(var, eps))
    schema = [f"csp_{i:02d}" for i in range(model.n_components)]
    return FeatureVector(values, schema, label=epoch.label, groups=_groups(epoch))


def srp_features(epoch: Epoch, fs: float, channels: list[str],
                 baseline_ms: float = 100.0, out_rate_hz: float = 25.0) -> FeatureVector:
    """Baseline-corrected, block-averaged 1 s saccade-locked vectors."""
    block = fs / out_rate_hz
    if abs(block - round(block)) > 1e-9:
        raise ValueError(f"sampling rate {fs} not divisible down to {out_rate_hz} Hz")
    block = int(round(block))
    n_base = int(round(baseline_ms * fs / 1000.0))
    n_blocks = epoch.n_samples // block
    if n_blocks < 1 or n_base < 1 or n_base > epoch.n_samples:
        raise EpochTooShort("srp epoch too short for baseline/decimation")
    data = epoch.data - epoch.data[:, :n_base].mean(axis=1, keepdims=True)
    trimmed = data[:, :n_blocks * block].reshape(len(channels), n_blocks, block)
    points = trimmed.mean(axis=2)
    schema = [f"{ch}.srp_{b:02d}" for ch in channels for b in range(n_blocks)]
    return FeatureVector(points.reshape(-1), schema, label=epoch.label,
                         groups=_groups(epoch))


def gaze_feature(fixation: Fixation, label: str | None = None,
                 groups: dict | None = None) -> FeatureVector:
    """Single-element vector: fixation duration in milliseconds."""
    return FeatureVector(np.array([fixation.duration_ms]), ["fix_dur_ms"],
                         label=label, groups=groups or {})
