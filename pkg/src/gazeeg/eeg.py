"""EEG cleaning and fixation-locked epoching.

Chain order: zero-phase filters (1 Hz high-pass, 48-52 Hz band-stop,
40 Hz low-pass), bad-channel detection and spherical-spline repair,
common average reference, SOBI source separation with heuristic
artifact rejection, then epoch extraction.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.polynomial import legendre
from scipy import signal

from .dataset import Recording
from .errors import AllRejected, FilterDesignError, TooFewChannels
from .gaze import Fixation, Saccade
from .montage import montage_array


@dataclass
class EegMatrix:
    """Continuous multichannel EEG: channels x samples, microvolts."""

    data: np.ndarray
    fs: float
    channels: list[str]
    t0_ms: float = 0.0
    montage_pos: np.ndarray | None = None  # (n_channels, 3) unit sphere

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    @property
    def t_end_ms(self) -> float:
        return self.t0_ms + 1000.0 * self.n_samples / self.fs

    def sample_index(self, t_ms: float) -> int:
        return int(round((t_ms - self.t0_ms) * self.fs / 1000.0))

    @classmethod
    def from_recording(cls, rec: Recording) -> "EegMatrix":
        fs = rec.eeg.rate_hz
        pos = montage_array(rec.montage, rec.eeg.channels)
        return cls(rec.eeg.data.copy(), fs, list(rec.eeg.channels),
                   float(rec.eeg.t_ms[0]), pos)

    def with_data(self, data: np.ndarray) -> "EegMatrix":
        return EegMatrix(data, self.fs, self.channels, self.t0_ms, self.montage_pos)


@dataclass
class Epoch:
    """One per-fixation (or per-saccade) EEG slice."""

    data: np.ndarray  # channels x n_samples
    onset_ms: float
    duration_ms: float
    label: str | None = None  # target | nontarget
    trial_id: int | None = None
    participant_id: str = ""
    scene_domain: str = ""
    kind: str = "fixation"  # fixation | srp

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]


def _sos_filtfilt(sos: np.ndarray, x: np.ndarray) -> np.ndarray:
    return signal.sosfiltfilt(sos, x, axis=-1)


def bandpass_chain(x: EegMatrix) -> EegMatrix:
    """Zero-phase HP 1 Hz -> band-stop 48-52 Hz -> LP 40 Hz, 4th-order Butterworth."""
    if x.fs < 200.0:
        raise FilterDesignError(f"sampling rate {x.fs} Hz too low for the filter chain")
    nyq = x.fs / 2.0
    if 52.0 >= nyq:
        raise FilterDesignError("band-stop edge exceeds Nyquist")
    hp = signal.butter(4, 1.0, btype="highpass", fs=x.fs, output="sos")
    bs = signal.butter(4, [48.0, 52.0], btype="bandstop", fs=x.fs, output="sos")
    lp = signal.butter(4, 40.0, btype="lowpass", fs=x.fs, output="sos")
    y = _sos_filtfilt(lp, _sos_filtfilt(bs, _sos_filtfilt(hp, x.data)))
    return x.with_data(y)


def detect_bad_channels(x: EegMatrix, corr_threshold: float = 0.8,
                        window_s: float = 4.0, bad_fraction: float = 0.5) -> set[int]:
    """Channels whose best correlation with any other channel stays below threshold.

    Correlations are computed on 1 Hz high-passed data in fixed windows; a
    channel is bad if flagged in more than ``bad_fraction`` of windows.
    Zero-variance channels count as correlation 0.
    """
    hp = signal.butter(4, 1.0, btype="highpass", fs=x.fs, output="sos")
    data = _sos_filtfilt(hp, x.data)
    n_ch, n = data.shape
    if n_ch < 2:
        return set()
    win = max(int(round(window_s * x.fs)), 8)
    starts = list(range(0, max(n - win + 1, 1), win))
    flags = np.zeros((n_ch, len(starts)), dtype=bool)
    for w, s in enumerate(starts):
        seg = data[:, s:s + win]
        sd = seg.std(axis=1)
        ok = sd > 0
        c = np.zeros((n_ch, n_ch))
        if ok.sum() >= 2:
            c_ok = np.corrcoef(seg[ok])
            c[np.ix_(ok, ok)] = c_ok
        np.fill_diagonal(c, 0.0)
        best = np.max(np.abs(c), axis=1)
        flags[:, w] = best < corr_threshold
    frac = flags.mean(axis=1)
    return set(np.where(frac > bad_fraction)[0])


def _spline_g(cosang: np.ndarray, m: int = 4, degree: int = 7) -> np.ndarray:
    coeffs = np.zeros(degree + 1)
    for n in range(1, degree + 1):
        coeffs[n] = (2 * n + 1) / float((n * (n + 1)) ** m)
    return legendre.legval(np.clip(cosang, -1.0, 1.0), coeffs) / (4.0 * np.pi)


def interpolate_spherical(x: EegMatrix, bad: set[int],
                          m: int = 4, degree: int = 7,
                          ridge: float = 1e-5) -> EegMatrix:
    """Replace bad channels via spherical-spline interpolation over good ones."""
    if not bad:
        return x.with_data(x.data.copy())
    if x.montage_pos is None:
        raise TooFewChannels("montage positions required for interpolation")
    good = [i for i in range(x.n_channels) if i not in bad]
    if len(good) < 4:
        raise TooFewChannels(f"only {len(good)} good channels, need >= 4")
    pos = x.montage_pos
    bad_idx = sorted(bad)
    G = _spline_g(pos[good] @ pos[good].T, m, degree)
    Gb = _spline_g(pos[bad_idx] @ pos[good].T, m, degree)
    k = len(good)
    A = np.zeros((k + 1, k + 1))
    A[:k, :k] = G + ridge * np.eye(k)
    A[:k, k] = 1.0
    A[k, :k] = 1.0
    rhs = np.zeros((k + 1, x.n_samples))
    rhs[:k] = x.data[good]
    sol = np.linalg.solve(A, rhs)
    C, c0 = sol[:k], sol[k]
    out = x.data.copy()
    out[bad_idx] = Gb @ C + c0
    return x.with_data(out)


def common_average_reference(x: EegMatrix) -> EegMatrix:
    """Subtract the instantaneous mean across channels from every channel."""
    return x.with_data(x.data - x.data.mean(axis=0, keepdims=True))


@dataclass
class SobiResult:
    unmixing: np.ndarray   # (n_components, n_channels)
    mixing: np.ndarray     # (n_channels, n_components), pseudo-inverse of unmixing
    sources: np.ndarray    # (n_components, n_samples)
    converged: bool
    off_mass: list[float] = field(default_factory=list)


def _joint_diagonalize(mats: np.ndarray, tol: float = 1e-8,
                       max_sweeps: int = 100) -> tuple[np.ndarray, bool, list[float]]:
    """Approximate joint diagonalization of symmetric matrices by Jacobi rotations."""
    k, d, _ = mats.shape
    V = np.eye(d)
    M = mats.copy()

    def off(M):
        mask = ~np.eye(d, dtype=bool)
        return float(np.sum(M[:, mask] ** 2))

    history = [off(M)]
    converged = False
    for _ in range(max_sweeps):
        for p in range(d - 1):
            for q in range(p + 1, d):
                h1 = M[:, p, p] - M[:, q, q]
                h2 = M[:, p, q] + M[:, q, p]
                ton = float(h1 @ h1 - h2 @ h2)
                toff = 2.0 * float(h1 @ h2)
                theta = 0.5 * np.arctan2(toff, ton + np.hypot(ton, toff))
                c, s = np.cos(theta), np.sin(theta)
                if abs(s) < 1e-14:
                    continue
                # M <- R^T M R on rows/cols p,q, for every matrix at once
                Mp = M[:, :, p].copy()
                Mq = M[:, :, q].copy()
                M[:, :, p] = c * Mp + s * Mq
                M[:, :, q] = -s * Mp + c * Mq
                Mp = M[:, p, :].copy()
                Mq = M[:, q, :].copy()
                M[:, p, :] = c * Mp + s * Mq
                M[:, q, :] = -s * Mp + c * Mq
                Vp = V[:, p].copy()
                V[:, p] = c * Vp + s * V[:, q]
                V[:, q] = -s * Vp + c * V[:, q]
        history.append(off(M))
        prev, cur = history[-2], history[-1]
        if prev <= 0 or (prev - cur) / max(prev, 1e-30) < tol:
            converged = True
            break
    return V, converged, history


def sobi_unmix(x: EegMatrix | np.ndarray, n_lags: int = 50,
               fs: float | None = None) -> SobiResult:
    """Second-order blind identification via whitening + joint diagonalization."""
    data = x.data if isinstance(x, EegMatrix) else np.asarray(x, float)
    d, n = data.shape
    if n <= n_lags + d:
        raise ValueError("too few samples for the requested lag set")
    data = data - data.mean(axis=1, keepdims=True)

    c0 = data @ data.T / n
    evals, evecs = np.linalg.eigh(c0)
    keep = evals > max(evals.max(), 1e-30) * 1e-9
    whitener = (evecs[:, keep] / np.sqrt(evals[keep])).T  # (k, d)
    z = whitener @ data
    k = z.shape[0]

    mats = np.empty((n_lags, k, k))
    for i, lag in enumerate(range(1, n_lags + 1)):
        r = z[:, lag:] @ z[:, :-lag].T / (n - lag)
        mats[i] = 0.5 * (r + r.T)

    V, converged, history = _joint_diagonalize(mats)
    W = V.T @ whitener
    return SobiResult(W, np.linalg.pinv(W), W @ data, converged, history)


def reject_artifact_components(W: np.ndarray, S: np.ndarray, x: EegMatrix,
                               frontal_channels: tuple[str, str] = ("Fp1", "Fp2"),
                               ocular_corr_threshold: float = 0.7,
                               kurtosis_threshold: float = 15.0,
                               ) -> tuple[EegMatrix, list[int]]:
    """Drop components matching the ocular/spike heuristics and back-project.

    Ocular proxy: |corr| with the mean of the frontal channels of the
    pre-separation signal above threshold. Spike/muscle proxy: excess
    kurtosis above threshold.
    """
    fidx = [x.channels.index(c) for c in frontal_channels if c in x.channels]
    if fidx:
        frontal = x.data[fidx].mean(axis=0)
        frontal = frontal - frontal.mean()
        fnorm = np.linalg.norm(frontal)
    else:
        frontal, fnorm = None, 0.0

    rejected = []
    for i in range(S.shape[0]):
        s = S[i] - S[i].mean()
        sd = s.std()
        if sd == 0:
            rejected.append(i)
            continue
        if frontal is not None and fnorm > 0:
            corr = abs(float(s @ frontal) / (np.linalg.norm(s) * fnorm))
            if corr > ocular_corr_threshold:
                rejected.append(i)
                continue
        kurt = float(np.mean(s ** 4) / sd ** 4) - 3.0
        if kurt > kurtosis_threshold:
            rejected.append(i)
    if len(rejected) == S.shape[0]:
        raise AllRejected("every component matched an artifact criterion")
    keep = [i for i in range(S.shape[0]) if i not in rejected]
    A = np.linalg.pinv(W)
    cleaned = A[:, keep] @ S[keep]
    # re-add the channel means removed before separation
    cleaned = cleaned + x.data.mean(axis=1, keepdims=True)
    return x.with_data(cleaned), rejected


@dataclass
class PreprocessInfo:
    bad_channels: list[str]
    rejected_components: list[int]
    sobi_converged: bool


def preprocess(x: EegMatrix, n_lags: int = 50, corr_threshold: float = 0.8,
               ocular_corr_threshold: float = 0.7, kurtosis_threshold: float = 15.0,
               run_sobi: bool = True) -> tuple[EegMatrix, PreprocessInfo]:
    """Full cleaning chain on one continuous recording."""
    y = bandpass_chain(x)
    bad = detect_bad_channels(y, corr_threshold)
    if bad:
        y = interpolate_spherical(y, bad)
    y = common_average_reference(y)
    rejected: list[int] = []
    converged = True
    if run_sobi:
        res = sobi_unmix(y, n_lags)
        converged = res.converged
        try:
            y, rejected = reject_artifact_components(
                res.unmixing, res.sources, y,
                ocular_corr_threshold=ocular_corr_threshold,
                kurtosis_threshold=kurtosis_threshold)
        except AllRejected:
            raise
    info = PreprocessInfo([x.channels[i] for i in sorted(bad)], rejected, converged)
    return y, info


def epoch_fixations(x: EegMatrix, fixations: list[Fixation],
                    participant_id: str = "") -> tuple[list[Epoch], int]:
    """Slice [onset, onset + duration) per fixation; out-of-span fixations skipped."""
    epochs = []
    skipped = 0
    for f in fixations:
        i0 = x.sample_index(f.onset_ms)
        n = int(round(f.duration_ms * x.fs / 1000.0))
        if i0 < 0 or n < 1 or i0 + n > x.n_samples:
            skipped += 1
            continue
        epochs.append(Epoch(x.data[:, i0:i0 + n].copy(), f.onset_ms, f.duration_ms,
                            trial_id=f.trial_id, participant_id=participant_id))
    return epochs, skipped


def epoch_srp(x: EegMatrix, saccades: list[Saccade], length_ms: float = 1000.0,
              participant_id: str = "") -> tuple[list[Epoch], int]:
    """Fixed-length slices starting at each saccade's temporal midpoint."""
    epochs = []
    skipped = 0
    n = int(round(length_ms * x.fs / 1000.0))
    for s in saccades:
        i0 = x.sample_index(s.midpoint_ms)
        if i0 < 0 or i0 + n > x.n_samples:
            skipped += 1
            continue
        epochs.append(Epoch(x.data[:, i0:i0 + n].copy(), s.midpoint_ms, length_ms,
                            participant_id=participant_id, kind="srp"))
    return epochs, skipped


# --- epoch container serialization (flat binary, JSON header) ---

_MAGIC = b"GZEEGEP1"


def save_epochs(path: str | Path, epochs: list[Epoch], channels: list[str],
                fs: float, provenance: dict | None = None) -> None:
    header = {
        "channels": channels,
        "fs": fs,
        "provenance": provenance or {},
        "epochs": [
            {"n_samples": e.n_samples, "onset_ms": e.onset_ms,
             "duration_ms": e.duration_ms, "label": e.label,
             "trial_id": e.trial_id, "participant_id": e.participant_id,
             "scene_domain": e.scene_domain, "kind": e.kind}
            for e in epochs
        ],
    }
    blob = json.dumps(header).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for e in epochs:
            fh.write(np.ascontiguousarray(e.data, dtype="<f8").tobytes())


def load_epochs(path: str | Path) -> tuple[list[Epoch], list[str], float, dict]:
    with open(path, "rb") as fh:
        if fh.read(8) != _MAGIC:
            raise ValueError(f"{path}: not an epoch container")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen))
        n_ch = len(header["channels"])
        epochs = []
        for meta in header["epochs"]:
            n = meta["n_samples"]
            buf = fh.read(8 * n_ch * n)
            data = np.frombuffer(buf, dtype="<f8").reshape(n_ch, n).copy()
            epochs.append(Epoch(data, meta["onset_ms"], meta["duration_ms"],
                                meta["label"], meta["trial_id"],
                                meta["participant_id"], meta["scene_domain"],
                                meta["kind"]))
    return epochs, header["channels"], header["fs"], header.get("provenance", {})
