"""Velocity-threshold (I-VT) fixation detection.

Seven steps, applied in order: gap fill-in, eye selection, moving-median
noise reduction, velocity calculation, velocity-threshold
classification, merging of adjacent fixations, and discarding of short
fixations. All steps are pure functions over immutable sample arrays.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .dataset import GazeStream, Recording, TrialEvent
from .errors import GeometryError


@dataclass
class IvtParams:
    """Tunables of the detection chain; defaults follow the Tobii I-VT filter."""

    max_gap_ms: float = 75.0
    median_window_samples: int = 3
    velocity_window_ms: float = 20.0
    velocity_threshold_deg_s: float = 30.0
    merge_max_gap_ms: float = 75.0
    merge_max_angle_deg: float = 0.5
    min_fixation_ms: float = 60.0

    def __post_init__(self):
        for name, v in self.__dict__.items():
            if v <= 0:
                raise ValueError(f"{name} must be positive")
        if self.median_window_samples % 2 == 0:
            raise ValueError("median_window_samples must be odd")


@dataclass
class Geometry:
    """Screen extent in pixels and millimeters; pixel origin top-left."""

    screen_px: tuple[int, int]
    screen_mm: tuple[float, float]

    @classmethod
    def of(cls, rec: Recording) -> "Geometry":
        return cls(rec.screen_px, rec.screen_mm)

    def px_to_mm(self, xy_px: np.ndarray) -> np.ndarray:
        sx = self.screen_mm[0] / self.screen_px[0]
        sy = self.screen_mm[1] / self.screen_px[1]
        return xy_px * np.array([sx, sy])


@dataclass
class Fixation:
    onset_ms: float
    duration_ms: float
    centroid_px: tuple[float, float]
    sample_count: int
    trial_id: int | None = None

    @property
    def end_ms(self) -> float:
        return self.onset_ms + self.duration_ms


@dataclass
class Saccade:
    onset_ms: float
    offset_ms: float

    @property
    def midpoint_ms(self) -> float:
        return 0.5 * (self.onset_ms + self.offset_ms)


@dataclass
class EyeTrace:
    """Cyclopean gaze trace: one normalized position per sample."""

    t_ms: np.ndarray
    x: np.ndarray
    y: np.ndarray
    valid: np.ndarray
    eye_dist_mm: np.ndarray

    def __len__(self) -> int:
        return len(self.t_ms)


def visual_angle_deg(p_px: np.ndarray, q_px: np.ndarray, geometry: Geometry,
                     eye_dist_mm: float) -> float | np.ndarray:
    """Angle subtended at the eye by two on-screen points (chord approximation)."""
    d = geometry.px_to_mm(np.asarray(q_px, float)) - geometry.px_to_mm(np.asarray(p_px, float))
    chord = np.linalg.norm(d, axis=-1)
    return np.degrees(2.0 * np.arctan2(chord, 2.0 * eye_dist_mm))


def _interp_gap(t, v, start, stop, prev, nxt):
    """Linear interpolation of positions over samples [start, stop)."""
    for arr in v:
        arr[start:stop] = np.interp(t[start:stop], [t[prev], t[nxt]],
                                    [arr[prev], arr[nxt]])


def fill_gaps(samples: GazeStream, max_gap_ms: float) -> GazeStream:
    """Interpolate over short runs of invalid samples, per eye."""
    out = samples.copy()
    t = out.t_ms
    if len(t) < 2:
        return out
    dt = float(np.median(np.diff(t)))
    n = len(t)
    for vx, vy, valid in ((out.lx, out.ly, out.lvalid), (out.rx, out.ry, out.rvalid)):
        i = 0
        while i < n:
            if valid[i]:
                i += 1
                continue
            j = i
            while j < n and not valid[j]:
                j += 1
            span = t[j - 1] - t[i] + dt
            if i > 0 and j < n and span <= max_gap_ms:
                _interp_gap(t, (vx, vy), i, j, i - 1, j)
                valid[i:j] = True
            i = j
    return out


def select_eye(samples: GazeStream) -> EyeTrace:
    """Average the two eyes where both are valid, else take the valid one."""
    both = samples.lvalid & samples.rvalid
    left_only = samples.lvalid & ~samples.rvalid
    right_only = samples.rvalid & ~samples.lvalid
    x = np.where(both, 0.5 * (samples.lx + samples.rx),
                 np.where(left_only, samples.lx, samples.rx))
    y = np.where(both, 0.5 * (samples.ly + samples.ry),
                 np.where(left_only, samples.ly, samples.ry))
    valid = samples.lvalid | samples.rvalid
    x = np.where(valid, x, np.nan)
    y = np.where(valid, y, np.nan)
    return EyeTrace(samples.t_ms.copy(), x, y, valid, samples.eye_dist_mm.copy())


def smooth_median(trace: EyeTrace, window: int) -> EyeTrace:
    """Centered moving median per coordinate; invalid samples are excluded."""
    if window % 2 == 0:
        raise ValueError("median window must be odd")
    half = window // 2
    n = len(trace)
    x = trace.x.copy()
    y = trace.y.copy()
    for i in range(n):
        # shrink symmetrically at the edges so the window stays centered
        h = min(half, i, n - 1 - i)
        lo, hi = i - h, i + h + 1
        m = trace.valid[lo:hi]
        if trace.valid[i] and np.any(m):
            x[i] = np.median(trace.x[lo:hi][m])
            y[i] = np.median(trace.y[lo:hi][m])
    return EyeTrace(trace.t_ms, x, y, trace.valid.copy(), trace.eye_dist_mm)


def compute_velocity(trace: EyeTrace, geometry: Geometry,
                     window_ms: float = 20.0) -> np.ndarray:
    """Angular velocity (deg/s) per sample over a centered time window.

    Valid samples lacking a computable window borrow the nearest
    computable value; invalid samples get NaN.
    """
    if geometry.screen_mm[0] <= 0 or geometry.screen_mm[1] <= 0:
        raise GeometryError("screen physical size (mm) is required for velocity")
    n = len(trace)
    v = np.full(n, np.nan)
    if n < 2:
        return v
    t = trace.t_ms
    half = window_ms / 2.0
    left = np.searchsorted(t, t - half, side="right") - 1
    right = np.searchsorted(t, t + half, side="left")
    px = np.column_stack([trace.x * geometry.screen_px[0],
                          trace.y * geometry.screen_px[1]])
    for i in range(n):
        if not trace.valid[i]:
            continue
        lo, hi = left[i], right[i]
        if hi <= lo:
            hi = lo + 1
        if lo < 0 or hi >= n or not (trace.valid[lo] and trace.valid[hi]):
            continue
        d = trace.eye_dist_mm[i] if trace.eye_dist_mm[i] > 0 else np.nan
        ang = visual_angle_deg(px[lo], px[hi], geometry, d)
        v[i] = ang / ((t[hi] - t[lo]) / 1000.0)
    # nearest computable value for valid samples without a full window
    have = np.where(np.isfinite(v))[0]
    if have.size:
        need = np.where(trace.valid & ~np.isfinite(v))[0]
        for i in need:
            j = have[np.argmin(np.abs(have - i))]
            v[i] = v[j]
    return v


def ivt_classify(velocities: np.ndarray, threshold_deg_s: float) -> np.ndarray:
    """Per-sample class: True = fixation (velocity strictly below threshold)."""
    with np.errstate(invalid="ignore"):
        return np.asarray(velocities < threshold_deg_s)


def _runs(mask: np.ndarray):
    """(start, stop) index pairs of contiguous True runs."""
    n = len(mask)
    out = []
    i = 0
    while i < n:
        if mask[i]:
            j = i
            while j < n and mask[j]:
                j += 1
            out.append((i, j))
            i = j
        else:
            i += 1
    return out


def _fixation_from_run(trace: EyeTrace, geometry: Geometry, i: int, j: int,
                       dt: float) -> Fixation:
    seg = slice(i, j)
    cx = float(np.nanmean(trace.x[seg])) * geometry.screen_px[0]
    cy = float(np.nanmean(trace.y[seg])) * geometry.screen_px[1]
    onset = float(trace.t_ms[i])
    duration = float(trace.t_ms[j - 1] - trace.t_ms[i]) + dt
    return Fixation(onset, duration, (cx, cy), j - i)


def merge_fixations(fixations: list[Fixation], max_gap_ms: float,
                    max_angle_deg: float, geometry: Geometry,
                    eye_dist_mm: float) -> list[Fixation]:
    """Merge consecutive fixations split by noise; repeated until stable."""
    fixs = list(fixations)
    changed = True
    while changed:
        changed = False
        merged: list[Fixation] = []
        for f in fixs:
            if merged:
                prev = merged[-1]
                gap = f.onset_ms - prev.end_ms
                ang = visual_angle_deg(np.array(prev.centroid_px),
                                       np.array(f.centroid_px),
                                       geometry, eye_dist_mm)
                if gap <= max_gap_ms and ang <= max_angle_deg:
                    w1, w2 = prev.sample_count, f.sample_count
                    cx = (prev.centroid_px[0] * w1 + f.centroid_px[0] * w2) / (w1 + w2)
                    cy = (prev.centroid_px[1] * w1 + f.centroid_px[1] * w2) / (w1 + w2)
                    merged[-1] = Fixation(prev.onset_ms, f.end_ms - prev.onset_ms,
                                          (cx, cy), w1 + w2, prev.trial_id)
                    changed = True
                    continue
            merged.append(f)
        fixs = merged
    return fixs


def assign_trials(events_sorted: list[TrialEvent], onset_ms: float) -> int | None:
    for ev in events_sorted:
        if ev.search_onset_ms <= onset_ms < ev.search_end_ms:
            return ev.trial_id
    return None


def detect_fixations(samples: GazeStream, params: IvtParams, geometry: Geometry,
                     events: list[TrialEvent] | None = None,
                     ) -> tuple[list[Fixation], list[Saccade]]:
    """Full I-VT chain from raw binocular samples to fixation/saccade events."""
    if len(samples) == 0:
        return [], []
    filled = fill_gaps(samples, params.max_gap_ms)
    trace = select_eye(filled)
    if not np.any(trace.valid):
        return [], []
    trace = smooth_median(trace, params.median_window_samples)
    vel = compute_velocity(trace, geometry, params.velocity_window_ms)
    is_fix = ivt_classify(vel, params.velocity_threshold_deg_s)

    dt = float(np.median(np.diff(trace.t_ms))) if len(trace) > 1 else 1000.0 / 60.0
    fixations = [_fixation_from_run(trace, geometry, i, j, dt)
                 for i, j in _runs(is_fix)]

    valid_dist = trace.eye_dist_mm[trace.valid & (trace.eye_dist_mm > 0)]
    eye_dist = float(np.median(valid_dist)) if valid_dist.size else 600.0
    fixations = merge_fixations(fixations, params.merge_max_gap_ms,
                                params.merge_max_angle_deg, geometry, eye_dist)
    fixations = [f for f in fixations if f.duration_ms >= params.min_fixation_ms]

    if events is not None:
        evs = sorted(events, key=lambda e: e.search_onset_ms)
        fixations = [replace(f, trial_id=assign_trials(evs, f.onset_ms))
                     for f in fixations]

    saccades: list[Saccade] = []
    first_t = float(trace.t_ms[np.argmax(trace.valid)])
    prev_end = first_t
    for f in fixations:
        if f.onset_ms > prev_end:
            saccades.append(Saccade(prev_end, f.onset_ms))
        prev_end = f.end_ms
    return fixations, saccades


def fixations_to_rows(fixations: list[Fixation], saccades: list[Saccade]) -> list[dict]:
    """Flat row dicts for CSV export (one row per event)."""
    rows = []
    for f in fixations:
        rows.append({"kind": "fixation", "onset_ms": f.onset_ms,
                     "duration_ms": f.duration_ms, "x_px": f.centroid_px[0],
                     "y_px": f.centroid_px[1], "sample_count": f.sample_count,
                     "trial_id": -1 if f.trial_id is None else f.trial_id})
    for s in saccades:
        rows.append({"kind": "saccade", "onset_ms": s.onset_ms,
                     "duration_ms": s.offset_ms - s.onset_ms,
                     "x_px": math.nan, "y_px": math.nan, "sample_count": 0,
                     "trial_id": -1})
    rows.sort(key=lambda r: r["onset_ms"])
    return rows
