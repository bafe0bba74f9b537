"""Synthetic multimodal recordings with known ground truth.

Each participant gets a session directory in the standard format plus a
``truth.json`` sidecar (planted fixations, effect bookkeeping) that the
pipeline never reads; only tests do. The class effect is injected at
source level: a positive half-cosine bump on a parietal-loaded source
for target fixations, plus longer target fixation durations.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import EegStream, GazeStream, Recording, TrialEvent, write_recording
from .errors import ConfigError
from .montage import CHANNELS_20, default_montage

GAZE_HZ = 60.0
EEG_HZ = 500.0

_TOOLS = ["Hammer", "Pliers", "Saw", "Screwdriver", "Wrench"]
_ICONS = ["Drive", "Facebook", "Dropbox", "Minecraft", "Zoom", "Mail", "Editor"]

# unit-norm source loadings for the class-effect and blink sources
_PARIETAL = {"Pz": 0.8, "P3": 0.45, "P4": 0.45}
_FRONTAL = {"Fp1": 0.7, "Fp2": 0.7, "F7": 0.1, "F8": 0.1}


@dataclass
class SynthConfig:
    n_participants: int = 6
    trials_per_participant: int = 40
    workshop_fraction: float = 0.5
    fixations_per_trial: tuple[int, int] = (2, 3)
    target_duration_mean_ms: float = 280.0
    nontarget_duration_mean_ms: float = 200.0
    duration_shape: float = 6.0
    bump_amplitude_uv: float = 4.0
    bump_peak_ms: float = 350.0
    bump_width_ms: float = 300.0
    bump_latency_jitter_ms: float = 300.0
    noise_scale_uv: float = 0.8
    gaze_jitter_deg: float = 0.15
    blink_rate_hz: float = 0.2
    blink_amplitude_uv: float = 60.0
    dropout_rate: float = 0.004
    skip_probability: float = 0.0
    intertrial_gap_ms: float = 1000.0
    screen_px: tuple[int, int] = (1920, 1080)
    screen_mm: tuple[float, float] = (600.0, 337.5)
    eye_distance_mm: float = 600.0
    include_eeg: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.bump_amplitude_uv < 0:
            raise ConfigError("bump amplitude must be >= 0")
        if self.bump_latency_jitter_ms < 0:
            raise ConfigError("bump latency jitter must be >= 0")
        for name in ("target_duration_mean_ms", "nontarget_duration_mean_ms",
                     "duration_shape", "noise_scale_uv", "intertrial_gap_ms",
                     "eye_distance_mm"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        lo, hi = self.fixations_per_trial
        if not (1 <= lo <= hi):
            raise ConfigError("bad fixations_per_trial range")
        if not 0.0 <= self.workshop_fraction <= 1.0:
            raise ConfigError("workshop_fraction must be in [0, 1]")

    @property
    def null_effect(self) -> bool:
        return self.bump_amplitude_uv == 0.0

    def px_per_deg(self) -> float:
        mm_per_px = 0.5 * (self.screen_mm[0] / self.screen_px[0]
                           + self.screen_mm[1] / self.screen_px[1])
        return self.eye_distance_mm * math.tan(math.radians(1.0)) / mm_per_px


@dataclass
class _PlannedFixation:
    onset_ms: float
    duration_ms: float
    x_px: float
    y_px: float
    is_target: bool
    trial_id: int


@dataclass
class _Plan:
    fixations: list[_PlannedFixation] = field(default_factory=list)
    events: list[TrialEvent] = field(default_factory=list)
    segments: list[tuple] = field(default_factory=list)  # (t0, t1, kind, payload)
    total_ms: float = 0.0
    blink_windows: list[tuple[float, float]] = field(default_factory=list)


def _saccade_duration_ms(amplitude_deg: float) -> float:
    # main-sequence-like: ~21 ms intercept + 2.2 ms/deg
    return 21.0 + 2.2 * amplitude_deg


def _plan_participant(cfg: SynthConfig, rng: np.random.Generator) -> _Plan:
    plan = _Plan()
    w, h = cfg.screen_px
    margin = 120.0
    bbox_half = 30.0
    buffer_px = 10.0
    px_deg = cfg.px_per_deg()
    center = np.array([w / 2.0, h / 2.0])

    t = 0.0
    cur = center.copy()
    n_workshop = int(round(cfg.workshop_fraction * cfg.trials_per_participant))

    t_mean = cfg.nontarget_duration_mean_ms if cfg.null_effect \
        else cfg.target_duration_mean_ms

    def hold(pos: np.ndarray, dur: float):
        nonlocal t
        plan.segments.append((t, t + dur, "hold", pos.copy()))
        t += dur

    def jump(to: np.ndarray):
        nonlocal t, cur
        amp = float(np.linalg.norm(to - cur)) / px_deg
        dur = _saccade_duration_ms(amp)
        plan.segments.append((t, t + dur, "saccade", (cur.copy(), to.copy())))
        t += dur
        cur = to.copy()

    for trial in range(cfg.trials_per_participant):
        domain = "workshop" if trial < n_workshop else "desktop"
        gap = cfg.intertrial_gap_ms * rng.uniform(0.8, 1.2)
        blink_at = None
        if cfg.blink_rate_hz > 0 and rng.random() < cfg.blink_rate_hz * gap / 1000.0:
            blink_at = t + rng.uniform(0.2, 0.8) * gap
            plan.blink_windows.append((blink_at, blink_at + 300.0))
        jump(center)
        hold(center, gap)

        search_onset = t
        while True:
            target_pos = np.array([rng.uniform(margin, w - margin),
                                   rng.uniform(margin, h - margin)])
            if np.linalg.norm(target_pos - center) >= 160.0:
                break
        bbox = (target_pos[0] - bbox_half - buffer_px,
                target_pos[1] - bbox_half - buffer_px,
                target_pos[0] + bbox_half + buffer_px,
                target_pos[1] + bbox_half + buffer_px)

        n_fix = int(rng.integers(cfg.fixations_per_trial[0],
                                 cfg.fixations_per_trial[1] + 1))
        positions = []
        while len(positions) < n_fix - 1:
            p = np.array([rng.uniform(margin, w - margin),
                          rng.uniform(margin, h - margin)])
            prev = positions[-1] if positions else cur
            if np.linalg.norm(p - target_pos) < 160.0:
                continue
            if np.linalg.norm(p - prev) < 120.0:
                continue
            positions.append(p)
        skipped = rng.random() < cfg.skip_probability

        for p in positions:
            dur = float(np.clip(rng.gamma(cfg.duration_shape,
                                          cfg.nontarget_duration_mean_ms
                                          / cfg.duration_shape), 80.0, 1200.0))
            jump(p)
            plan.fixations.append(_PlannedFixation(t, dur, p[0], p[1],
                                                   False, trial))
            hold(p, dur)
        if not skipped:
            dur = float(np.clip(rng.gamma(cfg.duration_shape,
                                          t_mean / cfg.duration_shape),
                                80.0, 1200.0))
            jump(target_pos)
            plan.fixations.append(_PlannedFixation(t, dur, target_pos[0],
                                                   target_pos[1], True, trial))
            hold(target_pos, dur)
        # the search window closes when the last planted fixation ends, so
        # the return sweep to center is never trial-assigned
        search_end = t + 1.0

        target_id = (_TOOLS if domain == "workshop" else _ICONS)[
            trial % len(_TOOLS if domain == "workshop" else _ICONS)]
        plan.events.append(TrialEvent(
            trial_id=trial, scene_id=f"scene{trial:03d}", scene_domain=domain,
            target_id=target_id, target_bbox=bbox,
            search_onset_ms=search_onset, search_end_ms=search_end,
            outcome="skipped" if skipped else "clicked"))

    jump(center)
    hold(center, 1500.0)  # tail so trailing SRP windows stay in-span
    plan.total_ms = t
    return plan


def _render_gaze(cfg: SynthConfig, plan: _Plan,
                 rng: np.random.Generator) -> GazeStream:
    dt = 1000.0 / GAZE_HZ
    n = int(plan.total_ms / dt)
    t = np.arange(n) * dt
    pos = np.zeros((n, 2))
    for t0, t1, kind, payload in plan.segments:
        mask = (t >= t0) & (t < t1)
        if not np.any(mask):
            continue
        if kind == "hold":
            pos[mask] = payload
        else:
            a, b = payload
            frac = (t[mask] - t0) / max(t1 - t0, 1e-9)
            ramp = 0.5 * (1.0 - np.cos(np.pi * frac))  # smooth velocity profile
            pos[mask] = a + ramp[:, None] * (b - a)

    # temporally correlated jitter so fixation velocities stay sub-threshold
    sigma_px = cfg.gaze_jitter_deg * cfg.px_per_deg()
    rho = 0.9
    eps = rng.standard_normal((n, 2)) * sigma_px * math.sqrt(1.0 - rho * rho)
    jitter = np.zeros((n, 2))
    for i in range(1, n):
        jitter[i] = rho * jitter[i - 1] + eps[i]
    pos = pos + jitter

    w, h = cfg.screen_px
    x = np.clip(pos[:, 0] / w, 0.0, 1.0)
    y = np.clip(pos[:, 1] / h, 0.0, 1.0)

    lvalid = np.ones(n, bool)
    rvalid = np.ones(n, bool)
    n_drop = int(cfg.dropout_rate * n)
    if n_drop:
        starts = rng.choice(n, size=n_drop, replace=False)
        for s in starts:
            run = int(rng.integers(1, 3))
            lvalid[s:s + run] = False
            rvalid[s:s + run] = False
    # occasional single-eye loss
    one_eye = rng.random(n) < 0.01
    lvalid &= ~one_eye

    off = 1.5  # small fixed vergence offset between the eyes, px
    lx = np.where(lvalid, x - off / w, 0.0)
    rx = np.where(rvalid, x + off / w, 0.0)
    ly = np.where(lvalid, y, 0.0)
    ry = np.where(rvalid, y, 0.0)
    dist = cfg.eye_distance_mm + 5.0 * np.sin(2 * np.pi * t / 60000.0)
    return GazeStream(t, lx, ly, lvalid, rx, ry, rvalid, dist)


def _one_over_f(n: int, rng: np.random.Generator) -> np.ndarray:
    white = rng.standard_normal(n)
    spec = np.fft.rfft(white)
    freqs = np.fft.rfftfreq(n, d=1.0 / EEG_HZ)
    shape = np.ones_like(freqs)
    nz = freqs > 0
    shape[nz] = 1.0 / np.sqrt(freqs[nz])
    shape[0] = 0.0
    x = np.fft.irfft(spec * shape, n)
    sd = x.std()
    return x / sd if sd > 0 else x


def _loading_vector(weights: dict[str, float]) -> np.ndarray:
    v = np.zeros(len(CHANNELS_20))
    for name, w in weights.items():
        v[CHANNELS_20.index(name)] = w
    return v / np.linalg.norm(v)


def _render_eeg(cfg: SynthConfig, plan: _Plan, rng: np.random.Generator,
                ) -> tuple[EegStream, dict]:
    dt = 1000.0 / EEG_HZ
    n = int(plan.total_ms / dt)
    t = np.arange(n) * dt
    n_ch = len(CHANNELS_20)

    sources = np.vstack([_one_over_f(n, rng) for _ in range(n_ch)])
    sources *= cfg.noise_scale_uv

    bump_windows = []
    if not cfg.null_effect:
        half = cfg.bump_width_ms / 2.0
        jit = cfg.bump_latency_jitter_ms
        for f in plan.fixations:
            if not f.is_target:
                continue
            # response latency varies trial to trial around the nominal peak
            center = f.onset_ms + cfg.bump_peak_ms + rng.uniform(-jit, jit)
            i0 = max(int((center - half) / dt), 0)
            i1 = min(int((center + half) / dt) + 1, n)
            if i1 <= i0:
                continue
            phase = np.pi * (t[i0:i1] - center) / cfg.bump_width_ms
            sources[0, i0:i1] += cfg.bump_amplitude_uv * np.cos(phase)
            bump_windows.append([center - half, center + half])

    sources[1] *= 0.2  # blink source carries little background
    for b0, b1 in plan.blink_windows:
        center = 0.5 * (b0 + b1)
        sigma = (b1 - b0) / 4.0
        i0 = max(int((b0 - 100) / dt), 0)
        i1 = min(int((b1 + 100) / dt) + 1, n)
        sources[1, i0:i1] += cfg.blink_amplitude_uv * np.exp(
            -0.5 * ((t[i0:i1] - center) / sigma) ** 2)

    v = _loading_vector(_PARIETAL)
    w_vec = _loading_vector(_FRONTAL)
    basis = np.column_stack([v, w_vec, rng.standard_normal((n_ch, n_ch - 2))])
    q, _ = np.linalg.qr(basis)
    # QR may flip signs; keep the designed loadings
    if q[:, 0] @ v < 0:
        q[:, 0] = -q[:, 0]
    if q[:, 1] @ w_vec < 0:
        q[:, 1] = -q[:, 1]
    data = q @ sources
    # shared background with a near-uniform scalp map: gives channels the
    # strong mutual correlations of volume-conducted EEG (CAR removes most
    # of it downstream, as with a real common mode)
    common = _one_over_f(n, rng) * (2.5 * cfg.noise_scale_uv)
    gains = 1.0 + 0.1 * rng.standard_normal(n_ch)
    data += np.outer(gains, common)
    data += 0.05 * cfg.noise_scale_uv * rng.standard_normal(data.shape)

    truth_extra = {
        "forward_parietal_column": q[:, 0].tolist(),
        "forward_frontal_column": q[:, 1].tolist(),
        "bump_windows_ms": bump_windows,
        "blink_windows_ms": [list(bw) for bw in plan.blink_windows],
    }
    return EegStream(t, data, list(CHANNELS_20)), truth_extra


def generate(cfg: SynthConfig, out_dir: str | Path) -> list[Path]:
    """Write one session directory per participant; returns their paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.n_participants)
    paths = []
    for pi in range(cfg.n_participants):
        rng = np.random.default_rng(seeds[pi])
        plan = _plan_participant(cfg, rng)
        gaze = _render_gaze(cfg, plan, rng)
        if cfg.include_eeg:
            eeg, truth_extra = _render_eeg(cfg, plan, rng)
        else:
            dt = 1000.0 / EEG_HZ
            n = int(plan.total_ms / dt)
            eeg = EegStream(np.arange(n) * dt,
                            np.zeros((len(CHANNELS_20), n)), list(CHANNELS_20))
            truth_extra = {}

        pid = f"p{pi:02d}"
        rec = Recording(pid, cfg.screen_px, cfg.screen_mm, gaze, eeg,
                        plan.events, default_montage(list(CHANNELS_20)))
        pdir = out_dir / pid
        write_recording(rec, pdir)

        truth = {
            "participant_id": pid,
            "effect_amplitude_uv": cfg.bump_amplitude_uv,
            "null_effect": cfg.null_effect,
            "n_planted_fixations": len(plan.fixations),
            "fixations": [
                {"onset_ms": f.onset_ms, "duration_ms": f.duration_ms,
                 "x_px": f.x_px, "y_px": f.y_px, "is_target": f.is_target,
                 "trial_id": f.trial_id}
                for f in plan.fixations
            ],
        }
        truth.update(truth_extra)
        (pdir / "truth.json").write_text(json.dumps(truth) + "\n")
        paths.append(pdir)
    return paths
