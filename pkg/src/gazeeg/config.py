"""Flat key=value pipeline configuration with typed defaults.

Precedence: built-in defaults < config file < command-line overrides.
Unknown keys are rejected. The effective config is dumped into every
output directory for provenance.
"""
from __future__ import annotations

from pathlib import Path

from .errors import ConfigError
from .gaze import IvtParams
from .synth import SynthConfig

DEFAULTS: dict[str, object] = {
    "seed": 0,
    "jobs": 1,
    # synth
    "synth.n_participants": 6,
    "synth.trials_per_participant": 40,
    "synth.workshop_fraction": 0.5,
    "synth.fixations_min": 2,
    "synth.fixations_max": 3,
    "synth.target_duration_mean_ms": 280.0,
    "synth.nontarget_duration_mean_ms": 200.0,
    "synth.duration_shape": 6.0,
    "synth.bump_amplitude_uv": 4.0,
    "synth.bump_peak_ms": 350.0,
    "synth.bump_width_ms": 300.0,
    "synth.bump_latency_jitter_ms": 300.0,
    "synth.noise_scale_uv": 0.8,
    "synth.gaze_jitter_deg": 0.15,
    "synth.blink_rate_hz": 0.2,
    "synth.skip_probability": 0.0,
    "synth.include_eeg": True,
    # gaze (I-VT)
    "gaze.max_gap_ms": 75.0,
    "gaze.median_window_samples": 3,
    "gaze.velocity_window_ms": 20.0,
    "gaze.velocity_threshold_deg_s": 30.0,
    "gaze.merge_max_gap_ms": 75.0,
    "gaze.merge_max_angle_deg": 0.5,
    "gaze.min_fixation_ms": 60.0,
    # eeg
    "eeg.n_lags": 50,
    "eeg.corr_threshold": 0.8,
    "eeg.ocular_corr_threshold": 0.7,
    "eeg.kurtosis_threshold": 15.0,
    "eeg.run_sobi": True,
    # features
    "features.higuchi_kmax": 8,
    "features.csp_components": 15,
    "features.srp_length_ms": 1000.0,
    # learn
    "learn.inner_folds": 5,
    "learn.tol": 1e-3,
    "learn.max_passes": 100000,
    # eval
    "eval.k_folds": 10,
    "eval.feature_sets": "gaze,pyeeg,csp15,srp,fusion",
    "eval.splits": "within_user,cross_user",
    "eval.conditions": "all",
    "eval.include_unfound": False,
}


def _coerce(key: str, raw: str, default) -> object:
    if isinstance(default, bool):
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    try:
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from exc
    return raw.strip()


class PipelineConfig:
    """Typed flat configuration; values accessible via cfg['key']."""

    def __init__(self, values: dict | None = None):
        self.values = dict(DEFAULTS)
        for k, v in (values or {}).items():
            if k not in DEFAULTS:
                raise ConfigError(f"unknown config key {k!r}")
            self.values[k] = v

    def __getitem__(self, key: str):
        return self.values[key]

    def set(self, key: str, value) -> None:
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        self.values[key] = value

    @classmethod
    def load(cls, path: str | Path | None) -> "PipelineConfig":
        cfg = cls()
        if path is None:
            return cfg
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} not found")
        for ln, line in enumerate(path.read_text().splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{ln}: expected key = value")
            key, raw = (s.strip() for s in line.split("=", 1))
            if key not in DEFAULTS:
                raise ConfigError(f"{path}:{ln}: unknown config key {key!r}")
            cfg.values[key] = _coerce(key, raw, DEFAULTS[key])
        return cfg

    def dump(self, path: str | Path) -> None:
        lines = [f"{k} = {v}" for k, v in sorted(self.values.items())]
        Path(path).write_text("\n".join(lines) + "\n")

    # --- typed views ---

    def synth_config(self) -> SynthConfig:
        g = self.values
        return SynthConfig(
            n_participants=g["synth.n_participants"],
            trials_per_participant=g["synth.trials_per_participant"],
            workshop_fraction=g["synth.workshop_fraction"],
            fixations_per_trial=(g["synth.fixations_min"], g["synth.fixations_max"]),
            target_duration_mean_ms=g["synth.target_duration_mean_ms"],
            nontarget_duration_mean_ms=g["synth.nontarget_duration_mean_ms"],
            duration_shape=g["synth.duration_shape"],
            bump_amplitude_uv=g["synth.bump_amplitude_uv"],
            bump_peak_ms=g["synth.bump_peak_ms"],
            bump_width_ms=g["synth.bump_width_ms"],
            bump_latency_jitter_ms=g["synth.bump_latency_jitter_ms"],
            noise_scale_uv=g["synth.noise_scale_uv"],
            gaze_jitter_deg=g["synth.gaze_jitter_deg"],
            blink_rate_hz=g["synth.blink_rate_hz"],
            skip_probability=g["synth.skip_probability"],
            include_eeg=g["synth.include_eeg"],
            seed=g["seed"],
        )

    def ivt_params(self) -> IvtParams:
        g = self.values
        return IvtParams(
            max_gap_ms=g["gaze.max_gap_ms"],
            median_window_samples=g["gaze.median_window_samples"],
            velocity_window_ms=g["gaze.velocity_window_ms"],
            velocity_threshold_deg_s=g["gaze.velocity_threshold_deg_s"],
            merge_max_gap_ms=g["gaze.merge_max_gap_ms"],
            merge_max_angle_deg=g["gaze.merge_max_angle_deg"],
            min_fixation_ms=g["gaze.min_fixation_ms"],
        )

    def feature_sets(self) -> tuple[str, ...]:
        return tuple(s.strip() for s in str(self["eval.feature_sets"]).split(",")
                     if s.strip())

    def splits(self) -> tuple[str, ...]:
        return tuple(s.strip() for s in str(self["eval.splits"]).split(",")
                     if s.strip())
