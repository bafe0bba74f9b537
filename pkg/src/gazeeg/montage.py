"""Built-in unit-sphere scalp positions for the 20-channel 10-20 montage.

Coordinates: x toward the nasion, y toward the left ear, z toward the
vertex, all on the unit sphere. Positions are the conventional
inclination/azimuth placements of the 10-20 system; meta.json may
override any of them.
"""
from __future__ import annotations

import math

import numpy as np

# (inclination from vertex, azimuth from nasion, positive leftward), degrees
_ANGLES: dict[str, tuple[float, float]] = {
    "Fp1": (90, 18),
    "Fp2": (90, -18),
    "F7": (90, 54),
    "F3": (60, 40),
    "Fz": (45, 0),
    "F4": (60, -40),
    "F8": (90, -54),
    "T7": (90, 90),
    "C3": (45, 90),
    "Cz": (0, 0),
    "C4": (45, -90),
    "T8": (90, -90),
    "P7": (90, 126),
    "P3": (60, 140),
    "Pz": (45, 180),
    "P4": (60, -140),
    "P8": (90, -126),
    "O1": (90, 162),
    "Oz": (90, 180),
    "O2": (90, -162),
}

CHANNELS_20 = list(_ANGLES.keys())


def _to_xyz(incl_deg: float, az_deg: float) -> tuple[float, float, float]:
    incl = math.radians(incl_deg)
    az = math.radians(az_deg)
    return (
        math.sin(incl) * math.cos(az),
        math.sin(incl) * math.sin(az),
        math.cos(incl),
    )


def default_montage(channels: list[str] | None = None) -> dict[str, tuple[float, float, float]]:
    """Unit-sphere positions for the requested channels (default: all 20)."""
    names = CHANNELS_20 if channels is None else channels
    out = {}
    for name in names:
        if name not in _ANGLES:
            raise KeyError(f"no built-in position for channel {name!r}")
        out[name] = _to_xyz(*_ANGLES[name])
    return out


def montage_array(montage: dict[str, tuple[float, float, float]], channels: list[str]) -> np.ndarray:
    """Stack montage positions into an (n_channels, 3) array in channel order."""
    pos = np.array([montage[c] for c in channels], dtype=float)
    norms = np.linalg.norm(pos, axis=1, keepdims=True)
    return pos / norms
