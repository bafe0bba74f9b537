"""Recording data model and on-disk session format.

A session directory holds four files:

  meta.json    participant_id, screen_px, screen_mm, channels, optional montage
  gaze.csv     t_ms,lx,ly,lvalid,rx,ry,rvalid,eye_dist_mm
  eeg.csv      t_ms plus one column per channel (microvolts)
  events.jsonl one trial event per line

Gaze coordinates are stored in the eye tracker's native convention with
(0,0) at the top-right of the screen; ``load_recording`` flips them once
to the standard top-left origin (x rightward, y downward). All
timestamps share one common clock in milliseconds.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import ClockError, CoverageError, MissingFileError, RangeError, SchemaError
from .montage import default_montage

GAZE_RATE_HZ = 60.0
EEG_RATE_HZ = 500.0
RATE_TOL = 0.05  # allowed relative deviation of the median inter-sample interval

GAZE_COLUMNS = ["t_ms", "lx", "ly", "lvalid", "rx", "ry", "rvalid", "eye_dist_mm"]


@dataclass
class GazeStream:
    """Raw binocular gaze samples; coordinates normalized to [0,1]^2, top-left origin."""

    t_ms: np.ndarray
    lx: np.ndarray
    ly: np.ndarray
    lvalid: np.ndarray
    rx: np.ndarray
    ry: np.ndarray
    rvalid: np.ndarray
    eye_dist_mm: np.ndarray

    def __len__(self) -> int:
        return len(self.t_ms)

    _FIELDS = ("t_ms", "lx", "ly", "lvalid", "rx", "ry", "rvalid", "eye_dist_mm")

    def take(self, idx) -> "GazeStream":
        return GazeStream(*(getattr(self, f)[idx] for f in self._FIELDS))

    def copy(self) -> "GazeStream":
        return GazeStream(*(getattr(self, f).copy() for f in self._FIELDS))


@dataclass
class EegStream:
    """Continuous EEG; ``data`` is channels x samples in microvolts."""

    t_ms: np.ndarray
    data: np.ndarray
    channels: list[str]

    def __len__(self) -> int:
        return len(self.t_ms)

    @property
    def rate_hz(self) -> float:
        dt = np.median(np.diff(self.t_ms))
        return 1000.0 / dt


@dataclass
class TrialEvent:
    trial_id: int
    scene_id: str
    scene_domain: str  # workshop | desktop
    target_id: str
    target_bbox: tuple[float, float, float, float]  # x0, y0, x1, y1 in pixels, buffer included
    search_onset_ms: float
    search_end_ms: float
    outcome: str  # clicked | skipped

    def to_json(self) -> dict:
        d = dict(self.__dict__)
        d["target_bbox"] = list(self.target_bbox)
        return d


@dataclass
class Recording:
    participant_id: str
    screen_px: tuple[int, int]
    screen_mm: tuple[float, float]
    gaze: GazeStream
    eeg: EegStream
    events: list[TrialEvent]
    montage: dict[str, tuple[float, float, float]] = field(default_factory=dict)

    @property
    def px_per_mm(self) -> tuple[float, float]:
        return (self.screen_px[0] / self.screen_mm[0], self.screen_px[1] / self.screen_mm[1])

    def median_eye_distance_mm(self) -> float:
        d = self.eye_dist_valid()
        if d.size == 0:
            return float("nan")
        return float(np.median(d))

    def eye_dist_valid(self) -> np.ndarray:
        mask = (self.gaze.lvalid | self.gaze.rvalid) & (self.gaze.eye_dist_mm > 0)
        return self.gaze.eye_dist_mm[mask]


def _require_monotone(t: np.ndarray, what: str) -> None:
    if len(t) > 1 and not np.all(np.diff(t) > 0):
        raise ClockError(f"{what} timestamps are not strictly increasing")


def _check_rate(t: np.ndarray, nominal_hz: float, what: str) -> None:
    if len(t) < 3:
        return
    dt = float(np.median(np.diff(t)))
    expected = 1000.0 / nominal_hz
    if abs(dt - expected) > RATE_TOL * expected:
        raise ClockError(
            f"{what} median interval {dt:.3f} ms deviates more than "
            f"{RATE_TOL:.0%} from nominal {expected:.3f} ms"
        )


def load_recording(path: str | Path) -> Recording:
    """Load and validate a session directory."""
    path = Path(path)
    for fname in ("meta.json", "gaze.csv", "eeg.csv", "events.jsonl"):
        if not (path / fname).exists():
            raise MissingFileError(f"{path / fname} not found")

    meta = json.loads((path / "meta.json").read_text())
    for key in ("participant_id", "screen_px", "screen_mm", "channels"):
        if key not in meta:
            raise SchemaError(f"meta.json missing key {key!r}")
    channels = list(meta["channels"])

    gdf = pd.read_csv(path / "gaze.csv")
    if list(gdf.columns) != GAZE_COLUMNS:
        raise SchemaError(f"gaze.csv columns {list(gdf.columns)} != {GAZE_COLUMNS}")
    edf = pd.read_csv(path / "eeg.csv")
    if list(edf.columns) != ["t_ms"] + channels:
        raise SchemaError("eeg.csv columns do not match meta.json channel list")

    gt = gdf["t_ms"].to_numpy(float)
    et = edf["t_ms"].to_numpy(float)
    _require_monotone(gt, "gaze")
    _require_monotone(et, "eeg")
    _check_rate(gt, GAZE_RATE_HZ, "gaze")
    _check_rate(et, EEG_RATE_HZ, "eeg")

    lvalid = gdf["lvalid"].to_numpy(int).astype(bool)
    rvalid = gdf["rvalid"].to_numpy(int).astype(bool)
    # flip from the tracker's top-right origin to the top-left convention
    lx = np.where(lvalid, 1.0 - gdf["lx"].to_numpy(float), 0.0)
    rx = np.where(rvalid, 1.0 - gdf["rx"].to_numpy(float), 0.0)
    ly = np.where(lvalid, gdf["ly"].to_numpy(float), 0.0)
    ry = np.where(rvalid, gdf["ry"].to_numpy(float), 0.0)
    for x, y, v, eye in ((lx, ly, lvalid, "left"), (rx, ry, rvalid, "right")):
        bad = v & ((x < -0.2) | (x > 1.2) | (y < -0.2) | (y > 1.2))
        if np.any(bad):
            raise SchemaError(f"{eye} eye coordinates outside [-0.2, 1.2] on valid samples")

    gaze = GazeStream(gt, lx, ly, lvalid, rx, ry, rvalid,
                      gdf["eye_dist_mm"].to_numpy(float))
    eeg = EegStream(et, edf[channels].to_numpy(float).T.copy(), channels)

    events = []
    with open(path / "events.jsonl") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            d = json.loads(line)
            try:
                ev = TrialEvent(
                    trial_id=int(d["trial_id"]),
                    scene_id=str(d["scene_id"]),
                    scene_domain=str(d["scene_domain"]),
                    target_id=str(d["target_id"]),
                    target_bbox=tuple(float(v) for v in d["target_bbox"]),
                    search_onset_ms=float(d["search_onset_ms"]),
                    search_end_ms=float(d["search_end_ms"]),
                    outcome=str(d["outcome"]),
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise SchemaError(f"malformed event line: {exc}") from exc
            events.append(ev)

    screen_px = tuple(int(v) for v in meta["screen_px"])
    screen_mm = tuple(float(v) for v in meta["screen_mm"])
    _validate_events(events, gt, et, screen_px)

    if meta.get("montage"):
        montage = {k: tuple(map(float, v)) for k, v in meta["montage"].items()}
    else:
        montage = default_montage(channels)
    missing = [c for c in channels if c not in montage]
    if missing:
        raise SchemaError(f"montage missing channels {missing}")

    return Recording(str(meta["participant_id"]), screen_px, screen_mm,
                     gaze, eeg, events, montage)


def _validate_events(events: list[TrialEvent], gt: np.ndarray, et: np.ndarray,
                     screen_px: tuple[int, int]) -> None:
    bbox_slack = 12.0  # the 10-px buffer plus rounding slop
    for ev in events:
        if not ev.search_onset_ms < ev.search_end_ms:
            raise SchemaError(f"trial {ev.trial_id}: search_onset >= search_end")
        if ev.scene_domain not in ("workshop", "desktop"):
            raise SchemaError(f"trial {ev.trial_id}: unknown scene_domain {ev.scene_domain!r}")
        if ev.outcome not in ("clicked", "skipped"):
            raise SchemaError(f"trial {ev.trial_id}: unknown outcome {ev.outcome!r}")
        x0, y0, x1, y1 = ev.target_bbox
        if not (x0 < x1 and y0 < y1):
            raise SchemaError(f"trial {ev.trial_id}: degenerate bbox")
        if x0 < -bbox_slack or y0 < -bbox_slack or \
                x1 > screen_px[0] + bbox_slack or y1 > screen_px[1] + bbox_slack:
            raise SchemaError(f"trial {ev.trial_id}: bbox outside buffered screen bounds")
        for t in (gt, et):
            if len(t) == 0 or ev.search_onset_ms < t[0] or ev.search_end_ms > t[-1]:
                raise CoverageError(
                    f"trial {ev.trial_id}: window [{ev.search_onset_ms}, "
                    f"{ev.search_end_ms}] not covered by both streams"
                )


def write_recording(rec: Recording, path: str | Path) -> None:
    """Write a Recording back to the session directory format."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)

    meta = {
        "participant_id": rec.participant_id,
        "screen_px": list(rec.screen_px),
        "screen_mm": list(rec.screen_mm),
        "channels": rec.eeg.channels,
        "montage": {k: list(v) for k, v in rec.montage.items()},
    }
    (path / "meta.json").write_text(json.dumps(meta, indent=1) + "\n")

    g = rec.gaze
    # flip back to the tracker's top-right origin for storage
    lx = np.where(g.lvalid, 1.0 - g.lx, 0.0)
    rx = np.where(g.rvalid, 1.0 - g.rx, 0.0)
    cols = [g.t_ms, lx, np.where(g.lvalid, g.ly, 0.0), g.lvalid.astype(int),
            rx, np.where(g.rvalid, g.ry, 0.0), g.rvalid.astype(int), g.eye_dist_mm]
    _write_csv(path / "gaze.csv", GAZE_COLUMNS, cols)

    _write_csv(path / "eeg.csv", ["t_ms"] + rec.eeg.channels,
               [rec.eeg.t_ms] + [rec.eeg.data[i] for i in range(rec.eeg.data.shape[0])])

    with open(path / "events.jsonl", "w") as fh:
        for ev in rec.events:
            fh.write(json.dumps(ev.to_json()) + "\n")


def _write_csv(fpath: Path, header: list[str], cols: list[np.ndarray]) -> None:
    arr = np.column_stack([np.asarray(c, float) for c in cols])
    df = pd.DataFrame(arr, columns=header)
    df.to_csv(fpath, index=False, float_format="%.10g", lineterminator="\n")


def slice_stream(rec: Recording, t0_ms: float, t1_ms: float, stream: str):
    """All samples with t0 <= t < t1 from the named stream, order preserved."""
    if stream == "gaze":
        t = rec.gaze.t_ms
        nominal_dt = 1000.0 / GAZE_RATE_HZ
    elif stream == "eeg":
        t = rec.eeg.t_ms
        nominal_dt = 1000.0 / EEG_RATE_HZ
    else:
        raise ValueError(f"unknown stream {stream!r}")
    if not t0_ms < t1_ms:
        raise RangeError(f"empty window [{t0_ms}, {t1_ms})")
    if len(t) == 0 or t0_ms < t[0] - nominal_dt or t1_ms > t[-1] + nominal_dt:
        raise RangeError(f"window [{t0_ms}, {t1_ms}) outside stream span")
    i0 = int(np.searchsorted(t, t0_ms, side="left"))
    i1 = int(np.searchsorted(t, t1_ms, side="left"))
    if stream == "gaze":
        return rec.gaze.take(slice(i0, i1))
    return EegStream(rec.eeg.t_ms[i0:i1], rec.eeg.data[:, i0:i1], rec.eeg.channels)
