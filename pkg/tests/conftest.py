"""Shared fixtures: small synthetic sessions generated once per test run."""
import numpy as np
import pytest

from gazeeg.dataset import GazeStream
from gazeeg.gaze import Geometry
from gazeeg.synth import SynthConfig, generate


@pytest.fixture(scope="session")
def gaze_only_dir(tmp_path_factory):
    """Two participants, gaze only — cheap input for detection tests."""
    out = tmp_path_factory.mktemp("synth_gaze")
    generate(SynthConfig(n_participants=2, trials_per_participant=10,
                         include_eeg=False, seed=5), out)
    return out


@pytest.fixture(scope="session")
def eeg_dir(tmp_path_factory):
    """One participant with EEG — input for preprocessing/epoching tests."""
    out = tmp_path_factory.mktemp("synth_eeg")
    generate(SynthConfig(n_participants=1, trials_per_participant=10, seed=9), out)
    return out / "p00"


@pytest.fixture
def geometry():
    """1000x1000 px screen mapped 1:1 to millimeters."""
    return Geometry((1000, 1000), (1000.0, 1000.0))


def make_stream(t_ms, x, y=None, valid=None, eye_dist_mm=600.0):
    """Monocular-style GazeStream with both eyes set to the same trace."""
    t_ms = np.asarray(t_ms, float)
    x = np.asarray(x, float)
    y = np.full_like(x, 0.5) if y is None else np.asarray(y, float)
    valid = np.ones(len(t_ms), bool) if valid is None else np.asarray(valid, bool)
    dist = np.full(len(t_ms), float(eye_dist_mm))
    return GazeStream(t_ms, x.copy(), y.copy(), valid.copy(),
                      x.copy(), y.copy(), valid.copy(), dist)
