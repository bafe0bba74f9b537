"""Cleaning chain: filters, channel repair, referencing, SOBI, epoching."""
import numpy as np
import pytest
from scipy import signal as sp_signal

from gazeeg.eeg import (EegMatrix, bandpass_chain, common_average_reference,
                        detect_bad_channels, epoch_fixations, epoch_srp,
                        interpolate_spherical, load_epochs, preprocess,
                        reject_artifact_components, save_epochs, sobi_unmix)
from gazeeg.errors import (AllRejected, FilterDesignError, TooFewChannels)
from gazeeg.gaze import Fixation, Saccade
from gazeeg.montage import CHANNELS_20, default_montage, montage_array

FS = 500.0


def matrix(data, fs=FS, channels=None, montage=True):
    data = np.atleast_2d(np.asarray(data, float))
    ch = channels or CHANNELS_20[:data.shape[0]]
    pos = montage_array(default_montage(), ch) if montage else None
    return EegMatrix(data, fs, ch, 0.0, pos)


def tone(freq, n=10000, fs=FS):
    return np.sin(2 * np.pi * freq * np.arange(n) / fs)


def measured_gain(freq, n=10000):
    x = matrix(tone(freq, n))
    y = bandpass_chain(x).data[0]
    core = slice(n // 4, 3 * n // 4)  # ignore filtfilt edge transients
    return np.std(y[core]) / np.std(tone(freq, n)[core])


# --- filter chain ---

def test_passband_gain_at_10hz():
    assert abs(measured_gain(10.0) - 1.0) <= 0.05


def test_mains_attenuation_at_50hz():
    assert 20 * np.log10(measured_gain(50.0)) <= -20.0


def test_dc_residual():
    x = matrix(np.full(10000, 7.0))
    y = bandpass_chain(x).data[0]
    core = slice(2500, 7500)
    assert np.max(np.abs(y[core])) <= 0.001 * 7.0


def test_zero_phase_at_10hz():
    n = 10000
    x = tone(10.0, n)
    y = bandpass_chain(matrix(x)).data[0]
    xc, yc = x[n // 4:3 * n // 4], y[n // 4:3 * n // 4]
    lags = np.arange(-25, 26)
    corr = [np.dot(xc[max(0, k):len(xc) + min(0, k)],
                   yc[max(0, -k):len(yc) + min(0, -k)]) for k in lags]
    assert lags[int(np.argmax(corr))] == 0


def test_filter_rejects_low_rate():
    with pytest.raises(FilterDesignError):
        bandpass_chain(matrix(np.zeros(1000), fs=100.0))


def test_filter_preserves_shape_and_input():
    rng = np.random.default_rng(0)
    data = rng.standard_normal((20, 2000))
    x = matrix(data.copy())
    y = bandpass_chain(x)
    assert y.data.shape == data.shape
    np.testing.assert_array_equal(x.data, data)


# --- bad channels ---

def correlated_data(n_ch=20, n=8000, seed=0):
    rng = np.random.default_rng(seed)
    common = sp_signal.sosfiltfilt(
        sp_signal.butter(2, 30.0, fs=FS, output="sos"), rng.standard_normal(n))
    return np.outer(1.0 + 0.1 * rng.standard_normal(n_ch), common) \
        + 0.05 * rng.standard_normal((n_ch, n))


def test_flat_channel_flagged():
    data = correlated_data()
    data[7] = 0.0
    assert detect_bad_channels(matrix(data)) == {7}


def test_independent_noise_channel_flagged():
    data = correlated_data()
    data[3] = 5.0 * np.random.default_rng(9).standard_normal(data.shape[1])
    assert 3 in detect_bad_channels(matrix(data))


def test_healthy_channels_not_flagged():
    assert detect_bad_channels(matrix(correlated_data())) == set()


# --- spherical interpolation ---

def test_interpolate_constant_field():
    data = np.ones((20, 100)) * 4.2
    out = interpolate_spherical(matrix(data), {5})
    np.testing.assert_allclose(out.data[5], 4.2, rtol=1e-6)


def test_interpolate_identity_without_bad():
    data = np.random.default_rng(1).standard_normal((20, 50))
    out = interpolate_spherical(matrix(data), set())
    np.testing.assert_array_equal(out.data, data)
    assert out.data is not data


def test_interpolate_smooth_field_accuracy():
    # field = linear function of sensor position: smooth across the scalp
    pos = montage_array(default_montage(), CHANNELS_20)
    rng = np.random.default_rng(2)
    weights = rng.standard_normal((3, 40))
    data = pos @ weights
    bad_idx = CHANNELS_20.index("Cz")
    out = interpolate_spherical(matrix(data.copy()), {bad_idx})
    truth, est = data[bad_idx], out.data[bad_idx]
    r = np.corrcoef(truth, est)[0, 1]
    assert r >= 0.9


def test_interpolate_needs_enough_good():
    data = np.random.default_rng(3).standard_normal((5, 50))
    with pytest.raises(TooFewChannels):
        interpolate_spherical(matrix(data), {0, 1})


# --- CAR ---

def test_car_zero_mean_and_idempotent():
    data = np.random.default_rng(4).standard_normal((20, 300))
    y = common_average_reference(matrix(data))
    np.testing.assert_allclose(y.data.mean(axis=0), 0.0, atol=1e-12)
    y2 = common_average_reference(y)
    np.testing.assert_allclose(y2.data, y.data, atol=1e-12)


def test_car_single_channel_zeros():
    y = common_average_reference(matrix(np.random.default_rng(5).standard_normal(100)))
    np.testing.assert_allclose(y.data, 0.0, atol=1e-12)


# --- SOBI ---

def ar_sources(n=20000, seed=0):
    """Two AR(1) sources with distinct autocorrelation."""
    rng = np.random.default_rng(seed)
    e = rng.standard_normal((2, n))
    s = np.zeros((2, n))
    for i, phi in enumerate((0.95, -0.6)):
        for t in range(1, n):
            s[i, t] = phi * s[i, t - 1] + e[i, t]
    return s


def test_sobi_recovers_planted_ar_sources():
    s = ar_sources()
    mix = np.array([[1.0, 0.6], [0.4, 1.0]])
    res = sobi_unmix(mix @ s)
    best = np.abs(np.corrcoef(np.vstack([s, res.sources]))[:2, 2:])
    # each true source matched by some recovered component
    assert best.max(axis=1).min() >= 0.95


def test_sobi_reconstruction_identity():
    rng = np.random.default_rng(6)
    data = rng.standard_normal((6, 5000))
    res = sobi_unmix(data)
    recon = res.mixing @ res.sources + data.mean(axis=1, keepdims=True)
    err = np.linalg.norm(recon - data) / np.linalg.norm(data)
    assert err <= 1e-6


def test_sobi_objective_monotone():
    s = ar_sources(seed=7)
    mix = np.array([[1.0, 0.3], [0.7, 1.0]])
    res = sobi_unmix(mix @ s)
    hist = res.off_mass
    assert all(b <= a + 1e-12 for a, b in zip(hist, hist[1:]))
    assert res.converged


def test_sobi_diagonal_input_near_identity():
    s = ar_sources(seed=8)
    res = sobi_unmix(s)
    best = np.abs(np.corrcoef(np.vstack([s, res.sources]))[:2, 2:])
    assert best.max(axis=1).min() >= 0.99


def test_sobi_too_few_samples():
    with pytest.raises(ValueError):
        sobi_unmix(np.random.default_rng(0).standard_normal((4, 40)), n_lags=50)


# --- artifact rejection ---

def test_blink_component_removed():
    rng = np.random.default_rng(10)
    n = 20000
    brain = sp_signal.sosfiltfilt(
        sp_signal.butter(2, [2, 30], btype="bandpass", fs=FS, output="sos"),
        rng.standard_normal((4, n)))
    t = np.arange(n)
    blink = np.zeros(n)
    for c in range(1000, n - 1000, 2500):
        blink += 60.0 * np.exp(-0.5 * ((t - c) / 40.0) ** 2)
    ch = ["Fp1", "Fp2", "Pz", "Oz"]
    mixing = rng.standard_normal((4, 4)) * 0.5 + np.eye(4)
    data = mixing @ brain
    data[0] += blink
    data[1] += 0.9 * blink
    x = matrix(data, channels=ch)
    res = sobi_unmix(x)
    cleaned, rejected = reject_artifact_components(res.unmixing, res.sources, x)
    assert rejected
    # residual blink energy at Fp1 <= 10% of what was injected
    proj = np.dot(cleaned.data[0] - cleaned.data[0].mean(),
                  blink - blink.mean()) / np.linalg.norm(blink - blink.mean()) ** 2
    assert abs(proj) <= 0.10


def test_no_rejection_reconstruction_exact():
    rng = np.random.default_rng(11)
    data = sp_signal.sosfiltfilt(
        sp_signal.butter(2, [2, 30], btype="bandpass", fs=FS, output="sos"),
        rng.standard_normal((4, 8000)))
    x = matrix(data, channels=["C3", "C4", "P3", "P4"])
    res = sobi_unmix(x)
    cleaned, rejected = reject_artifact_components(
        res.unmixing, res.sources, x,
        ocular_corr_threshold=1.1, kurtosis_threshold=np.inf)
    assert rejected == []
    err = np.linalg.norm(cleaned.data - data) / np.linalg.norm(data)
    assert err <= 1e-6


def test_all_rejected_raises():
    x = matrix(np.zeros((4, 2000)), channels=["C3", "C4", "P3", "P4"])
    W = np.eye(4)
    S = np.zeros((4, 2000))  # zero-variance components all match the spike rule
    with pytest.raises(AllRejected):
        reject_artifact_components(W, S, x)


# --- full chain on generator output ---

def test_preprocess_generator_recording(eeg_dir):
    from gazeeg.dataset import load_recording
    rec = load_recording(eeg_dir)
    x = EegMatrix.from_recording(rec)
    y, info = preprocess(x, n_lags=20)
    assert y.data.shape == x.data.shape
    np.testing.assert_allclose(y.data.mean(axis=0), 0.0, atol=1e-6)
    assert len(info.bad_channels) <= 2


# --- epoching ---

def test_epoch_arithmetic():
    x = matrix(np.random.default_rng(12).standard_normal((20, 5000)))
    fixs = [Fixation(1000.0, 250.0, (0.0, 0.0), 15),
            Fixation(2000.0, 60.0, (0.0, 0.0), 4),
            Fixation(9900.0, 300.0, (0.0, 0.0), 18)]
    eps, skipped = epoch_fixations(x, fixs, "p00")
    assert [e.n_samples for e in eps] == [125, 30]
    assert skipped == 1
    i0 = x.sample_index(1000.0)
    np.testing.assert_array_equal(eps[0].data, x.data[:, i0:i0 + 125])


def test_epoch_srp_window():
    x = matrix(np.random.default_rng(13).standard_normal((20, 2000)))
    saccs = [Saccade(900.0, 940.0)]
    eps, skipped = epoch_srp(x, saccs, 1000.0)
    assert skipped == 0
    assert eps[0].n_samples == 500
    assert eps[0].onset_ms == 920.0
    i0 = x.sample_index(920.0)
    np.testing.assert_array_equal(eps[0].data, x.data[:, i0:i0 + 500])


def test_epoch_srp_skips_past_end():
    x = matrix(np.random.default_rng(14).standard_normal((20, 600)))
    eps, skipped = epoch_srp(x, [Saccade(400.0, 440.0)], 1000.0)
    assert eps == [] and skipped == 1


# --- container round-trip ---

def test_epoch_container_roundtrip(tmp_path):
    rng = np.random.default_rng(15)
    eps = [  # ragged lengths, mixed labels
        __import__("gazeeg.eeg", fromlist=["Epoch"]).Epoch(
            rng.standard_normal((3, n)), 10.0 * n, 2.0 * n,
            label=("target" if n % 2 else None), trial_id=n,
            participant_id="p01", scene_domain="workshop")
        for n in (30, 125, 77)]
    p = tmp_path / "epochs.bin"
    save_epochs(p, eps, ["C3", "C4", "Pz"], FS, {"seed": 1})
    out, ch, fs, prov = load_epochs(p)
    assert ch == ["C3", "C4", "Pz"] and fs == FS and prov == {"seed": 1}
    for a, b in zip(eps, out):
        np.testing.assert_array_equal(a.data, b.data)
        assert (a.label, a.trial_id, a.participant_id) == \
               (b.label, b.trial_id, b.participant_id)
