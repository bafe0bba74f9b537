"""Acceptance suite: one test per release criterion.

Each test prints a single machine-greppable pass/fail line of the form
``criterion NN: PASS|FAIL -- <summary with measured values>`` before its
assertions fire, so a full run documents every criterion even when one
fails. The end-to-end checks (7-9) generate data and train many SVMs on
one core; expect the whole module to take several minutes.
"""
import json
import time

import numpy as np

from gazeeg.dataset import load_recording
from gazeeg.eeg import EegMatrix, bandpass_chain, sobi_unmix
from gazeeg.evaluation import (Condition, prepare_recording,
                               report, run_condition, run_evaluation)
from gazeeg.features import (band_power, csp_fit, dfa_alpha, higuchi_fd,
                             hjorth, petrosian_fd)
from gazeeg.gaze import Geometry, IvtParams, detect_fixations
from gazeeg.learn import kernel_matrix, svm_fit
from gazeeg.montage import CHANNELS_20
from gazeeg.synth import SynthConfig, generate

from test_eeg import ar_sources
from test_evaluation import make_records
from test_features import brute_force_filters, make_epoch, toy_epochs
from test_gaze import match_planted
from test_learn import default_grid, four_point_problems, qp_enumerate

FS = 500.0


def check(num: int, summary: str, *conditions: bool):
    ok = all(conditions)
    print(f"criterion {num:02d}: {'PASS' if ok else 'FAIL'} -- {summary}")
    assert ok, f"criterion {num} failed: {summary}"


# --- 1: fixation detection oracle ---

def test_criterion_01_fixation_recovery(tmp_path):
    cfg = SynthConfig(n_participants=8, trials_per_participant=40,
                      gaze_jitter_deg=0.15, include_eeg=False, seed=101)
    paths = generate(cfg, tmp_path)
    tp = fp = fn = 0
    elapsed = 0.0
    for p in paths:
        rec = load_recording(p)
        truth = json.loads((p / "truth.json").read_text())
        t0 = time.perf_counter()
        fixs, _ = detect_fixations(rec.gaze, IvtParams(), Geometry.of(rec),
                                   rec.events)
        elapsed += time.perf_counter() - t0
        a, b, c = match_planted(rec, truth, fixs)
        tp, fp, fn = tp + a, fp + b, fn + c
    f1 = 2 * tp / (2 * tp + fp + fn)
    check(1, f"planted-fixation F1={f1:.4f} (>=0.95), "
             f"detection time {elapsed:.1f}s (<10s)",
          f1 >= 0.95, elapsed < 10.0)


# --- 2: filter chain ---

def _chain_response(freq: float, n: int = 10000) -> np.ndarray:
    t = np.arange(n) / FS
    x = np.sin(2 * np.pi * freq * t)[None, :]
    out = bandpass_chain(EegMatrix(x.copy(), FS, ["Cz"])).data[0]
    return x[0], out


def test_criterion_02_filter_chain():
    def gain(freq):
        x, y = _chain_response(freq)
        mid = slice(2500, 7500)  # ignore filter edges
        return y[mid].std() / x[mid].std()

    g10 = gain(10.0)
    g50_db = 20.0 * np.log10(gain(50.0))
    dc = bandpass_chain(EegMatrix(np.full((1, 10000), 100.0), FS, ["Cz"]))
    dc_resid = np.abs(dc.data[0][2500:7500]).max() / 100.0

    x, y = _chain_response(10.0)
    mid = slice(2500, 7500)
    lags = np.arange(-25, 26)
    xc = [np.dot(y[mid], np.roll(x, k)[mid]) for k in lags]
    lag = int(lags[int(np.argmax(xc))])

    check(2, f"10Hz gain={g10:.4f} (1±0.05), 50Hz={g50_db:.1f}dB (<=-20), "
             f"DC residual={dc_resid:.2e} (<=1e-3), xcorr peak lag={lag} (0)",
          abs(g10 - 1.0) <= 0.05, g50_db <= -20.0, dc_resid <= 1e-3, lag == 0)


# --- 3: feature ground truths ---

def test_criterion_03_feature_ground_truths():
    n, n_seeds = 5000, 20
    hig, dfa_w, dfa_rw = [], [], []
    for seed in range(n_seeds):
        rng = np.random.default_rng(seed)
        white = rng.standard_normal(n)
        hig.append(higuchi_fd(white))
        dfa_w.append(dfa_alpha(white))
        dfa_rw.append(dfa_alpha(np.cumsum(rng.standard_normal(n))))
    hig_m, dfa_w_m, dfa_rw_m = map(np.mean, (hig, dfa_w, dfa_rw))

    pet_ramp = petrosian_fd(np.arange(1000, dtype=float))

    t = np.arange(n) / FS
    sine = np.sin(2 * np.pi * 10.0 * t)
    mobility, _ = hjorth(sine)
    mob_ref = 2.0 * np.sin(np.pi / 50.0)  # discrete-difference 10 Hz @ 500 Hz
    alpha_share = band_power(sine, FS)[2]

    check(3, f"Higuchi white={hig_m:.3f} (2.0±0.1), DFA white={dfa_w_m:.3f} "
             f"(0.5±0.05), DFA walk={dfa_rw_m:.3f} (1.5±0.1), "
             f"Petrosian ramp={pet_ramp} (==1.0), Hjorth mobility "
             f"rel.err={abs(mobility - mob_ref) / mob_ref:.2e} (<=0.01), "
             f"alpha share={alpha_share:.3f} (>=0.95)",
          abs(hig_m - 2.0) <= 0.1, abs(dfa_w_m - 0.5) <= 0.05,
          abs(dfa_rw_m - 1.5) <= 0.1, pet_ramp == 1.0,
          abs(mobility - mob_ref) / mob_ref <= 0.01, alpha_share >= 0.95)


# --- 4: CSP correctness ---

def test_criterion_04_csp():
    eps, _ = toy_epochs()
    model = csp_fit(eps, n_components=2)
    _, ref_filters = brute_force_filters(eps)
    cos = abs(model.filters[0] @ ref_filters[0]) / (
        np.linalg.norm(model.filters[0]) * np.linalg.norm(ref_filters[0]))

    rng = np.random.default_rng(4)
    same = [make_epoch(rng.standard_normal((4, 80)),
                       label=("target", "nontarget")[i % 2]) for i in range(240)]
    lam = csp_fit(same, n_components=4).eigenvalues
    lam_ok = bool(np.all((lam >= 0.45) & (lam <= 0.55)))

    shuffled = [eps[i] for i in rng.permutation(len(eps))]
    scaled = [make_epoch(3.7 * e.data, label=e.label) for e in eps]
    inv = []
    for variant in (shuffled, scaled):
        m2 = csp_fit(variant, n_components=2)
        c = abs(m2.filters[0] @ model.filters[0]) / (
            np.linalg.norm(m2.filters[0]) * np.linalg.norm(model.filters[0]))
        inv.append(c >= 0.999)

    check(4, f"leading-filter cosine={cos:.4f} (>=0.95), identical-class "
             f"lambda range [{lam.min():.3f},{lam.max():.3f}] (in [0.45,0.55]), "
             f"order/scale invariant={all(inv)}",
          cos >= 0.95, lam_ok, all(inv))


# --- 5: SOBI ---

def test_criterion_05_sobi():
    s = ar_sources()
    res = sobi_unmix(np.array([[1.0, 0.6], [0.4, 1.0]]) @ s)
    corr = np.abs(np.corrcoef(np.vstack([s, res.sources]))[:2, 2:])
    worst = corr.max(axis=1).min()

    data = np.random.default_rng(6).standard_normal((6, 5000))
    res2 = sobi_unmix(data)
    recon = res2.mixing @ res2.sources + data.mean(axis=1, keepdims=True)
    err = np.linalg.norm(recon - data) / np.linalg.norm(data)

    check(5, f"AR source |corr|={worst:.4f} (>=0.95), reconstruction "
             f"rel.err={err:.2e} (<=1e-6)", worst >= 0.95, err <= 1e-6)


# --- 6: SVM vs enumerated dual QP ---

def test_criterion_06_svm():
    agree = 0
    cells = default_grid()
    problems = four_point_problems()
    for spec in cells:
        for X, y_enc in problems:
            labels = np.where(y_enc > 0, "target", "nontarget")
            model = svm_fit(X, labels, spec)
            ref_alpha, ref_b, gamma = qp_enumerate(X, y_enc, spec)
            sv_ok = set(model.support_idx.tolist()) == \
                set(np.where(ref_alpha > 1e-8)[0].tolist())
            Z = np.vstack([X, np.random.default_rng(7).standard_normal((6, 2))])
            ref_dec = (ref_alpha * y_enc) @ kernel_matrix(spec, X, Z, gamma) + ref_b
            dec_ok = np.allclose(model.decision_function(Z), ref_dec, atol=1e-4)
            agree += sv_ok and dec_ok

    X = np.array([[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]])
    y = np.array(["a", "a", "b", "b"])
    from gazeeg.learn import SvmSpec
    xor_model = svm_fit(X, y, SvmSpec("rbf", C=10.0, gamma=1.0))
    xor_acc = float(np.mean(xor_model.predict(X) == y))

    total = len(cells) * len(problems)
    check(6, f"QP agreement {agree}/{total} grid-cell problems "
             f"(support sets identical, decisions ±1e-4), XOR rbf "
             f"accuracy={xor_acc:.2f} (==1.0)", agree == total, xor_acc == 1.0)


# --- 7-9: end-to-end checks on generated data ---

def _prepare_dir(path):
    records = []
    for p in sorted(d for d in path.iterdir() if d.is_dir()):
        records.extend(prepare_recording(load_recording(p)))
    return records


BOTH = Condition("cross_user", "both->both", ("workshop", "desktop"), "both")


def test_criterion_07_signal_check(tmp_path):
    t0 = time.perf_counter()
    cfg = SynthConfig(n_participants=10, trials_per_participant=60,
                      bump_amplitude_uv=4.0, noise_scale_uv=0.6, seed=11)
    generate(cfg, tmp_path)
    records = _prepare_dir(tmp_path)
    res = run_condition(records, BOTH, "fusion", FS, CHANNELS_20, k=10, seed=0)
    elapsed = time.perf_counter() - t0
    check(7, f"cross-user both->both fusion accuracy={res.mean_accuracy:.4f} "
             f"±{res.ci95:.4f} (>=0.75), runtime {elapsed:.0f}s (<=600s)",
          res.mean_accuracy >= 0.75, elapsed <= 600.0)


def test_criterion_08_null_check(tmp_path):
    # amplitude 0 also disables the duration effect in the generator
    cfg = SynthConfig(n_participants=10, trials_per_participant=60,
                      bump_amplitude_uv=0.0, noise_scale_uv=0.6, seed=11)
    generate(cfg, tmp_path)
    records = _prepare_dir(tmp_path)
    res = run_condition(records, BOTH, "fusion", FS, CHANNELS_20, k=10, seed=0)
    check(8, f"null-effect fusion accuracy={res.mean_accuracy:.4f} "
             f"(0.50±0.07)", abs(res.mean_accuracy - 0.5) <= 0.07)


def test_criterion_09_ordering(tmp_path):
    wins = {"fusion>=csp15": 0, "fusion>=gaze": 0, "srp<fusion": 0}
    n_seeds = 5
    for seed in range(n_seeds):
        d = tmp_path / f"s{seed}"
        # noise level where neither modality dominates, as in the reference
        # orderings this mirrors; amplitude/duration effects at defaults
        generate(SynthConfig(n_participants=8, trials_per_participant=60,
                             noise_scale_uv=1.3, seed=100 + seed), d)
        records = _prepare_dir(d)
        acc = {fs: run_condition(records, BOTH, fs, FS, CHANNELS_20,
                                 k=4, seed=0).mean_accuracy
               for fs in ("fusion", "csp15", "gaze", "srp")}
        wins["fusion>=csp15"] += acc["fusion"] >= acc["csp15"]
        wins["fusion>=gaze"] += acc["fusion"] >= acc["gaze"]
        wins["srp<fusion"] += acc["srp"] < acc["fusion"]
    need = n_seeds // 2 + 1
    check(9, f"majority over {n_seeds} seeds: " +
             ", ".join(f"{k} {v}/{n_seeds}" for k, v in wins.items()),
          *(v >= need for v in wins.values()))


# --- 10: determinism ---

def test_criterion_10_determinism(tmp_path):
    records = make_records(n_participants=4, trials=30, seed=3)
    outs = []
    for run in ("a", "b"):
        results = run_evaluation(records, FS, CHANNELS_20,
                                 splits=("cross_user",),
                                 feature_sets=("gaze", "csp15"), k=4, seed=0)
        report(results, tmp_path / run)
        outs.append((tmp_path / run / "report.csv").read_bytes())
    check(10, f"report.csv byte-identical across two runs "
              f"({len(outs[0])} bytes)", outs[0] == outs[1])


# --- 11: seven-condition harness ---

def test_criterion_11_seven_conditions(tmp_path):
    records = make_records(n_participants=4, trials=40, seed=5)
    fsets = ("gaze", "csp15")
    results = run_evaluation(records, FS, CHANNELS_20,
                             splits=("within_user", "cross_user"),
                             feature_sets=fsets, k=4, seed=0)
    report(results, tmp_path)
    rows = json.loads((tmp_path / "report.json").read_text())["rows"]
    combos = {(r["split"], r["condition"], r["feature_set"]) for r in rows}
    names = [
        "both->both", "W->W", "D->W", "W+D->W", "D->D", "W->D", "W+D->D",
    ]
    expected = {(s, c, f) for s in ("within_user", "cross_user")
                for c in names for f in fsets}
    check(11, f"report has {len(rows)} rows covering "
              f"{len(combos)}/{len(expected)} (split, condition, feature-set) "
              f"combinations; no extras={combos <= expected}",
          len(rows) == len(expected), combos == expected)
