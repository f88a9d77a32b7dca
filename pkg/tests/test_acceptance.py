"""Acceptance criteria, one pass/fail line each (printed in the terminal summary).

Run alone with ``pytest tests/test_acceptance.py -s``; the end-to-end checks
are marked ``slow`` and take several minutes on one core.
"""

import json
import os
import time

import numpy as np
import pytest
import scipy.linalg
from scipy import signal

from conftest import ACCEPTANCE_LINES
from eareeg import cli
from eareeg import pipeline as pl
from eareeg.features import (WelchConfig, ar_order_for, autocovariance, extract_features,
                             feature_dim, hjorth, levinson_durbin, spectral_entropy, welch_psd,
                             yule_walker)
from eareeg.model import ModelConfig, count_parameters, init_mlp
from eareeg.preprocess import BANDPASS, NOTCH, Segment, apply_filter
from gradcheck import relative_errors

FS = 1000.0
TOL_GRAD = 1e-4


def record(name, ok, detail=""):
    ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, f"{name}: {detail}"


def timed(fn):
    t0 = time.perf_counter()
    value = fn()
    return value, time.perf_counter() - t0


def test_feature_dimensionality():
    rng = np.random.default_rng(0)
    seg = Segment(0, rng.standard_normal((8, 2000)))
    full = extract_features(seg).values.size
    seven = extract_features(Segment(0, seg.channels[:7])).values.size
    record("feature dimensionality", full == 272 and seven == 238,
           f"8 channels -> {full}, 7 channels -> {seven}")


def test_ar_order_consistency():
    p = ar_order_for(272, 8, 20)
    ok = p == 10 and feature_dim(8, 20, 10) == 8 * (20 + 10 + 4) == 272
    record("AR order consistency", ok, f"p = {p}, C*(20+p+4) = {feature_dim(8, 20, p)}")


def _parseval():
    x = np.random.default_rng(1).standard_normal(100_000)
    psd = welch_psd(x, WelchConfig())
    df = psd.freqs_hz[1] - psd.freqs_hz[0]
    return psd.power.sum() * df / x.var()


def _tone_bin():
    x = np.sin(2 * np.pi * 39.0625 * np.arange(2000) / FS)
    return int(np.argmax(welch_psd(x, WelchConfig()).power))


def _rms_ratio(spec, f):
    t = np.arange(20_000) / FS
    x = np.sin(2 * np.pi * f * t)
    y = apply_filter(x, spec, FS)
    return np.sqrt(np.mean(y[2000:-2000] ** 2) / np.mean(x[2000:-2000] ** 2))


def _mobility_error():
    x = np.sin(2 * np.pi * 10.0 * np.arange(10_000) / FS)
    return abs(hjorth(x).mobility / (2 * np.sin(np.pi * 10.0 / FS)) - 1)


def _entropy_range():
    rng = np.random.default_rng(2)
    for n in rng.integers(2, 300, 1000):
        h = spectral_entropy(rng.exponential(size=n) * rng.uniform(0, 3, n))
        if not -1e-12 <= h <= np.log2(n) + 1e-12:
            return False
    return True


DSP_ORACLES = {
    "Welch Parseval (5%)": (_parseval, lambda v: abs(v - 1) < 0.05),
    "39.0625 Hz tone at bin 10": (_tone_bin, lambda v: v == 10),
    "notch >= 40 dB at 50 Hz": (lambda: -20 * np.log10(_rms_ratio(NOTCH, 50.0)), lambda v: v >= 40),
    "band-pass gain at 10 Hz (5%)": (lambda: _rms_ratio(BANDPASS, 10.0), lambda v: abs(v - 1) < 0.05),
    "Hjorth mobility of a tone (1%)": (_mobility_error, lambda v: v < 0.01),
    "entropy within [0, log2 nbins]": (_entropy_range, bool),
}


@pytest.mark.parametrize("name", list(DSP_ORACLES))
def test_dsp_oracle(name):
    fn, check = DSP_ORACLES[name]
    value, secs = timed(fn)
    record(f"DSP oracle, {name}", check(value) and secs < 1.0, f"value {value:.6g}, {secs:.3f} s")


def test_yule_walker_recovery():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    a = np.array([-1.0, 0.5])
    x = signal.lfilter([1.0], np.r_[1.0, a], rng.standard_normal(101_000))[1000:]
    err_yw = np.max(np.abs(yule_walker(x, 2).coeffs - a))
    y = signal.lfilter([1.0], [1.0, -0.6, 0.2], rng.standard_normal(5000))
    err_ld = 0.0
    for p in range(1, 11):
        r = autocovariance(y, p)
        direct = scipy.linalg.solve(scipy.linalg.toeplitz(r[:p]), -r[1 : p + 1])
        err_ld = max(err_ld, np.max(np.abs(levinson_durbin(r, p)[0] - direct)))
    secs = time.perf_counter() - t0
    record("Yule-Walker recovery", err_yw < 0.05 and err_ld < 1e-8 and secs < 5,
           f"AR(2) Linf error {err_yw:.4f}, Levinson vs solve {err_ld:.2e}, {secs:.2f} s")


def _grad_inputs(m, n=16, seed=4):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, m.config.input_dim))
    Y = np.eye(6)[rng.integers(0, 6, n)]
    Y[:3] = rng.dirichlet(np.ones(6), 3)
    cw = rng.uniform(0.5, 2.0, 6)
    return X, Y, cw


def test_gradient_check_reduced_width():
    m = init_mlp(ModelConfig(hidden_dims=(64, 32, 16, 8), rng_seed=5))
    X, Y, cw = _grad_inputs(m)
    errs, secs = timed(lambda: relative_errors(m, X, Y, cw, 1e-3, batch_stats=True))
    record("gradient check, all parameters at widths 64-32-16-8",
           errs.max() < TOL_GRAD and secs < 120,
           f"{errs.size} parameters, max relative error {errs.max():.2e}, {secs:.1f} s")


def test_gradient_check_full_width_spot():
    m = init_mlp(ModelConfig(rng_seed=6))
    X, Y, cw = _grad_inputs(m, seed=7)
    errs = relative_errors(m, X, Y, cw, 1e-3, batch_stats=True,
                           rng=np.random.default_rng(8), n_random=100)
    record("gradient check, 100 random parameters at full width", errs.max() < TOL_GRAD,
           f"max relative error {errs.max():.2e}")


def test_parameter_count():
    n = count_parameters(init_mlp(ModelConfig()))
    record("parameter count", n == 114_278, f"{n} trainable parameters")


def test_protocol_hygiene():
    cfg = pl.config_from_dict({"seed": 11, "synth": {"n_subjects": 4, "duration_s": 61.0},
                               "augment": {"target_multiplier": 3.0, "raw_rounds": 1}})
    audit = pl.AccessAudit()
    data = pl.prepare_data(pl.clean_recordings(pl.synthesize(cfg), cfg), cfg, audit)
    aug, fit = audit.splits_seen("augment"), audit.splits_seen("standardize_fit")
    tr, va, te = (set(data.extra[k].tolist()) for k in ("train_idx", "val_idx", "test_idx"))
    disjoint = not (tr & va or tr & te or va & te)
    record("protocol hygiene", aug == {"train"} and fit == {"train"} and disjoint,
           f"augment saw {sorted(aug)}, standardizer fit saw {sorted(fit)}, "
           f"splits disjoint: {disjoint}")


@pytest.fixture(scope="module")
def e2e_runs(tmp_path_factory):
    """The default pipeline, through the CLI, twice with the same seed."""
    root = tmp_path_factory.mktemp("e2e")
    cfg_path = root / "config.json"
    cfg_path.write_text(json.dumps({"seed": 0}))
    runs = []
    for name in ("run1", "run2"):
        out = root / name
        t0 = time.perf_counter()
        code = cli.main(["pipeline", "--config", str(cfg_path), "--out", str(out)])
        runs.append((code, out, time.perf_counter() - t0))
    return runs


@pytest.mark.slow
def test_end_to_end_accuracy(e2e_runs):
    code, out, secs = e2e_runs[0]
    report = json.loads((out / "report.json").read_text())
    split = json.loads((out / "split.json").read_text())
    acc = report["overall_accuracy"]
    record("end-to-end synthetic identification",
           code == 0 and acc >= 0.90 and secs < 600,
           f"accuracy {acc:.4f} on {report['n_test']} test segments, "
           f"{split['n_train_augmented']} training vectors from {split['n_train_segments']} "
           f"segments, {secs:.0f} s")


@pytest.mark.slow
def test_report_determinism(e2e_runs):
    (c1, o1, _), (c2, o2, _) = e2e_runs
    same = c1 == c2 == 0 and (o1 / "report.json").read_bytes() == (o2 / "report.json").read_bytes()
    record("determinism, byte-identical report JSON", same,
           "two runs with seed 0 " + ("match" if same else "differ"))


@pytest.mark.slow
def test_reference_comparison_harness():
    # a real recording set can be pointed to with EAREEG_DATASET; otherwise a
    # small synthetic cohort shows the harness end to end
    data_dir = os.environ.get("EAREEG_DATASET")
    if data_dir:
        cfg = pl.config_from_dict({"seed": 0, "recordings": [data_dir]})
    else:
        cfg = pl.config_from_dict({"seed": 0, "synth": {"n_subjects": 6, "duration_s": 121.0},
                                   "model": {"max_epochs": 30}})
    text = pl.reference_comparison(cfg)
    lines = text.splitlines()
    print("\n" + text)
    ok = sum("FC: 256-128-64-32" in ln for ln in lines) == 2 and "81.0" in text
    source = data_dir or "synthetic cohort"
    record("reference comparison harness", ok,
           f"({source}) " + "; ".join(ln.split()[2] + "% " + ln.split()[-1]
                                      for ln in lines[1:3]) + " vs reference 81.0%")
