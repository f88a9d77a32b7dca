import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eareeg.errors import DataError
from eareeg.model import (ModelConfig, count_parameters, dropout_mask, forward, gradients,
                          init_mlp, l2_penalty, load_model, loss, predict, predict_proba,
                          save_model, softmax, train, backward_and_step, AdamState)

from gradcheck import relative_errors


def count_oracle(input_dim, hidden, k):
    dims = [input_dim, *hidden, k]
    dense = sum(o * i + o for i, o in zip(dims[:-1], dims[1:]))
    return dense + sum(2 * h for h in hidden)


@pytest.mark.parametrize("hidden", [(256, 128, 64, 32), (128, 64, 32), (512, 256, 128, 64),
                                    (128, 128, 64, 64)])
def test_parameter_count(hidden):
    m = init_mlp(ModelConfig(hidden_dims=hidden, n_classes=6))
    assert count_parameters(m) == count_oracle(272, hidden, 6)


def test_default_parameter_count_is_114278():
    assert count_parameters(init_mlp(ModelConfig(n_classes=6))) == 114_278


def test_init_shapes_and_determinism():
    cfg = ModelConfig(rng_seed=4)
    a, b = init_mlp(cfg), init_mlp(cfg)
    for k in a.params:
        np.testing.assert_array_equal(a.params[k], b.params[k])
    assert a.params["0.w"].shape == (256, 272)
    assert a.params["out.w"].shape == (6, 32)
    assert np.all(a.params["0.b"] == 0) and np.all(a.params["2.gamma"] == 1)
    assert a.params["0.w"].std() == pytest.approx(math.sqrt(2 / 272), rel=0.05)
    with pytest.raises(ValueError):
        init_mlp(ModelConfig(hidden_dims=(0, 3)))


def test_forward_rows_are_probabilities(rng):
    m = init_mlp(ModelConfig())
    X = rng.standard_normal((17, 272)) * 5
    for mode in ("eval", "train"):
        p, _ = forward(m, X, mode, rng=rng)
        np.testing.assert_allclose(p.sum(axis=1), 1, atol=1e-9)
        assert np.all((p > 0) & (p < 1))
    p1 = predict_proba(m, X)
    np.testing.assert_array_equal(p1, predict_proba(m, X))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000), c=st.floats(-500, 500), scale=st.floats(0.1, 300))
def test_softmax_shift_invariance_and_overflow(seed, c, scale):
    z = np.random.default_rng(seed).standard_normal((4, 6)) * scale
    p = softmax(z)
    assert np.all(np.isfinite(p))
    np.testing.assert_allclose(p.sum(axis=1), 1, atol=1e-12)
    np.testing.assert_allclose(softmax(z + c), p, atol=1e-12)


def test_forward_errors(rng):
    m = init_mlp(ModelConfig())
    with pytest.raises(DataError):
        forward(m, rng.standard_normal((3, 10)))
    with pytest.raises(DataError):
        forward(m, rng.standard_normal((1, 272)), "train", rng=rng)


def test_loss_values():
    y = np.eye(6)[[1, 3]]
    assert loss(y, y) <= 1e-6
    uniform = np.full((2, 6), 1 / 6)
    assert loss(uniform, y) == pytest.approx(math.log(6))
    assert math.log(6) == pytest.approx(1.7918, abs=1e-4)
    m = init_mlp(ModelConfig())
    base = loss(uniform, y, None, m, 0.0)
    assert loss(uniform, y, None, m, 0.01) == pytest.approx(base + 0.01 * l2_penalty(m))
    with pytest.raises(DataError):
        loss(uniform, np.full((2, 6), 0.5))


def test_loss_class_weighting():
    y = np.eye(3)[[0, 1]]
    p = np.array([[0.5, 0.25, 0.25], [0.2, 0.6, 0.2]])
    w = np.array([2.0, 0.5, 1.0])
    expected = (2.0 * -math.log(0.5) + 0.5 * -math.log(0.6)) / 2
    assert loss(p, y, w) == pytest.approx(expected)
    soft = np.array([[0.3, 0.7, 0.0]])
    expected = -(0.3 * 2.0 + 0.7 * 0.5) * (0.3 * math.log(0.5) + 0.7 * math.log(0.25))
    assert loss(p[:1], soft, w) == pytest.approx(expected)


def test_l2_excludes_biases_and_bn(rng):
    m = init_mlp(ModelConfig(hidden_dims=(8, 4), input_dim=5, n_classes=3))
    base = l2_penalty(m)
    m.params["0.b"] += 3.0
    m.params["1.gamma"] *= 7.0
    m.params["out.b"] -= 2.0
    assert l2_penalty(m) == base
    w = m.params["1.w"]
    before = l2_penalty(m)
    w[0, 0] = abs(w[0, 0]) + 1.0
    assert l2_penalty(m) > before


def small_model(seed=0, hidden=(7, 5, 4), d=6, k=3):
    return init_mlp(ModelConfig(input_dim=d, hidden_dims=hidden, n_classes=k, rng_seed=seed))


@pytest.mark.parametrize("batch_stats", [True, False])
def test_gradients_match_finite_differences(rng, batch_stats):
    m = small_model()
    for k in m.running:
        m.running[k] = m.running[k] + rng.uniform(0.1, 0.5, m.running[k].shape)
    X = rng.standard_normal((9, 6))
    Y = np.eye(3)[rng.integers(0, 3, 9)]
    Y[0] = [0.2, 0.5, 0.3]
    errs = relative_errors(m, X, Y, np.array([0.5, 1.0, 2.0]), 1e-3, batch_stats)
    assert errs.max() < 1e-4


def test_l2_only_gradient(rng):
    m = small_model()
    X = rng.standard_normal((4, 6))
    Y = np.eye(3)[[0, 1, 2, 0]]
    _, cache = forward(m, X, "train", use_dropout=False)
    g0 = gradients(m, cache, Y, None, 0.0)
    g1 = gradients(m, cache, Y, None, 0.01)
    for k in ("0.w", "1.w", "2.w", "out.w"):
        np.testing.assert_allclose(g1[k] - g0[k], 0.02 * m.params[k], rtol=1e-12, atol=1e-15)
    for k in ("0.b", "0.gamma", "0.beta", "out.b"):
        np.testing.assert_array_equal(g1[k], g0[k])


def test_step_decreases_batch_loss(rng):
    cfg = ModelConfig(input_dim=6, hidden_dims=(7, 5), n_classes=3, learning_rate=1e-4,
                      dropout_rate=0.0, optimizer="sgd")
    m = init_mlp(cfg)
    X = rng.standard_normal((16, 6))
    Y = np.eye(3)[rng.integers(0, 3, 16)]

    def batch_loss():
        p, _ = forward(m, X, "train", use_dropout=False)
        return loss(p, Y, None, m, cfg.l2_lambda)

    before = batch_loss()
    backward_and_step(m, X, Y, None, rng)
    assert batch_loss() < before
    cfg_adam = ModelConfig(input_dim=6, hidden_dims=(7, 5), n_classes=3, learning_rate=1e-4,
                           dropout_rate=0.0)
    m = init_mlp(cfg_adam)
    before = batch_loss()
    backward_and_step(m, X, Y, None, rng, AdamState())
    assert batch_loss() < before


def test_running_stats_update(rng):
    m = small_model()
    X = rng.standard_normal((8, 6)) * 3 + 1
    a = X @ m.params["0.w"].T + m.params["0.b"]
    backward_and_step(m, X, np.eye(3)[rng.integers(0, 3, 8)], None, rng)
    np.testing.assert_allclose(m.running["0.mean"], 0.1 * a.mean(axis=0))
    np.testing.assert_allclose(m.running["0.var"], 0.9 + 0.1 * a.var(axis=0, ddof=1))


def test_dropout_expectation():
    rng = np.random.default_rng(0)
    h = rng.uniform(0.5, 2.0, 20)
    rate = 0.4
    masks = np.stack([dropout_mask(h.shape, rate, rng) for _ in range(10_000)])
    mc = (masks * h).mean(axis=0)
    sigma = h * math.sqrt(rate / (1 - rate)) / math.sqrt(10_000)
    assert np.all(np.abs(mc - h) < 3 * sigma)


def test_predict_tie_break_and_batch_independence(rng):
    m = small_model()
    m.params["out.w"][:] = 0
    m.params["out.b"][:] = 0
    k, p = predict(m, rng.standard_normal(6))
    assert k == 0
    np.testing.assert_allclose(p, 1 / 3)
    m = small_model(seed=3)
    x = rng.standard_normal(6)
    k1, p1 = predict(m, x)
    assert p1.sum() == pytest.approx(1)
    for b in (2, 5, 33):
        X = rng.standard_normal((b, 6))
        X[b // 2] = x
        np.testing.assert_allclose(predict_proba(m, X)[b // 2], p1, rtol=0, atol=1e-15)
    with pytest.raises(DataError):
        predict(m, np.zeros(7))


def blobs(rng, n_per, k=3, d=6, sep=3.0, centers=None):
    if centers is None:
        centers = np.random.default_rng(99).standard_normal((k, d)) * sep
    X = np.vstack([centers[c] + rng.standard_normal((n_per, d)) for c in range(k)])
    Y = np.eye(k)[np.repeat(np.arange(k), n_per)]
    return X, Y


def test_train_learns_and_is_deterministic(rng):
    X, Y = blobs(rng, 60)
    Xv, Yv = blobs(np.random.default_rng(1), 20)
    cfg = ModelConfig(input_dim=6, hidden_dims=(16, 8), n_classes=3, max_epochs=30,
                      batch_size=16, learning_rate=0.01, rng_seed=2)
    m1, h1 = train(X, Y, Xv, Yv, cfg)
    m2, h2 = train(X, Y, Xv, Yv, cfg)
    assert h1 == h2
    assert h1.val_accuracy[h1.best_epoch] > 0.9
    assert h1.best_epoch == int(np.argmin(h1.val_loss))
    for k in m1.params:
        np.testing.assert_array_equal(m1.params[k], m2.params[k])


def test_early_stopping_patience_zero(rng):
    X, Y = blobs(rng, 40)
    cfg = ModelConfig(input_dim=6, hidden_dims=(8,), n_classes=3, max_epochs=200,
                      early_stop_patience=0, learning_rate=0.05, rng_seed=0)
    _, hist = train(X, Y, X[:30], Y[:30], cfg)
    vl = hist.val_loss
    first_bad = next(i for i in range(1, len(vl)) if vl[i] >= min(vl[:i]))
    assert hist.stopped_epoch == first_bad
    assert len(vl) == first_bad + 1
    assert hist.best_epoch == int(np.argmin(vl))


def test_returned_model_is_best_epoch(rng):
    X, Y = blobs(rng, 40)
    cfg = ModelConfig(input_dim=6, hidden_dims=(8,), n_classes=3, max_epochs=12,
                      early_stop_patience=3, rng_seed=5)
    m, hist = train(X, Y, X[:30], Y[:30], cfg)
    assert loss(predict_proba(m, X[:30]), Y[:30]) == pytest.approx(min(hist.val_loss), rel=1e-12)


def test_train_rejects_empty(rng):
    with pytest.raises(DataError):
        train(np.zeros((0, 6)), np.zeros((0, 3)), np.zeros((2, 6)), np.eye(3)[:2],
              ModelConfig(input_dim=6, hidden_dims=(4,), n_classes=3))


def test_model_roundtrip(tmp_path, rng):
    m = small_model(seed=9)
    m.running["1.var"] = m.running["1.var"] * 1.7
    path = tmp_path / "m.json"
    save_model(m, path)
    back = load_model(path)
    X = rng.standard_normal((10, 6))
    np.testing.assert_allclose(predict_proba(back, X), predict_proba(m, X), rtol=0, atol=1e-9)
    doc = json.loads(path.read_text())
    assert set(doc) == {"format_version", "config", "layers", "output"}
    assert set(doc["layers"][0]) == {"w", "b", "gamma", "beta", "run_mean", "run_var"}


def test_model_file_errors(tmp_path):
    m = small_model()
    path = tmp_path / "m.json"
    save_model(m, path)
    text = path.read_text()
    (tmp_path / "t.json").write_text(text[: len(text) // 2])
    with pytest.raises(DataError, match="parse"):
        load_model(tmp_path / "t.json")
    doc = json.loads(text)
    doc["layers"][1]["w"] = [row[:-1] for row in doc["layers"][1]["w"]]
    (tmp_path / "w.json").write_text(json.dumps(doc))
    with pytest.raises(DataError, match="shape chain"):
        load_model(tmp_path / "w.json")
    doc = json.loads(text)
    doc["format_version"] = 99
    (tmp_path / "v.json").write_text(json.dumps(doc))
    with pytest.raises(DataError, match="version"):
        load_model(tmp_path / "v.json")
