"""Fully connected identity classifier in plain numpy.

Each hidden layer is ``linear -> batch norm -> ReLU -> dropout``; the output
layer is ``linear -> softmax``. Training minimises the class-weighted
cross-entropy plus ``l2_lambda * sum(W**2)`` over the weight matrices with
Adam.

Parameters live in a flat ``dict`` keyed ``"<layer>.<name>"`` (``"0.w"``,
``"0.gamma"``, ..., ``"out.w"``) so that optimisers and gradient checks can
treat them uniformly. Weight matrices are stored ``(out, in)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, NumericError

BN_EPS = 1e-5
LOG_CLAMP = 1e-12
FORMAT_VERSION = 1


@dataclass
class ModelConfig:
    input_dim: int = 272
    hidden_dims: tuple = (256, 128, 64, 32)
    n_classes: int = 6
    dropout_rate: float = 0.4
    l2_lambda: float = 1e-3
    learning_rate: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 200
    early_stop_patience: int = 20
    optimizer: str = "adam"
    bn_momentum: float = 0.9
    rng_seed: int = 0

    def __post_init__(self):
        self.hidden_dims = tuple(int(h) for h in self.hidden_dims)

    def validate(self) -> None:
        if self.input_dim < 1 or self.n_classes < 1 or any(h < 1 for h in self.hidden_dims):
            raise ConfigError("all layer dimensions must be >= 1")
        if not 0 <= self.dropout_rate < 1:
            raise ConfigError("dropout_rate must lie in [0, 1)")
        if self.l2_lambda < 0:
            raise ConfigError("l2_lambda must be >= 0")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2 (batch statistics)")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be >= 1")
        if self.early_stop_patience < 0:
            raise ConfigError("early_stop_patience must be >= 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if not 0 <= self.bn_momentum < 1:
            raise ConfigError("bn_momentum must lie in [0, 1)")

    @property
    def signature(self) -> str:
        return "-".join(str(h) for h in self.hidden_dims)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_dims"] = list(self.hidden_dims)
        return d


@dataclass
class Mlp:
    config: ModelConfig
    params: dict
    running: dict

    @property
    def n_hidden(self) -> int:
        return len(self.config.hidden_dims)

    def copy(self) -> "Mlp":
        return Mlp(self.config, {k: v.copy() for k, v in self.params.items()},
                   {k: v.copy() for k, v in self.running.items()})


def weight_names(m: Mlp) -> list[str]:
    return [f"{i}.w" for i in range(m.n_hidden)] + ["out.w"]


def layer_dims(cfg: ModelConfig) -> list[int]:
    return [cfg.input_dim, *cfg.hidden_dims, cfg.n_classes]


def count_parameters(m: Mlp) -> int:
    return int(sum(v.size for v in m.params.values()))


def init_mlp(cfg: ModelConfig) -> Mlp:
    """He (fan-in) normal weights, zero biases, unit BN scale, zero shift."""
    cfg.validate()
    rng = np.random.default_rng(np.random.SeedSequence([cfg.rng_seed, 0]))
    dims = layer_dims(cfg)
    params, running = {}, {}
    for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        key = str(i) if i < len(cfg.hidden_dims) else "out"
        params[f"{key}.w"] = rng.standard_normal((fan_out, fan_in)) * math.sqrt(2.0 / fan_in)
        params[f"{key}.b"] = np.zeros(fan_out)
        if key != "out":
            params[f"{key}.gamma"] = np.ones(fan_out)
            params[f"{key}.beta"] = np.zeros(fan_out)
            running[f"{key}.mean"] = np.zeros(fan_out)
            running[f"{key}.var"] = np.ones(fan_out)
    return Mlp(cfg, params, running)


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def dropout_mask(shape, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted-dropout mask: kept units scaled by ``1 / (1 - rate)``."""
    if rate == 0:
        return np.ones(shape)
    return (rng.random(shape) >= rate) / (1.0 - rate)


def forward(m: Mlp, X, mode: str = "eval", rng: np.random.Generator | None = None,
            use_dropout: bool = True, batch_stats: bool | None = None):
    """Class probabilities for the rows of ``X``.

    In ``"train"`` mode batch norm uses the batch statistics and dropout is
    active (unless ``use_dropout`` is False); in ``"eval"`` mode running
    statistics are used and dropout is off. ``batch_stats`` overrides the
    batch-norm choice independently of ``mode``.

    Returns ``(probs, cache)``; the cache feeds :func:`gradients`.
    """
    X = np.asarray(X, dtype=float)
    cfg = m.config
    if X.ndim != 2 or X.shape[1] != cfg.input_dim:
        raise DataError(f"expected input of shape (B, {cfg.input_dim}), got {X.shape}")
    train = mode == "train"
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown mode {mode!r}")
    use_batch = train if batch_stats is None else batch_stats
    if use_batch and X.shape[0] < 2:
        raise DataError("batch statistics need at least 2 rows")
    drop = train and use_dropout and cfg.dropout_rate > 0
    if drop and rng is None:
        raise ValueError("train-mode dropout needs an rng")

    cache = {"x": X, "layers": [], "batch_stats": use_batch}
    h = X
    for i in range(m.n_hidden):
        p = m.params
        a = h @ p[f"{i}.w"].T + p[f"{i}.b"]
        if use_batch:
            mu = a.mean(axis=0)
            var = a.var(axis=0)
        else:
            mu = m.running[f"{i}.mean"]
            var = m.running[f"{i}.var"]
        inv_std = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (a - mu) * inv_std
        bn = p[f"{i}.gamma"] * xhat + p[f"{i}.beta"]
        r = np.maximum(bn, 0.0)
        mask = dropout_mask(r.shape, cfg.dropout_rate, rng) if drop else None
        out = r * mask if mask is not None else r
        cache["layers"].append({"h_in": h, "a": a, "mu": mu, "var": var, "inv_std": inv_std,
                                "xhat": xhat, "bn": bn, "mask": mask})
        h = out
    z = h @ m.params["out.w"].T + m.params["out.b"]
    cache["h_last"] = h
    cache["logits"] = z
    return softmax(z), cache


def l2_penalty(m: Mlp) -> float:
    return float(sum(np.sum(m.params[k] ** 2) for k in weight_names(m)))


def sample_weights(soft_labels, class_weights) -> np.ndarray:
    Y = np.asarray(soft_labels, dtype=float)
    if class_weights is None:
        return np.ones(Y.shape[0])
    return Y @ np.asarray(class_weights, dtype=float)


def loss(probs, soft_labels, class_weights=None, m: Mlp | None = None,
         l2_lambda: float = 0.0) -> float:
    """Mean weighted cross-entropy plus ``l2_lambda`` times the squared weight norm.

    A soft label's weight is the label-weighted mix of the class weights.
    Only weight matrices enter the penalty (no biases, no BN parameters).
    """
    P = np.asarray(probs, dtype=float)
    Y = np.asarray(soft_labels, dtype=float)
    if P.shape != Y.shape:
        raise DataError(f"probability/label shape mismatch: {P.shape} vs {Y.shape}")
    if np.any(Y < 0) or np.any(np.abs(Y.sum(axis=1) - 1.0) > 1e-9):
        raise DataError("labels must lie on the probability simplex")
    w = sample_weights(Y, class_weights)
    ce = -np.sum(Y * np.log(np.maximum(P, LOG_CLAMP)), axis=1)
    total = float(np.mean(w * ce))
    if l2_lambda and m is not None:
        total += l2_lambda * l2_penalty(m)
    return total


def gradients(m: Mlp, cache, soft_labels, class_weights=None, l2_lambda: float = 0.0) -> dict:
    """Gradient of :func:`loss` for the forward pass recorded in ``cache``."""
    Y = np.asarray(soft_labels, dtype=float)
    B = Y.shape[0]
    probs = softmax(cache["logits"])
    w = sample_weights(Y, class_weights)
    # d/dz of -sum_k y_k log softmax(z)_k is p * sum(y) - y
    dz = (probs * Y.sum(axis=1, keepdims=True) - Y) * (w / B)[:, None]
    p = m.params
    g = {
        "out.w": dz.T @ cache["h_last"] + 2.0 * l2_lambda * p["out.w"],
        "out.b": dz.sum(axis=0),
    }
    dh = dz @ p["out.w"]
    for i in reversed(range(m.n_hidden)):
        lc = cache["layers"][i]
        if lc["mask"] is not None:
            dh = dh * lc["mask"]
        dbn = dh * (lc["bn"] > 0)
        g[f"{i}.gamma"] = np.sum(dbn * lc["xhat"], axis=0)
        g[f"{i}.beta"] = dbn.sum(axis=0)
        dxhat = dbn * p[f"{i}.gamma"]
        if cache["batch_stats"]:
            n = dxhat.shape[0]
            da = (lc["inv_std"] / n) * (
                n * dxhat - dxhat.sum(axis=0) - lc["xhat"] * np.sum(dxhat * lc["xhat"], axis=0)
            )
        else:
            da = dxhat * lc["inv_std"]
        g[f"{i}.w"] = da.T @ lc["h_in"] + 2.0 * l2_lambda * p[f"{i}.w"]
        g[f"{i}.b"] = da.sum(axis=0)
        dh = da @ p[f"{i}.w"]
    return g


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def backward_and_step(m: Mlp, X, soft_labels, class_weights=None,
                      rng: np.random.Generator | None = None,
                      opt: AdamState | None = None) -> tuple[Mlp, float]:
    """One training step on a batch; updates ``m`` in place and returns it with the batch loss."""
    cfg = m.config
    probs, cache = forward(m, X, "train", rng=rng)
    batch_loss = loss(probs, soft_labels, class_weights, m, cfg.l2_lambda)
    grads = gradients(m, cache, soft_labels, class_weights, cfg.l2_lambda)
    for k, gk in grads.items():
        if not np.all(np.isfinite(gk)):
            raise NumericError(f"non-finite gradient for parameter {k}")
    if not math.isfinite(batch_loss):
        raise NumericError("non-finite training loss")

    mom = cfg.bn_momentum
    for i, lc in enumerate(cache["layers"]):
        n = lc["a"].shape[0]
        unbiased = lc["var"] * n / (n - 1)
        m.running[f"{i}.mean"] = mom * m.running[f"{i}.mean"] + (1 - mom) * lc["mu"]
        m.running[f"{i}.var"] = mom * m.running[f"{i}.var"] + (1 - mom) * unbiased

    lr = cfg.learning_rate
    if cfg.optimizer == "sgd":
        for k, gk in grads.items():
            m.params[k] -= lr * gk
        return m, batch_loss
    if opt is None:
        opt = AdamState()
    opt.t += 1
    c1 = 1.0 - opt.beta1 ** opt.t
    c2 = 1.0 - opt.beta2 ** opt.t
    for k, gk in grads.items():
        mk = opt.m.get(k)
        if mk is None:
            mk = opt.m[k] = np.zeros_like(gk)
            opt.v[k] = np.zeros_like(gk)
        vk = opt.v[k]
        mk *= opt.beta1
        mk += (1 - opt.beta1) * gk
        vk *= opt.beta2
        vk += (1 - opt.beta2) * gk * gk
        m.params[k] -= lr * (mk / c1) / (np.sqrt(vk / c2) + opt.eps)
    return m, batch_loss


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_accuracy: list = field(default_factory=list)
    best_epoch: int = -1
    stopped_epoch: int = -1

    def to_csv(self, path) -> None:
        lines = ["epoch,train_loss,val_loss,val_accuracy"]
        for e, (tl, vl, va) in enumerate(zip(self.train_loss, self.val_loss, self.val_accuracy)):
            lines.append(f"{e},{tl!r},{vl!r},{va!r}")
        Path(path).write_text("\n".join(lines) + "\n")


def predict_proba(m: Mlp, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return forward(m, X, "eval")[0]


def predict(m: Mlp, fv) -> tuple[int, np.ndarray]:
    """Most probable class (lowest index on ties) and the class probabilities."""
    values = getattr(fv, "values", fv)
    values = np.asarray(values, dtype=float)
    if values.ndim != 1 or values.size != m.config.input_dim:
        raise DataError(f"expected a vector of length {m.config.input_dim}")
    probs = predict_proba(m, values[None, :])[0]
    return int(np.argmax(probs)), probs


def train(train_X, train_Y, val_X, val_Y, cfg: ModelConfig,
          class_weights=None, log=None) -> tuple[Mlp, TrainHistory]:
    """Mini-batch training with early stopping on validation loss.

    Validation loss is the unweighted cross-entropy of the eval-mode model.
    Returns a copy of the parameters from the epoch with the lowest
    validation loss.
    """
    train_X = np.asarray(train_X, dtype=float)
    train_Y = np.asarray(train_Y, dtype=float)
    val_X = np.asarray(val_X, dtype=float)
    val_Y = np.asarray(val_Y, dtype=float)
    if len(train_X) < 2 or len(val_X) == 0:
        raise DataError("training needs >= 2 training rows and a non-empty validation set")
    if train_X.shape[1] != cfg.input_dim or train_Y.shape[1] != cfg.n_classes:
        raise DataError("training data shape does not match the model config")
    m = init_mlp(cfg)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence([cfg.rng_seed, 1]))
    drop_rng = np.random.default_rng(np.random.SeedSequence([cfg.rng_seed, 2]))
    opt = AdamState()
    hist = TrainHistory()
    best, best_loss, wait = None, math.inf, 0
    n = len(train_X)
    val_true = np.argmax(val_Y, axis=1)
    for epoch in range(cfg.max_epochs):
        order = shuffle_rng.permutation(n)
        batch_losses, batch_sizes = [], []
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            if idx.size < 2:
                continue
            _, bl = backward_and_step(m, train_X[idx], train_Y[idx], class_weights, drop_rng, opt)
            batch_losses.append(bl)
            batch_sizes.append(idx.size)
        probs = predict_proba(m, val_X)
        vl = loss(probs, val_Y)
        va = float(np.mean(np.argmax(probs, axis=1) == val_true))
        hist.train_loss.append(float(np.average(batch_losses, weights=batch_sizes)))
        hist.val_loss.append(vl)
        hist.val_accuracy.append(va)
        if log is not None:
            log(f"epoch {epoch:3d} train {hist.train_loss[-1]:.4f} val {vl:.4f} acc {va:.4f}")
        if vl < best_loss:
            best, best_loss, wait = m.copy(), vl, 0
            hist.best_epoch = epoch
        else:
            wait += 1
            if wait > cfg.early_stop_patience:
                break
    hist.stopped_epoch = epoch
    return best, hist


# -- persistence --------------------------------------------------------------


def model_to_dict(m: Mlp) -> dict:
    layers = []
    for i in range(m.n_hidden):
        layers.append({
            "w": m.params[f"{i}.w"].tolist(),
            "b": m.params[f"{i}.b"].tolist(),
            "gamma": m.params[f"{i}.gamma"].tolist(),
            "beta": m.params[f"{i}.beta"].tolist(),
            "run_mean": m.running[f"{i}.mean"].tolist(),
            "run_var": m.running[f"{i}.var"].tolist(),
        })
    return {
        "format_version": FORMAT_VERSION,
        "config": m.config.to_dict(),
        "layers": layers,
        "output": {"w": m.params["out.w"].tolist(), "b": m.params["out.b"].tolist()},
    }


def model_from_dict(d: dict) -> Mlp:
    if d.get("format_version") != FORMAT_VERSION:
        raise DataError(f"unsupported model format version {d.get('format_version')!r}")
    try:
        cfg = ModelConfig(**d["config"])
    except TypeError as exc:
        raise DataError(f"bad model config: {exc}") from exc
    cfg.validate()
    dims = layer_dims(cfg)
    if len(d["layers"]) != len(cfg.hidden_dims):
        raise DataError("layer count does not match hidden_dims")
    params, running = {}, {}

    def arr(x, shape, what):
        a = np.asarray(x, dtype=float)
        if a.shape != shape:
            raise DataError(f"shape chain broken at {what}: expected {shape}, got {a.shape}")
        if not np.all(np.isfinite(a)):
            raise DataError(f"non-finite values in {what}")
        return a

    for i, layer in enumerate(d["layers"]):
        fan_in, fan_out = dims[i], dims[i + 1]
        params[f"{i}.w"] = arr(layer["w"], (fan_out, fan_in), f"layer {i} w")
        params[f"{i}.b"] = arr(layer["b"], (fan_out,), f"layer {i} b")
        params[f"{i}.gamma"] = arr(layer["gamma"], (fan_out,), f"layer {i} gamma")
        params[f"{i}.beta"] = arr(layer["beta"], (fan_out,), f"layer {i} beta")
        running[f"{i}.mean"] = arr(layer["run_mean"], (fan_out,), f"layer {i} run_mean")
        running[f"{i}.var"] = arr(layer["run_var"], (fan_out,), f"layer {i} run_var")
        if np.any(running[f"{i}.var"] <= 0):
            raise DataError(f"layer {i}: running variance must be positive")
    params["out.w"] = arr(d["output"]["w"], (dims[-1], dims[-2]), "output w")
    params["out.b"] = arr(d["output"]["b"], (dims[-1],), "output b")
    return Mlp(cfg, params, running)


def save_model(m: Mlp, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(m)))


def load_model(path) -> Mlp:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: cannot parse model file: {exc}") from exc
    try:
        return model_from_dict(d)
    except KeyError as exc:
        raise DataError(f"{path}: missing field {exc}") from exc
