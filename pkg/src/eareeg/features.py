"""Per-channel descriptors and the concatenated segment feature vector.

Every segment channel contributes, in order:

* the first ``n_keep`` (20) bins of its Welch PSD,
* ``ar_order`` (10) autoregressive coefficients,
* Hjorth activity, mobility and complexity,
* the spectral entropy of the full one-sided PSD.

With 8 channels that is ``8 * (20 + 10 + 3 + 1) = 272`` values.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .preprocess import Segment

N_PSD_KEEP = 20
AR_ORDER = 10
N_HJORTH = 3
N_ENTROPY = 1
STD_FLOOR = 1e-8


def features_per_channel(n_keep: int = N_PSD_KEEP, ar_order: int = AR_ORDER) -> int:
    return n_keep + ar_order + N_HJORTH + N_ENTROPY


def feature_dim(n_channels: int = 8, n_keep: int = N_PSD_KEEP, ar_order: int = AR_ORDER) -> int:
    return n_channels * features_per_channel(n_keep, ar_order)


def ar_order_for(total_dim: int, n_channels: int, n_keep: int = N_PSD_KEEP) -> int:
    """AR order implied by a total feature count, e.g. 272 over 8 channels gives 10."""
    if total_dim % n_channels:
        raise DataError(f"{total_dim} features do not split evenly over {n_channels} channels")
    p = total_dim // n_channels - n_keep - N_HJORTH - N_ENTROPY
    if p < 1:
        raise DataError(f"no room for AR coefficients in {total_dim} features")
    return p


# -- Welch PSD -----------------------------------------------------------------


@dataclass(frozen=True)
class WelchConfig:
    fs: float = 1000.0
    nperseg: int = 256
    noverlap: int = 128
    window_fn: str = "hann"

    def validate(self, n_samples: int | None = None) -> None:
        if self.nperseg < 1:
            raise DataError("nperseg must be >= 1")
        if not 0 <= self.noverlap < self.nperseg:
            raise DataError("noverlap must satisfy 0 <= noverlap < nperseg")
        if self.fs <= 0:
            raise DataError("fs must be positive")
        if self.window_fn != "hann":
            raise DataError(f"unsupported window {self.window_fn!r}")
        if n_samples is not None and n_samples < self.nperseg:
            raise DataError(
                f"signal shorter than nperseg: {n_samples} < {self.nperseg}"
            )


@dataclass
class PsdEstimate:
    freqs_hz: np.ndarray
    power: np.ndarray


def hann(n: int) -> np.ndarray:
    """Periodic Hann window (the DFT-even form used for spectral estimation)."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def welch_psd(x, cfg: WelchConfig = WelchConfig()) -> PsdEstimate:
    """Welch estimate of the one-sided power spectral density.

    The signal is cut into ``K = (len - noverlap) // (nperseg - noverlap)``
    Hann-windowed subsegments, and their periodograms are averaged. Scaling
    is a density: ``sum(power) * df`` equals the mean power of a stationary
    input. No detrending is applied. ``x`` may be 2-D, in which case each
    row is treated independently.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    cfg.validate(n)
    step = cfg.nperseg - cfg.noverlap
    k = (n - cfg.noverlap) // step
    starts = np.arange(k) * step
    idx = starts[:, None] + np.arange(cfg.nperseg)[None, :]
    w = hann(cfg.nperseg)
    frames = x[..., idx] * w
    spec = np.abs(np.fft.rfft(frames, axis=-1)) ** 2
    power = spec.mean(axis=-2) / (cfg.fs * np.sum(w * w))
    # fold negative frequencies; DC and (even-length) Nyquist are not mirrored
    if cfg.nperseg % 2 == 0:
        power[..., 1:-1] *= 2.0
    else:
        power[..., 1:] *= 2.0
    freqs = np.fft.rfftfreq(cfg.nperseg, d=1.0 / cfg.fs)
    return PsdEstimate(freqs, power)


def retain_psd_features(psd: PsdEstimate, n_keep: int = N_PSD_KEEP) -> np.ndarray:
    """Lowest ``n_keep`` PSD bins."""
    if n_keep < 1:
        raise DataError("empty feature slice: n_keep must be >= 1")
    power = np.asarray(psd.power)
    if power.shape[-1] < n_keep:
        raise DataError(f"PSD has {power.shape[-1]} bins, cannot keep {n_keep}")
    return power[..., :n_keep].copy()


# -- autoregressive model -------------------------------------------------------


@dataclass
class ArFeatures:
    """AR fit in the ``x(n) = -sum a_i x(n-i) + e(n)`` convention."""

    coeffs: np.ndarray
    residual_variance: float

    @property
    def order(self) -> int:
        return len(self.coeffs)


def autocovariance(x, max_lag: int) -> np.ndarray:
    """Biased (divide-by-N) sample autocovariance at lags ``0..max_lag``, along the last axis."""
    x = np.asarray(x, dtype=float)
    x = x - x.mean(axis=-1, keepdims=True)
    n = x.shape[-1]
    return np.stack(
        [np.sum(x[..., : n - k] * x[..., k:], axis=-1) / n for k in range(max_lag + 1)],
        axis=-1,
    )


def levinson_durbin(r, order: int):
    """Solve the Yule-Walker equations for autocovariance ``r``.

    Works on the last axis, so a stack of autocovariance sequences is
    solved in one pass.

    Returns
    -------
    coeffs : ndarray, shape (..., order)
        ``a_1..a_p`` with ``x(n) + sum a_i x(n-i) = e(n)``.
    error : ndarray, shape (...)
        Final prediction-error power.
    reflection : ndarray, shape (..., order)
    """
    r = np.asarray(r, dtype=float)
    if r.shape[-1] < order + 1:
        raise DataError("autocovariance sequence too short for the requested order")
    batch = r.shape[:-1]
    a = np.zeros(batch + (order,))
    k = np.zeros(batch + (order,))
    err = r[..., 0].copy()
    for m in range(order):
        acc = r[..., m + 1] + np.sum(a[..., :m] * r[..., m:0:-1], axis=-1)
        km = -acc / err
        prev = a[..., :m].copy()
        a[..., :m] = prev + km[..., None] * prev[..., ::-1]
        a[..., m] = km
        k[..., m] = km
        err = err * (1.0 - km * km)
    return a, err, k


def yule_walker(x, order: int = AR_ORDER) -> ArFeatures:
    """Yule-Walker AR fit via Levinson-Durbin on biased autocovariances."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise DataError("yule_walker expects a 1-D signal")
    if order < 1:
        raise DataError("AR order must be >= 1")
    if order >= x.size:
        raise DataError(f"AR order {order} must be below the signal length {x.size}")
    r = autocovariance(x, order)
    if not r[0] > 0:
        raise DataError("zero variance signal: AR model undefined")
    a, err, _ = levinson_durbin(r, order)
    return ArFeatures(a, float(max(err, 0.0)))


# -- Hjorth parameters and spectral entropy ----------------------------------


@dataclass
class HjorthFeatures:
    activity: float
    mobility: float
    complexity: float

    def as_array(self) -> np.ndarray:
        return np.array([self.activity, self.mobility, self.complexity])


def _hjorth_arrays(x: np.ndarray):
    dx = np.diff(x, axis=-1)
    ddx = np.diff(dx, axis=-1)
    var_x = np.var(x, axis=-1)
    var_dx = np.var(dx, axis=-1)
    var_ddx = np.var(ddx, axis=-1)
    return var_x, var_dx, var_ddx


def hjorth(x) -> HjorthFeatures:
    """Activity, mobility and complexity, with first differences as derivatives."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size < 3:
        raise DataError("hjorth needs a 1-D signal of at least 3 samples")
    var_x, var_dx, var_ddx = _hjorth_arrays(x)
    if not var_x > 0:
        raise DataError("degenerate signal: zero variance, mobility undefined")
    if not var_dx > 0:
        raise DataError("degenerate signal: zero derivative variance, complexity undefined")
    mobility = np.sqrt(var_dx / var_x)
    complexity = np.sqrt(var_ddx / var_dx) / mobility
    return HjorthFeatures(float(var_x), float(mobility), float(complexity))


def spectral_entropy(psd) -> float:
    """Shannon entropy in bits of the normalised spectrum, ``0 log 0 = 0``."""
    power = np.asarray(getattr(psd, "power", psd), dtype=float)
    total = power.sum(axis=-1)
    if np.any(~(total > 0)):
        raise DataError("all-zero PSD: spectral entropy undefined")
    p = power / total[..., None] if power.ndim > 1 else power / total
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log2(p), 0.0)
    h = -terms.sum(axis=-1)
    return float(h) if np.ndim(h) == 0 else h


# -- feature vectors ----------------------------------------------------------


@dataclass
class FeatureVector:
    """Concatenated descriptors of one segment plus its (possibly soft) label."""

    values: np.ndarray
    soft_label: np.ndarray
    subject_id: int

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.soft_label = np.asarray(self.soft_label, dtype=float)
        if not np.all(np.isfinite(self.values)):
            raise DataError("non-finite feature value")
        if np.any(self.soft_label < 0) or abs(self.soft_label.sum() - 1.0) > 1e-9:
            raise DataError("soft label must lie on the probability simplex")

    @property
    def is_hard(self) -> bool:
        return bool(np.max(self.soft_label) == 1.0)


def one_hot(k: int, n_classes: int) -> np.ndarray:
    if not 0 <= k < n_classes:
        raise DataError(f"class {k} outside 0..{n_classes - 1}")
    y = np.zeros(n_classes)
    y[k] = 1.0
    return y


def channel_features(channels, welch_cfg: WelchConfig = WelchConfig(),
                     ar_order: int = AR_ORDER, n_keep: int = N_PSD_KEEP,
                     labels=None) -> np.ndarray:
    """Feature matrix of shape ``(n_channels, n_keep + ar_order + 4)``."""
    x = np.atleast_2d(np.asarray(channels, dtype=float))
    n_ch, n = x.shape
    if ar_order >= n:
        raise DataError(f"AR order {ar_order} must be below the segment length {n}")
    var_x, var_dx, var_ddx = _hjorth_arrays(x)
    bad = np.flatnonzero(~(var_x > 0) | ~(var_dx > 0))
    if bad.size:
        name = labels[bad[0]] if labels is not None else f"#{bad[0]}"
        raise DataError(f"degenerate channel {name}: zero variance")
    psd = welch_psd(x, welch_cfg)
    psd_keep = retain_psd_features(psd, n_keep)
    a, _, _ = levinson_durbin(autocovariance(x, ar_order), ar_order)
    mobility = np.sqrt(var_dx / var_x)
    complexity = np.sqrt(var_ddx / var_dx) / mobility
    entropy = np.atleast_1d(spectral_entropy(psd))
    return np.column_stack([psd_keep, a, var_x, mobility, complexity, entropy])


def extract_features(seg: Segment, welch_cfg: WelchConfig = WelchConfig(),
                     ar_order: int = AR_ORDER, n_classes: int = 6,
                     n_keep: int = N_PSD_KEEP, labels=None) -> FeatureVector:
    """Feature vector of ``seg``: channel-major concatenation of all descriptors."""
    per_channel = channel_features(seg.channels, welch_cfg, ar_order, n_keep, labels)
    values = per_channel.ravel()
    expected = feature_dim(seg.channels.shape[0], n_keep, ar_order)
    assert values.size == expected, (values.size, expected)
    return FeatureVector(values, one_hot(seg.subject_id, n_classes), seg.subject_id)


def extract_many(segments, welch_cfg: WelchConfig = WelchConfig(), ar_order: int = AR_ORDER,
                 n_classes: int = 6, n_keep: int = N_PSD_KEEP) -> list[FeatureVector]:
    return [extract_features(s, welch_cfg, ar_order, n_classes, n_keep) for s in segments]


def stack(fvs) -> tuple[np.ndarray, np.ndarray]:
    """Design matrix and soft-label matrix of a list of feature vectors."""
    if not fvs:
        raise DataError("empty feature set")
    return np.vstack([f.values for f in fvs]), np.vstack([f.soft_label for f in fvs])


# -- standardisation ------------------------------------------------------------


@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    def transform(self, values) -> np.ndarray:
        return (np.asarray(values, dtype=float) - self.mean) / self.std

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d) -> "Standardizer":
        return cls(np.asarray(d["mean"], dtype=float), np.asarray(d["std"], dtype=float))


def fit_standardizer(train) -> Standardizer:
    """Per-feature mean and floored std of the training vectors."""
    if len(train) == 0:
        raise DataError("cannot fit a standardizer on an empty training set")
    X = train if isinstance(train, np.ndarray) else stack(train)[0]
    mean = X.mean(axis=0)
    std = np.maximum(X.std(axis=0), STD_FLOOR)
    return Standardizer(mean, std)


def apply_standardizer(s: Standardizer, fv: FeatureVector) -> FeatureVector:
    return FeatureVector(s.transform(fv.values), fv.soft_label.copy(), fv.subject_id)


# -- CSV ------------------------------------------------------------------------


def write_feature_csv(fvs, path) -> None:
    """One row per vector: f000.., soft-label columns y0.., then subject_id."""
    if not fvs:
        raise DataError("nothing to write")
    dim = fvs[0].values.size
    k = fvs[0].soft_label.size
    header = [f"f{i:03d}" for i in range(dim)] + [f"y{j}" for j in range(k)] + ["subject_id"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for f in fvs:
            w.writerow([repr(float(v)) for v in f.values]
                       + [repr(float(v)) for v in f.soft_label] + [int(f.subject_id)])


def read_feature_csv(path) -> list[FeatureVector]:
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty feature file")
    header = rows[0]
    if header[-1] != "subject_id":
        raise DataError(f"{path}: last column must be subject_id")
    dim = sum(1 for h in header if h.startswith("f"))
    k = sum(1 for h in header if h.startswith("y"))
    if dim + k + 1 != len(header):
        raise DataError(f"{path}: unexpected columns in header")
    out = []
    for row in rows[1:]:
        vals = np.array([float(v) for v in row[: dim + k]])
        out.append(FeatureVector(vals[:dim], vals[dim:], int(row[-1])))
    return out
