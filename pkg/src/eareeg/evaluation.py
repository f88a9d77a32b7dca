"""Train/validation/test splitting, test-set scoring and the architecture ablation."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .features import FeatureVector, Standardizer, stack
from .model import Mlp, ModelConfig, predict_proba, train

# Reported accuracies (%) of the reference architectures, for side-by-side output only.
REFERENCE_ABLATION = {
    "128-64-32": 74.3,
    "256-128-64-32": 81.0,
    "512-256-128-64": 76.1,
    "128-128-64-64": 73.2,
}
REFERENCE_FINAL_ACCURACY = 82.0
ABLATION_ARCHITECTURES = [(128, 64, 32), (256, 128, 64, 32), (512, 256, 128, 64), (128, 128, 64, 64)]


@dataclass(frozen=True)
class SplitSpec:
    ratios: tuple = (0.8, 0.1, 0.1)
    strategy: str = "random_segment"
    rng_seed: int = 0
    allow_empty: bool = False
    min_per_class: int = 10

    def validate(self) -> None:
        r = tuple(float(v) for v in self.ratios)
        if len(r) != 3:
            raise ConfigError("SplitSpec.ratios needs three entries (train, val, test)")
        if any(v < 0 for v in r) or abs(sum(r) - 1.0) > 1e-9:
            raise ConfigError(f"SplitSpec.ratios must be non-negative and sum to 1, got {r}")
        if any(v == 0 for v in r) and not self.allow_empty:
            raise ConfigError("SplitSpec.ratios has an empty split; set allow_empty to permit it")
        if self.strategy not in ("random_segment", "block_contiguous"):
            raise ConfigError(f"SplitSpec.strategy unknown: {self.strategy!r}")


def largest_remainder(n: int, ratios) -> np.ndarray:
    """Integer counts summing to ``n`` closest to ``n * ratios`` (ties go to earlier splits)."""
    quotas = n * np.asarray(ratios, dtype=float)
    counts = np.floor(quotas).astype(int)
    short = n - counts.sum()
    order = sorted(range(len(quotas)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[:short]:
        counts[i] += 1
    return counts


def split_indices(labels, spec: SplitSpec = SplitSpec(), recording_ids=None,
                  offsets=None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stratified index split.

    ``random_segment`` shuffles each class; ``block_contiguous`` orders each
    class by (recording, offset) and hands out contiguous runs, so that
    overlapping neighbours mostly land in the same split.
    """
    spec.validate()
    labels = np.asarray(labels, dtype=int)
    n = labels.size
    rec = np.zeros(n, dtype=int) if recording_ids is None else np.asarray(recording_ids)
    off = np.arange(n) if offsets is None else np.asarray(offsets)
    rng = np.random.default_rng(spec.rng_seed)
    parts = ([], [], [])
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        if members.size < spec.min_per_class:
            raise DataError(f"class {c} has {members.size} items, need >= {spec.min_per_class}")
        if spec.strategy == "random_segment":
            members = rng.permutation(members)
        else:
            members = members[np.lexsort((off[members], rec[members]))]
        counts = largest_remainder(members.size, spec.ratios)
        bounds = np.cumsum(counts)[:-1]
        for part, chunk in zip(parts, np.split(members, bounds)):
            part.append(chunk)
    return tuple(np.sort(np.concatenate(p)) if p else np.array([], dtype=int) for p in parts)


def split_hash(*index_arrays) -> str:
    h = hashlib.sha256()
    for a in index_arrays:
        h.update(np.asarray(a, dtype=np.int64).tobytes())
        h.update(b"|")
    return h.hexdigest()[:16]


def split_dataset(items, spec: SplitSpec = SplitSpec()):
    """Split segments (or anything with ``subject_id``) into train/val/test lists."""
    items = list(items)
    labels = [it.subject_id for it in items]
    recs = [getattr(it, "recording_id", 0) for it in items]
    offs = [getattr(it, "source_offset", i) for i, it in enumerate(items)]
    tr, va, te = split_indices(labels, spec, recs, offs)
    return [items[i] for i in tr], [items[i] for i in va], [items[i] for i in te]


# -- scoring --------------------------------------------------------------------


@dataclass
class EvalReport:
    confusion: np.ndarray
    overall_accuracy: float
    per_class_accuracy: np.ndarray
    n_test: int

    def to_dict(self) -> dict:
        return {
            "confusion": self.confusion.tolist(),
            "overall_accuracy": self.overall_accuracy,
            "per_class_accuracy": [None if np.isnan(v) else float(v)
                                   for v in self.per_class_accuracy],
            "n_test": self.n_test,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def render(self) -> str:
        k = self.confusion.shape[0]
        width = max(5, len(str(self.confusion.max())) + 1)
        head = "true\\pred" + "".join(f"{j:>{width}d}" for j in range(k)) + "   acc"
        lines = [head]
        for i in range(k):
            acc = self.per_class_accuracy[i]
            acc_s = "  n/a" if np.isnan(acc) else f"{acc:6.3f}"
            lines.append(f"{i:>9d}" + "".join(f"{v:>{width}d}" for v in self.confusion[i]) + acc_s)
        lines.append(f"overall accuracy {self.overall_accuracy:.4f} on {self.n_test} test segments")
        return "\n".join(lines)


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true, dtype=int), np.asarray(y_pred, dtype=int)), 1)
    return cm


def report_from_predictions(y_true, y_pred, n_classes: int) -> EvalReport:
    cm = confusion_matrix(y_true, y_pred, n_classes)
    n = int(cm.sum())
    if n == 0:
        raise DataError("empty test set")
    rows = cm.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_class = np.where(rows > 0, np.diag(cm) / np.maximum(rows, 1), np.nan)
    return EvalReport(cm, int(np.trace(cm)) / n, per_class, n)


def evaluate(model: Mlp, standardizer: Standardizer | None, test: list[FeatureVector]) -> EvalReport:
    """Score ``model`` on untouched test vectors (true class = argmax of the label)."""
    if not test:
        raise DataError("empty test set")
    X, Y = stack(test)
    if standardizer is not None:
        X = standardizer.transform(X)
    pred = np.argmax(predict_proba(model, X), axis=1)
    return report_from_predictions(np.argmax(Y, axis=1), pred, model.config.n_classes)


# -- ablation -------------------------------------------------------------------


@dataclass
class PreparedData:
    """Standardised, split and augmented feature matrices shared by several models."""

    train_X: np.ndarray
    train_Y: np.ndarray
    val_X: np.ndarray
    val_Y: np.ndarray
    test: list
    standardizer: Standardizer
    class_weights: np.ndarray | None
    split_id: str
    extra: dict = field(default_factory=dict)


@dataclass
class AblationRow:
    signature: str
    accuracy: float
    split_id: str
    best_epoch: int
    report: EvalReport

    @property
    def reference_accuracy(self) -> float | None:
        return REFERENCE_ABLATION.get(self.signature)


@dataclass
class AblationTable:
    rows: list

    def to_csv(self) -> str:
        lines = ["config,accuracy"]
        lines += [f"FC: {r.signature},{r.accuracy!r}" for r in self.rows]
        return "\n".join(lines) + "\n"

    def render(self) -> str:
        lines = [f"{'Configuration':<22}{'Accuracy (%)':>14}{'Reference (%)':>15}"]
        for r in self.rows:
            ref = r.reference_accuracy
            ref_s = f"{ref:15.1f}" if ref is not None else f"{'-':>15}"
            lines.append(f"{'FC: ' + r.signature:<22}{100 * r.accuracy:14.1f}{ref_s}")
        return "\n".join(lines)


def train_and_evaluate(data: PreparedData, cfg: ModelConfig, log=None):
    model, hist = train(data.train_X, data.train_Y, data.val_X, data.val_Y, cfg,
                        data.class_weights, log=log)
    return model, hist, evaluate(model, data.standardizer, data.test)


def run_ablation(data: PreparedData, configs: list[ModelConfig], log=None) -> AblationTable:
    """Train every config on the same prepared split and score it on the same test set."""
    if not configs:
        raise ConfigError("ablation needs at least one model config")
    rows = []
    for cfg in configs:
        _, hist, report = train_and_evaluate(data, cfg, log=log)
        rows.append(AblationRow(cfg.signature, report.overall_accuracy, data.split_id,
                                hist.best_epoch, report))
        if log is not None:
            log(f"ablation {cfg.signature}: accuracy {report.overall_accuracy:.4f} "
                f"(split {data.split_id})")
    assert len({r.split_id for r in rows}) == 1
    return AblationTable(rows)

