"""Training-set augmentation: noise, temporal shift, MixUp, oversampling, class weights.

Noise and shift act on raw segments (features are re-extracted afterwards);
MixUp and oversampling act on feature vectors. Every random draw comes from
a generator seeded by ``(rng_seed, stage, index)`` so results do not depend
on evaluation order.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .dataio import EegRecording
from .errors import ConfigError, DataError
from .features import AR_ORDER, FeatureVector, WelchConfig, extract_features
from .preprocess import Segment

_NOISE, _SHIFT, _MIXUP, _OVERSAMPLE = 1, 2, 3, 4


@dataclass(frozen=True)
class AugmentConfig:
    noise_rel_std: float = 0.05
    max_shift_samples: int = 100
    mixup_alpha: float = 0.2
    target_multiplier: float = 6.0
    raw_rounds: int = 2
    use_noise: bool = True
    use_shift: bool = True
    use_mixup: bool = True
    use_oversampling: bool = True
    rng_seed: int = 0

    def validate(self, window_len: int | None = None) -> None:
        if self.noise_rel_std < 0:
            raise ConfigError("noise_rel_std must be >= 0")
        if self.max_shift_samples < 0:
            raise ConfigError("max_shift_samples must be >= 0")
        if window_len is not None and self.max_shift_samples >= window_len:
            raise ConfigError("max_shift_samples must be below the window length")
        if self.mixup_alpha <= 0:
            raise ConfigError("mixup_alpha must be > 0")
        if self.target_multiplier <= 0:
            raise ConfigError("target_multiplier must be > 0")
        if self.raw_rounds < 0:
            raise ConfigError("raw_rounds must be >= 0")


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for one (stage, index) cell of a master seed."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, key)]))


def add_gaussian_noise(seg: Segment, noise_rel_std: float, rng: np.random.Generator) -> Segment:
    """Add zero-mean noise whose std is ``noise_rel_std`` times each channel's std."""
    if noise_rel_std < 0:
        raise ConfigError("noise_rel_std must be >= 0")
    if noise_rel_std == 0:
        return Segment(seg.subject_id, seg.channels.copy(), seg.source_offset, seg.recording_id)
    sigma = seg.channels.std(axis=1, keepdims=True) * noise_rel_std
    noisy = seg.channels + rng.standard_normal(seg.channels.shape) * sigma
    return Segment(seg.subject_id, noisy, seg.source_offset, seg.recording_id)


def temporal_shift(parent: EegRecording, seg: Segment, shift: int) -> tuple[Segment, int]:
    """Re-crop ``seg`` from ``parent`` at ``source_offset + shift``.

    Shifts that would leave the parent are clamped to the nearest legal
    value; the applied shift is returned alongside the segment.
    """
    n = parent.n_samples
    width = seg.window_len
    if width > n:
        raise DataError("segment longer than its parent recording")
    start = min(max(seg.source_offset + int(shift), 0), n - width)
    channels = np.asarray(parent.samples[:, start : start + width], dtype=float).copy()
    return Segment(seg.subject_id, channels, start, seg.recording_id), start - seg.source_offset


def mixup(a: FeatureVector, b: FeatureVector, lam: float | None = None,
          rng: np.random.Generator | None = None, alpha: float = 0.2) -> FeatureVector:
    """Convex combination ``lam * a + (1 - lam) * b`` of values and labels.

    ``lam`` is drawn from ``Beta(alpha, alpha)`` when not given.
    """
    if a.values.shape != b.values.shape or a.soft_label.shape != b.soft_label.shape:
        raise DataError("dimension mismatch between MixUp operands")
    if lam is None:
        rng = rng if rng is not None else np.random.default_rng()
        lam = float(rng.beta(alpha, alpha))
    if not 0.0 <= lam <= 1.0:
        raise DataError(f"MixUp lambda must lie in [0, 1], got {lam}")
    if lam == 1.0:
        return FeatureVector(a.values.copy(), a.soft_label.copy(), a.subject_id)
    if lam == 0.0:
        return FeatureVector(b.values.copy(), b.soft_label.copy(), b.subject_id)
    values = lam * a.values + (1.0 - lam) * b.values
    label = lam * a.soft_label + (1.0 - lam) * b.soft_label
    label = label / label.sum()
    # the dominant component names the nominal subject of a mixed vector
    return FeatureVector(values, label, int(np.argmax(label)))


def random_oversample(dataset: list[FeatureVector], rng: np.random.Generator,
                      n_classes: int | None = None) -> list[FeatureVector]:
    """Duplicate random members of minority classes until all classes tie the largest.

    Class membership is the argmax of the soft label. Returns the input
    followed by the appended duplicates.
    """
    if not dataset:
        raise DataError("cannot oversample an empty dataset")
    labels = np.array([int(np.argmax(f.soft_label)) for f in dataset])
    k = n_classes if n_classes is not None else dataset[0].soft_label.size
    counts = np.bincount(labels, minlength=k)
    if np.any(counts == 0):
        missing = np.flatnonzero(counts == 0).tolist()
        raise DataError(f"empty class in oversampling: {missing}")
    target = counts.max()
    out = list(dataset)
    for c in range(k):
        members = np.flatnonzero(labels == c)
        picks = rng.choice(members, size=target - counts[c], replace=True)
        out.extend(
            FeatureVector(dataset[i].values.copy(), dataset[i].soft_label.copy(),
                          dataset[i].subject_id)
            for i in picks
        )
    return out


def compute_class_weights(labels, n_classes: int | None = None) -> np.ndarray:
    """Inverse-frequency weights ``N / (K * N_k)``."""
    labels = np.asarray(labels, dtype=int)
    k = n_classes if n_classes is not None else int(labels.max()) + 1
    if k < 2:
        raise DataError("class weighting needs at least two classes")
    counts = np.bincount(labels, minlength=k)
    if np.any(counts == 0):
        raise DataError(f"absent class in labels: {np.flatnonzero(counts == 0).tolist()}")
    return labels.size / (k * counts.astype(float))


def augment_training_set(segments: list[Segment], parents, cfg: AugmentConfig = AugmentConfig(),
                         welch_cfg: WelchConfig = WelchConfig(), ar_order: int = AR_ORDER,
                         n_classes: int = 6, audit=None) -> list[FeatureVector]:
    """Feature vectors of the training segments plus augmented samples.

    ``parents`` maps ``recording_id`` to the filtered recording each segment
    came from (needed for shifts). Output order: originals, then raw-level
    rounds (noise and shift copies of every segment), then oversampling
    duplicates, then MixUp samples until ``target_multiplier`` times the
    input size is reached.
    """
    if not segments:
        raise DataError("no training segments to augment")
    cfg.validate(segments[0].window_len)
    if audit is not None:
        audit.record("augment", "train", len(segments))

    def fv(seg):
        return extract_features(seg, welch_cfg, ar_order, n_classes)

    out = [fv(s) for s in segments]
    target = math.ceil(cfg.target_multiplier * len(segments))
    raw_enabled = (cfg.use_noise and cfg.noise_rel_std > 0) or (
        cfg.use_shift and cfg.max_shift_samples > 0)

    rnd = 0
    while raw_enabled and len(out) < target and (rnd < cfg.raw_rounds or not cfg.use_mixup):
        for i, seg in enumerate(segments):
            if cfg.use_noise and cfg.noise_rel_std > 0:
                rng = stream(cfg.rng_seed, _NOISE, rnd, i)
                out.append(fv(add_gaussian_noise(seg, cfg.noise_rel_std, rng)))
            if cfg.use_shift and cfg.max_shift_samples > 0:
                rng = stream(cfg.rng_seed, _SHIFT, rnd, i)
                m = cfg.max_shift_samples
                shift = int(rng.integers(-m, m + 1))
                shifted, _ = temporal_shift(parents[seg.recording_id], seg, shift)
                out.append(fv(shifted))
        rnd += 1

    if cfg.use_oversampling:
        out = random_oversample(out, stream(cfg.rng_seed, _OVERSAMPLE), n_classes)

    if cfg.use_mixup and len(out) < target:
        rng = stream(cfg.rng_seed, _MIXUP)
        pool = len(out)
        need = target - pool
        first = rng.integers(0, pool, size=need)
        second = rng.integers(0, pool, size=need)
        lams = rng.beta(cfg.mixup_alpha, cfg.mixup_alpha, size=need)
        out.extend(mixup(out[i], out[j], float(lam)) for i, j, lam in zip(first, second, lams))

    if len(out) < target:
        raise ConfigError(
            f"augmentation produced {len(out)} vectors, below the target {target}; "
            "enable more techniques or lower target_multiplier"
        )
    return out


def class_counts(fvs) -> Counter:
    return Counter(int(np.argmax(f.soft_label)) for f in fvs)
