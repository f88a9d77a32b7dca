"""End-to-end wiring: configuration, data preparation and the full run.

Seed derivation: every stage whose section does not set ``rng_seed``
explicitly gets ``SeedSequence([master_seed, STAGE]).generate_state(1)[0]``
with STAGE = 1 (synth), 2 (split), 3 (augment), 4 (model).
"""

from __future__ import annotations

import dataclasses
import json
import os
from collections import Counter, defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .augment import AugmentConfig, augment_training_set, compute_class_weights
from .dataio import (IN_EAR_CHANNELS, EegRecording, default_cohort, generate_synthetic_subject,
                     load_recording)
from .errors import ConfigError, DataError
from .evaluation import (ABLATION_ARCHITECTURES, REFERENCE_ABLATION, REFERENCE_FINAL_ACCURACY,
                         PreparedData, SplitSpec, split_hash,
                         split_indices, train_and_evaluate)
from .features import FeatureVector, WelchConfig, extract_features, fit_standardizer, stack
from .model import ModelConfig
from .preprocess import FilterSpec, preprocess_recording, segment_recording

STAGE_SEEDS = {"synth": 1, "split": 2, "augment": 3, "model": 4}


def derive_seed(master: int, stage: str) -> int:
    return int(np.random.SeedSequence([int(master), STAGE_SEEDS[stage]]).generate_state(1)[0])


@dataclass(frozen=True)
class SynthConfig:
    n_subjects: int = 6
    duration_s: float = 1001.0
    fs: float = 1000.0
    rng_seed: int = 0

    def validate(self) -> None:
        if self.n_subjects < 1:
            raise ConfigError("SynthConfig.n_subjects must be >= 1")
        if self.duration_s <= 0 or self.fs <= 0:
            raise ConfigError("SynthConfig.duration_s and fs must be positive")


@dataclass(frozen=True)
class PreprocessConfig:
    channels: tuple = IN_EAR_CHANNELS
    bandpass_low_hz: float = 0.5
    bandpass_high_hz: float = 100.0
    bandpass_order: int = 4
    notch_hz: float = 50.0
    notch_q: float = 30.0
    window_len: int = 2000
    hop: int = 1000

    @property
    def bandpass(self) -> FilterSpec:
        return FilterSpec("bandpass", low_hz=self.bandpass_low_hz,
                          high_hz=self.bandpass_high_hz, order=self.bandpass_order)

    @property
    def notch(self) -> FilterSpec:
        return FilterSpec("notch", center_hz=self.notch_hz, q_factor=self.notch_q)

    def validate(self, fs: float = 1000.0) -> None:
        try:
            self.bandpass.validate(fs)
            self.notch.validate(fs)
        except DataError as exc:
            raise ConfigError(f"PreprocessConfig: {exc}") from exc
        if self.window_len < 1 or self.hop < 1:
            raise ConfigError("PreprocessConfig.window_len and hop must be >= 1")
        if not self.channels:
            raise ConfigError("PreprocessConfig.channels is empty")


@dataclass(frozen=True)
class FeatureConfig:
    nperseg: int = 256
    noverlap: int = 128
    n_keep: int = 20
    ar_order: int = 10

    def welch(self, fs: float) -> WelchConfig:
        return WelchConfig(fs=fs, nperseg=self.nperseg, noverlap=self.noverlap)

    def validate(self, window_len: int) -> None:
        try:
            self.welch(1000.0).validate(window_len)
        except DataError as exc:
            raise ConfigError(f"FeatureConfig: {exc}") from exc
        if self.n_keep < 1 or self.n_keep > self.nperseg // 2 + 1:
            raise ConfigError("FeatureConfig.n_keep must be between 1 and the number of PSD bins")
        if self.ar_order < 1 or self.ar_order >= window_len:
            raise ConfigError("FeatureConfig.ar_order must be in [1, window_len)")


@dataclass
class PipelineConfig:
    seed: int = 0
    recordings: list | None = None
    csv_fs: float | None = None
    out: str = "out"
    class_weighting: bool = True
    threads: int | None = None
    synth: SynthConfig = field(default_factory=SynthConfig)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    split: SplitSpec = field(default_factory=SplitSpec)
    ablation: list = field(default_factory=lambda: [list(a) for a in ABLATION_ARCHITECTURES])

    def validate(self) -> None:
        self.synth.validate()
        self.preprocess.validate(self.synth.fs)
        self.features.validate(self.preprocess.window_len)
        try:
            self.augment.validate(self.preprocess.window_len)
        except ConfigError as exc:
            raise ConfigError(f"AugmentConfig: {exc}") from exc
        try:
            self.model.validate()
        except ConfigError as exc:
            raise ConfigError(f"ModelConfig: {exc}") from exc
        self.split.validate()
        expected = len(self.preprocess.channels) * (self.features.n_keep + self.features.ar_order + 4)
        if self.model.input_dim != expected:
            raise ConfigError(
                f"ModelConfig.input_dim {self.model.input_dim} does not match the feature "
                f"layout ({expected} = {len(self.preprocess.channels)} x "
                f"({self.features.n_keep} + {self.features.ar_order} + 4))"
            )
        for arch in self.ablation:
            if not arch or any(int(h) < 1 for h in arch):
                raise ConfigError(f"ablation architecture invalid: {arch}")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["model"] = self.model.to_dict()
        return json.loads(json.dumps(d))


_SECTIONS = {
    "synth": SynthConfig,
    "preprocess": PreprocessConfig,
    "features": FeatureConfig,
    "augment": AugmentConfig,
    "model": ModelConfig,
    "split": SplitSpec,
}
_SEEDED = {"synth": "synth", "split": "split", "augment": "augment", "model": "model"}


def _build(cls, values: dict, where: str):
    if not isinstance(values, dict):
        raise ConfigError(f"{where} must be a JSON object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kwargs = dict(values)
    for key in ("channels", "ratios", "hidden_dims"):
        if key in kwargs:
            kwargs[key] = tuple(kwargs[key])
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def config_from_dict(raw: dict) -> PipelineConfig:
    """Build and validate a config; unknown keys anywhere are rejected."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    top = {f.name for f in dataclasses.fields(PipelineConfig)}
    unknown = sorted(set(raw) - top)
    if unknown:
        raise ConfigError(f"config: unknown key(s) {', '.join(unknown)}")
    seed = int(raw.get("seed", 0))
    kwargs = {k: v for k, v in raw.items() if k not in _SECTIONS}
    for name, cls in _SECTIONS.items():
        section = dict(raw.get(name, {}))
        if name in _SEEDED and "rng_seed" not in section:
            section["rng_seed"] = derive_seed(seed, _SEEDED[name])
        kwargs[name] = _build(cls, section, _display_name(cls))
    cfg = PipelineConfig(**kwargs)
    cfg.validate()
    return cfg


def _display_name(cls) -> str:
    return cls.__name__


def load_config(path) -> PipelineConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    return config_from_dict(raw)


def default_config(seed: int = 0) -> PipelineConfig:
    return config_from_dict({"seed": seed})


# -- data access audit ----------------------------------------------------------


class AccessAudit:
    """Counts how many items each stage read from each split."""

    def __init__(self):
        self.counts = defaultdict(Counter)

    def record(self, stage: str, split: str, n: int) -> None:
        self.counts[stage][split] += int(n)

    def splits_seen(self, stage: str) -> set:
        return {s for s, n in self.counts[stage].items() if n > 0}


# -- stages -------------------------------------------------------------------


def synthesize(cfg: PipelineConfig) -> list[EegRecording]:
    specs = default_cohort(cfg.synth.n_subjects, cfg.synth.rng_seed)
    return [generate_synthetic_subject(s, cfg.synth.duration_s, cfg.synth.fs) for s in specs]


def find_recordings(paths) -> list[Path]:
    files = []
    for p in paths:
        p = Path(p)
        if p.is_dir():
            files += sorted(p.glob("*.earg")) + sorted(p.glob("*.csv"))
        else:
            files.append(p)
    if not files:
        raise DataError(f"no recordings found in {list(map(str, paths))}")
    return files


def load_recordings(paths, fs: float | None = None) -> list[EegRecording]:
    """Load recordings and give each a distinct ``recording_id`` (its position)."""
    recs = []
    for i, path in enumerate(find_recordings(paths)):
        if not path.exists():
            raise DataError(f"recording not found: {path}")
        rec = load_recording(path, fs=fs, recording_id=i)
        rec.recording_id = i
        recs.append(rec)
    return recs


def clean_recordings(recs, cfg: PipelineConfig) -> list[EegRecording]:
    pp = cfg.preprocess
    return [preprocess_recording(r, pp.channels, pp.bandpass, pp.notch) for r in recs]


def segment_all(cleaned, cfg: PipelineConfig) -> list:
    segs = []
    for rec in cleaned:
        segs += segment_recording(rec, cfg.preprocess.window_len, cfg.preprocess.hop)
    return segs


def n_classes_of(recs) -> int:
    return max(r.subject_id for r in recs) + 1


def extract_all(segments, cfg: PipelineConfig, fs: float, n_classes: int,
                threads: int | None = None) -> list[FeatureVector]:
    welch = cfg.features.welch(fs)

    def one(seg):
        return extract_features(seg, welch, cfg.features.ar_order, n_classes, cfg.features.n_keep)

    threads = threads or 1
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            return list(ex.map(one, segments))
    return [one(s) for s in segments]


def prepare_data(cleaned: list[EegRecording], cfg: PipelineConfig, audit: AccessAudit | None = None,
                 threads: int | None = None) -> PreparedData:
    """Segment, split, augment the training split, extract and standardise."""
    if not cleaned:
        raise DataError("no recordings")
    fs = cleaned[0].sampling_rate_hz
    if any(r.sampling_rate_hz != fs for r in cleaned):
        raise DataError("recordings have different sampling rates")
    n_classes = n_classes_of(cleaned)
    segments = segment_all(cleaned, cfg)
    labels = [s.subject_id for s in segments]
    tr, va, te = split_indices(labels, cfg.split, [s.recording_id for s in segments],
                               [s.source_offset for s in segments])
    parents = {r.recording_id: r for r in cleaned}
    train_fv = augment_training_set([segments[i] for i in tr], parents, cfg.augment,
                                    cfg.features.welch(fs), cfg.features.ar_order, n_classes,
                                    audit=audit)
    if audit is not None:
        audit.record("extract", "val", len(va))
        audit.record("extract", "test", len(te))
    val_fv = extract_all([segments[i] for i in va], cfg, fs, n_classes, threads)
    test_fv = extract_all([segments[i] for i in te], cfg, fs, n_classes, threads)

    train_X, train_Y = stack(train_fv)
    if audit is not None:
        audit.record("standardize_fit", "train", len(train_X))
    standardizer = fit_standardizer(train_X)
    val_X, val_Y = stack(val_fv)
    weights = None
    if cfg.class_weighting:
        weights = compute_class_weights(np.argmax(train_Y, axis=1), n_classes)
    return PreparedData(
        train_X=standardizer.transform(train_X),
        train_Y=train_Y,
        val_X=standardizer.transform(val_X),
        val_Y=val_Y,
        test=test_fv,
        standardizer=standardizer,
        class_weights=weights,
        split_id=split_hash(tr, va, te),
        extra={"n_segments": len(segments), "n_train_segments": len(tr),
               "n_val": len(va), "n_test": len(te), "n_train_augmented": len(train_fv),
               "n_classes": n_classes, "train_idx": tr, "val_idx": va, "test_idx": te},
    )


@dataclass
class PipelineResult:
    model: object
    history: object
    report: object
    data: PreparedData


def get_recordings(cfg: PipelineConfig) -> list[EegRecording]:
    """Recordings named in the config, or the synthetic cohort when none are."""
    if cfg.recordings:
        return load_recordings(cfg.recordings, fs=cfg.csv_fs)
    return synthesize(cfg)


def run_pipeline(cfg: PipelineConfig, recordings: list[EegRecording] | None = None,
                 audit: AccessAudit | None = None, log=None) -> PipelineResult:
    """preprocess -> split -> augment (train only) -> standardise -> train -> evaluate."""
    recs = recordings if recordings is not None else get_recordings(cfg)
    cleaned = clean_recordings(recs, cfg)
    data = prepare_data(cleaned, cfg, audit, threads=cfg.threads)
    model_cfg = dataclasses.replace(cfg.model, n_classes=data.extra["n_classes"])
    model, hist, report = train_and_evaluate(data, model_cfg, log=log)
    return PipelineResult(model, hist, report, data)


def ablation_configs(cfg: PipelineConfig, n_classes: int) -> list[ModelConfig]:
    return [dataclasses.replace(cfg.model, hidden_dims=tuple(int(h) for h in arch),
                                n_classes=n_classes)
            for arch in cfg.ablation]


def available_threads() -> int:
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count() or 1


def reference_comparison(cfg: PipelineConfig, recordings: list[EegRecording] | None = None,
                         strategies=("random_segment", "block_contiguous"), log=None) -> str:
    """Score the 256-128-64-32 network under each split strategy next to the reference table.

    Meant for a real recording set; nothing here checks the numbers, the
    reference values are printed only so the two can be read side by side.
    """
    recs = recordings if recordings is not None else get_recordings(cfg)
    lines = [f"{'Configuration':<22}{'Accuracy (%)':>14}{'Reference (%)':>15}  split"]
    for strategy in strategies:
        run_cfg = dataclasses.replace(
            cfg, split=dataclasses.replace(cfg.split, strategy=strategy),
            model=dataclasses.replace(cfg.model, hidden_dims=(256, 128, 64, 32)))
        res = run_pipeline(run_cfg, recs, log=log)
        lines.append(f"{'FC: 256-128-64-32':<22}{100 * res.report.overall_accuracy:14.1f}"
                     f"{REFERENCE_ABLATION['256-128-64-32']:15.1f}  {strategy}")
    ref = "  ".join(f"{k}={v:.1f}" for k, v in REFERENCE_ABLATION.items())
    lines.append(f"reference table: {ref}; reference final accuracy "
                 f"{REFERENCE_FINAL_ACCURACY:.1f}")
    return "\n".join(lines)
