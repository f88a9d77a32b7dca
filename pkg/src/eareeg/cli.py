"""Command-line entry point: ``eareeg <command> [options]``.

Commands
--------
synth       write the synthetic cohort as .earg files plus manifest.json
preprocess  channel selection and filtering of raw recordings
extract     segment cleaned recordings and write features.csv
augment     split cleaned recordings, augment the training split, write train/val/test CSVs
train       fit the standardizer and the classifier on train.csv / val.csv
eval        score a trained model on test.csv
ablate      train every architecture of the ablation list on one shared split
pipeline    preprocess -> split -> augment -> standardize -> train -> evaluate

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure, 1 anything else.
"""

from __future__ import annotations

import argparse
import contextlib
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import pipeline as pl
from .augment import augment_training_set, compute_class_weights
from .dataio import save_recording
from .errors import ConfigError, DataError, NumericError
from .evaluation import (REFERENCE_FINAL_ACCURACY, evaluate, run_ablation, split_hash,
                         split_indices)
from .features import Standardizer, fit_standardizer, read_feature_csv, stack, write_feature_csv
from .model import load_model, save_model, train

log = logging.getLogger("eareeg")

EXIT_OK, EXIT_OTHER, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3, 4


class _Stage:
    name = "setup"


_stage = _Stage()


@contextlib.contextmanager
def stage(name: str):
    _stage.name = name
    log.info("stage %s", name)
    yield


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def build_config(args) -> pl.PipelineConfig:
    """Config file values, then ``--set`` overrides, then dedicated flags (flags win)."""
    raw = {}
    if getattr(args, "config", None):
        try:
            raw = json.loads(Path(args.config).read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {args.config}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {args.config} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
    for item in getattr(args, "set", None) or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        *parents, leaf = key.split(".")
        node = raw
        for p in parents:
            node = node.setdefault(p, {})
        node[leaf] = _parse_value(value)
    if args.seed is not None:
        raw["seed"] = args.seed
    if getattr(args, "input", None):
        raw["recordings"] = list(args.input)
    if args.out is not None:
        raw["out"] = args.out
    if args.threads is not None:
        raw["threads"] = args.threads
    if args.fs is not None:
        raw["csv_fs"] = args.fs
    cfg = pl.config_from_dict(raw)
    if cfg.threads is None:
        cfg.threads = pl.available_threads()
    return cfg


def _out_dir(cfg) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _input_dir(args, cfg) -> Path:
    if getattr(args, "input", None):
        return Path(args.input[0])
    return Path(cfg.out)


# -- commands -------------------------------------------------------------------


def cmd_synth(args) -> int:
    cfg = build_config(args)
    if args.n_subjects is not None or args.duration is not None:
        cfg.synth = dataclasses.replace(
            cfg.synth,
            n_subjects=args.n_subjects if args.n_subjects is not None else cfg.synth.n_subjects,
            duration_s=args.duration if args.duration is not None else cfg.synth.duration_s,
        )
        cfg.synth.validate()
    out = _out_dir(cfg)
    with stage("synth"):
        from .dataio import default_cohort, generate_synthetic_subject
        specs = default_cohort(cfg.synth.n_subjects, cfg.synth.rng_seed)
        files = []
        for spec in specs:
            rec = generate_synthetic_subject(spec, cfg.synth.duration_s, cfg.synth.fs)
            name = f"subject_{spec.subject_id:02d}.earg"
            save_recording(rec, out / name)
            files.append({"file": name, "subject_id": spec.subject_id, "rng_seed": spec.rng_seed,
                          "tone_freq_hz": spec.tone_freq_hz,
                          "ar_order": int(len(spec.ar_coeffs[0]))})
        _write_json(out / "manifest.json", {
            "master_seed": cfg.seed,
            "cohort_seed": cfg.synth.rng_seed,
            "duration_s": cfg.synth.duration_s,
            "fs": cfg.synth.fs,
            "files": files,
        })
    print(f"wrote {len(files)} recordings to {out}")
    return EXIT_OK


def _require_recordings(cfg):
    if not cfg.recordings:
        raise ConfigError("no input recordings: pass --input or set 'recordings' in the config")
    return pl.load_recordings(cfg.recordings, fs=cfg.csv_fs)


def cmd_preprocess(args) -> int:
    cfg = build_config(args)
    out = _out_dir(cfg)
    with stage("load"):
        recs = _require_recordings(cfg)
    with stage("preprocess"):
        cleaned = pl.clean_recordings(recs, cfg)
        for path, rec in zip(pl.find_recordings(cfg.recordings), cleaned):
            save_recording(rec, out / (Path(path).stem + ".earg"))
    print(f"wrote {len(cleaned)} cleaned recordings to {out}")
    return EXIT_OK


def cmd_extract(args) -> int:
    cfg = build_config(args)
    out = _out_dir(cfg)
    with stage("load"):
        recs = _require_recordings(cfg)
    with stage("extract"):
        segs = pl.segment_all(recs, cfg)
        fvs = pl.extract_all(segs, cfg, recs[0].sampling_rate_hz, pl.n_classes_of(recs),
                             cfg.threads)
        write_feature_csv(fvs, out / "features.csv")
        lines = ["row,recording_id,source_offset,subject_id"]
        lines += [f"{i},{s.recording_id},{s.source_offset},{s.subject_id}"
                  for i, s in enumerate(segs)]
        (out / "segments.csv").write_text("\n".join(lines) + "\n")
    print(f"wrote {len(fvs)} feature vectors to {out / 'features.csv'}")
    return EXIT_OK


def cmd_augment(args) -> int:
    cfg = build_config(args)
    out = _out_dir(cfg)
    with stage("load"):
        recs = _require_recordings(cfg)
    with stage("split"):
        segs = pl.segment_all(recs, cfg)
        tr, va, te = split_indices([s.subject_id for s in segs], cfg.split,
                                   [s.recording_id for s in segs],
                                   [s.source_offset for s in segs])
    with stage("augment"):
        fs = recs[0].sampling_rate_hz
        k = pl.n_classes_of(recs)
        parents = {r.recording_id: r for r in recs}
        train_fv = augment_training_set([segs[i] for i in tr], parents, cfg.augment,
                                        cfg.features.welch(fs), cfg.features.ar_order, k)
    with stage("extract"):
        val_fv = pl.extract_all([segs[i] for i in va], cfg, fs, k, cfg.threads)
        test_fv = pl.extract_all([segs[i] for i in te], cfg, fs, k, cfg.threads)
        write_feature_csv(train_fv, out / "train.csv")
        write_feature_csv(val_fv, out / "val.csv")
        write_feature_csv(test_fv, out / "test.csv")
        _write_json(out / "split.json", {
            "split_id": split_hash(tr, va, te), "strategy": cfg.split.strategy,
            "n_train_segments": len(tr), "n_train_augmented": len(train_fv),
            "n_val": len(va), "n_test": len(te),
        })
    print(f"train {len(train_fv)} (from {len(tr)} segments), val {len(va)}, test {len(te)}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = build_config(args)
    src = _input_dir(args, cfg)
    out = Path(args.out) if args.out else src
    out.mkdir(parents=True, exist_ok=True)
    with stage("load"):
        train_fv = read_feature_csv(src / "train.csv")
        val_fv = read_feature_csv(src / "val.csv")
    with stage("standardize"):
        X, Y = stack(train_fv)
        Xv, Yv = stack(val_fv)
        std = fit_standardizer(X)
        _write_json(out / "standardizer.json", std.to_dict())
    with stage("train"):
        mcfg = dataclasses.replace(cfg.model, input_dim=X.shape[1], n_classes=Y.shape[1])
        weights = compute_class_weights(np.argmax(Y, axis=1), Y.shape[1]) \
            if cfg.class_weighting else None
        model, hist = train(std.transform(X), Y, std.transform(Xv), Yv, mcfg, weights,
                            log=log.debug)
        save_model(model, out / "model.json")
        hist.to_csv(out / "history.csv")
    print(f"best epoch {hist.best_epoch}, val accuracy {hist.val_accuracy[hist.best_epoch]:.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = build_config(args)
    src = _input_dir(args, cfg)
    out = Path(args.out) if args.out else src
    out.mkdir(parents=True, exist_ok=True)
    with stage("load"):
        model = load_model(src / "model.json")
        std = Standardizer.from_dict(json.loads((src / "standardizer.json").read_text()))
        test_fv = read_feature_csv(src / "test.csv")
    with stage("evaluate"):
        report = evaluate(model, std, test_fv)
        (out / "report.json").write_text(report.to_json() + "\n")
        (out / "report.txt").write_text(report.render() + "\n")
    print(report.render())
    return EXIT_OK


def _recordings_for_run(cfg):
    return pl.get_recordings(cfg)


def cmd_pipeline(args) -> int:
    cfg = build_config(args)
    out = _out_dir(cfg)
    with stage("load"):
        recs = _recordings_for_run(cfg)
    with stage("preprocess"):
        cleaned = pl.clean_recordings(recs, cfg)
    with stage("augment"):
        data = pl.prepare_data(cleaned, cfg, threads=cfg.threads)
    with stage("train"):
        mcfg = dataclasses.replace(cfg.model, n_classes=data.extra["n_classes"])
        model, hist = train(data.train_X, data.train_Y, data.val_X, data.val_Y, mcfg,
                            data.class_weights, log=log.debug)
    with stage("evaluate"):
        report = evaluate(model, data.standardizer, data.test)
    with stage("write"):
        save_model(model, out / "model.json")
        _write_json(out / "standardizer.json", data.standardizer.to_dict())
        hist.to_csv(out / "history.csv")
        (out / "report.json").write_text(report.to_json() + "\n")
        (out / "report.txt").write_text(
            report.render()
            + f"\nreference accuracy for 256-128-64-32 on the original dataset: "
              f"{REFERENCE_FINAL_ACCURACY:.1f}%\n")
        extra = {k: v for k, v in data.extra.items() if not k.endswith("_idx")}
        _write_json(out / "split.json", {"split_id": data.split_id, **extra,
                                         "strategy": cfg.split.strategy})
    print(report.render())
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = build_config(args)
    if not cfg.ablation:
        raise ConfigError("ablation list is empty")
    out = _out_dir(cfg)
    with stage("load"):
        recs = _recordings_for_run(cfg)
    with stage("preprocess"):
        cleaned = pl.clean_recordings(recs, cfg)
    with stage("augment"):
        data = pl.prepare_data(cleaned, cfg, threads=cfg.threads)
    with stage("ablate"):
        configs = pl.ablation_configs(cfg, data.extra["n_classes"])
        table = run_ablation(data, configs, log=log.info)
        log.info("all %d rows share split %s", len(table.rows), data.split_id)
        (out / "ablation.csv").write_text(table.to_csv())
        (out / "ablation.txt").write_text(
            table.render() + f"\nsplit {data.split_id} ({cfg.split.strategy})\n")
    print(table.render())
    return EXIT_OK


COMMANDS = {
    "synth": (cmd_synth, "write the synthetic cohort as .earg files"),
    "preprocess": (cmd_preprocess, "select channels and filter raw recordings"),
    "extract": (cmd_extract, "segment cleaned recordings and extract features"),
    "augment": (cmd_augment, "split, augment the training split, write feature CSVs"),
    "train": (cmd_train, "train the classifier on train.csv/val.csv"),
    "eval": (cmd_eval, "evaluate model.json on test.csv"),
    "ablate": (cmd_ablate, "architecture ablation on a shared split"),
    "pipeline": (cmd_pipeline, "run every stage end to end"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eareeg", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (func, helptext) in COMMANDS.items():
        p = sub.add_parser(name, help=helptext, description=helptext)
        p.add_argument("--config", metavar="PATH", required=name in ("pipeline", "ablate"),
                       help="JSON configuration file")
        p.add_argument("--seed", type=int, help="master random seed (overrides the config)")
        p.add_argument("--out", metavar="DIR", help="output directory")
        p.add_argument("--input", nargs="+", metavar="PATH",
                       help="input recordings (files or directories) or, for train/eval, "
                            "the directory holding the CSV/model files")
        p.add_argument("--fs", type=float, help="sampling rate of CSV recordings in Hz")
        p.add_argument("--threads", type=int, help="worker threads (default: available CPUs)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config value, e.g. --set model.max_epochs=50")
        p.add_argument("--verbose", "-v", action="count", default=0,
                       help="log progress (-vv for per-epoch output)")
        if name == "synth":
            p.add_argument("--n-subjects", type=int, help="number of synthetic subjects")
            p.add_argument("--duration", type=float, help="recording length in seconds")
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(message)s",
                        stream=sys.stderr)
    _stage.name = "setup"
    try:
        return args.func(args)
    except ConfigError as exc:
        code = EXIT_CONFIG
        err = exc
    except (DataError, FileNotFoundError) as exc:
        code = EXIT_DATA
        err = exc
    except (NumericError, FloatingPointError) as exc:
        code = EXIT_NUMERIC
        err = exc
    except Exception as exc:  # noqa: BLE001 - reported with its stage, then exit 1
        code = EXIT_OTHER
        err = exc
    print(f"eareeg {args.command}: error in stage '{_stage.name}': "
          f"{type(err).__name__}: {err}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
