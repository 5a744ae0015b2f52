"""Command-line front end.

Exit codes: 0 ok, 2 configuration or checkpoint mismatch, 3 bad input data,
4 numeric failure (NaN or Inf during training).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, atomic_write
from .config import Config, ConfigError, load_config
from .diffusion import ModeMismatchError, generate, linear_beta_schedule
from .experiment import (
    classifier_with,
    evaluate,
    load_classifier,
    load_denoiser,
    n_classes_of,
    proportion_sweep,
    recordings_to_windows,
    resolve_split,
    save_classifier,
    save_denoiser,
    seeds_of,
    train_denoiser_for,
    write_report,
)
from .metrics import accuracy, macro_f1, per_class_f1
from .ndtensor import NonFiniteError
from .signal_data import (
    DataError,
    SplitError,
    labeled_subset,
    load_csv_dir,
    make_synthetic_corpus,
    segment_windows,
    stack,
    subject_split,
    write_csv_recording,
)
from .statfeat import build_conditioner
from .trainer import LeakageError, RunRecord, rng_stream, train_diffusion

log = logging.getLogger("sfdm")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _config(args) -> Config:
    cfg = load_config(args.config) if getattr(args, "config", None) else Config()
    if getattr(args, "seed", None) is not None:
        cfg.set("train.seed", args.seed)
    return cfg


def _windows(data_dir, cfg: Config):
    windows = recordings_to_windows(load_csv_dir(data_dir), cfg)
    if not windows:
        raise DataError(f"{data_dir}: no complete window of length {cfg['data.window']}")
    return windows


def _splits(windows, cfg: Config, seed: int):
    spec = resolve_split([w.subject_id for w in windows], cfg)
    return subject_split(windows, spec, rng_stream(seed, "split"))


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_synth_data(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for rec in make_synthetic_corpus(cfg.corpus_spec()):
        write_csv_recording(rec, out / f"{rec.subject_id}.csv")
    return EXIT_OK


def cmd_train_dm(args) -> int:
    cfg = _config(args)
    seed = cfg["train.seed"]
    windows = _windows(args.data, cfg)
    n_classes = n_classes_of(windows, cfg)
    splits = _splits(windows, cfg, seed)
    model, rec = train_diffusion(
        splits.train, cfg.train_config("dm"), model_config=cfg.denoiser_config(n_classes),
        schedule=cfg.schedule(), val_windows=splits.val, n_classes=n_classes,
    )
    save_denoiser(args.out, model, cfg.fingerprint())
    _write_record(args.out, rec, cfg)
    return EXIT_OK


def _write_record(ckpt, rec: RunRecord, cfg: Config) -> None:
    head = json.dumps({"fingerprint": cfg.fingerprint(), "best_epoch": rec.best_epoch, "stop_epoch": rec.stop_epoch},
                      separators=(",", ":"))
    atomic_write(Path(str(ckpt) + ".runrecord.ndjson"), head + "\n" + rec.to_ndjson())


def cmd_generate(args) -> int:
    dm = load_denoiser(args.ckpt)
    window = dm.config.window
    n_classes = dm.extra.get("n_classes")
    windows = []
    for rec in load_csv_dir(args.data):
        windows.extend(segment_windows(rec, window))
    if not windows:
        raise DataError(f"{args.data}: no complete window of length {window}")
    x, y = stack(windows)
    n_classes = n_classes or int(y.max()) + 1
    schedule = linear_beta_schedule(dm.extra.get("T", 50), dm.extra.get("beta_min", 1e-4),
                                    dm.extra.get("beta_max", 0.05), dm.extra.get("cumulative", False))
    rng = rng_stream(args.seed, "generate")
    lines = [json.dumps({"W": window, "n_c": n_classes, "mode": dm.mode, "seed": args.seed}, separators=(",", ":"))]
    absent = []
    for c in range(n_classes):
        idx = np.flatnonzero(y == c)
        if idx.size == 0:
            absent.append(c)
            continue
        pick = rng.choice(idx, size=args.per_class, replace=idx.size < args.per_class)
        cond = build_conditioner(x[pick], dm.mode, n_classes, labels=y[pick])
        synth = generate(dm, cond, rng, schedule, args.gen_mode)
        for row in synth[:, 0, :]:
            lines.append(json.dumps({"class": c, "values": [float(v) for v in row]}, separators=(",", ":")))
    if absent:
        log.warning("classes absent from %s, skipped: %s", args.data, ", ".join(map(str, absent)))
    atomic_write(args.out, "".join(line + "\n" for line in lines))
    return EXIT_OK


def cmd_train_clf(args) -> int:
    cfg = _config(args)
    if args.labeled_fraction is not None:
        cfg.set("split.labeled_fraction", args.labeled_fraction)
    seed = cfg["train.seed"]
    fraction = cfg["split.labeled_fraction"]
    windows = _windows(args.data, cfg)
    n_classes = n_classes_of(windows, cfg)
    splits = _splits(windows, cfg, seed)
    labeled = labeled_subset(splits.train, fraction, rng_stream(seed, "split.labeled", int(round(fraction * 1000))))
    dm = None
    if not args.baseline:
        if args.dm:
            dm = load_denoiser(args.dm)
            if dm.config.window != cfg["data.window"]:
                raise ConfigError(f"window mismatch: denoiser {args.dm} was trained with W={dm.config.window}, "
                                  f"config has data.window={cfg['data.window']}")
        else:
            dm = train_denoiser_for(splits.train, cfg, seed, cfg["cond.mode"], n_classes, splits.val)
    params, clf_config = classifier_with(dm, labeled, splits, cfg, seed, n_classes)
    save_classifier(args.out, clf_config, "baseline" if dm is None else dm.mode, params, cfg.fingerprint())
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _config(args)
    clf_config, mode, params = load_classifier(args.ckpt)
    if clf_config.window != cfg["data.window"]:
        raise ConfigError(f"window mismatch: checkpoint {args.ckpt} has W={clf_config.window}, "
                          f"config has data.window={cfg['data.window']}")
    windows = _windows(args.data, cfg)
    splits = _splits(windows, cfg, cfg["train.seed"])
    cm = evaluate(params, clf_config, splits.test)
    result = {
        "fingerprint": cfg.fingerprint(),
        "mode": mode,
        "accuracy": accuracy(cm),
        "macro_f1": macro_f1(cm),
        "per_class_f1": per_class_f1(cm).tolist(),
        "confusion": cm.tolist(),
    }
    text = json.dumps(result, separators=(",", ":")) + "\n"
    if args.out:
        atomic_write(args.out, text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_experiment(args) -> int:
    cfg = _config(args)
    windows = _windows(args.data, cfg)
    out = Path(args.out)
    report = proportion_sweep(windows, cfg, seeds=seeds_of(cfg, args.seeds), checkpoint_dir=out / "checkpoints")
    write_report(report, out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sfdm", description="Statistical-feature-guided diffusion for wearable HAR.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="write the seeded synthetic corpus as CSV files")
    p.add_argument("--spec", dest="config", help="config file with corpus.* keys")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("train-dm", help="train the diffusion denoiser")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train_dm)

    p = sub.add_parser("generate", help="sample synthetic windows from a trained denoiser")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--per-class", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--gen-mode", choices=("single-shot", "iterative"), default="single-shot")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train-clf", help="pretrain on synthetic data and fine-tune, or train a real-only baseline")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dm", help="denoiser checkpoint; trained on the fly when omitted")
    p.add_argument("--baseline", action="store_true")
    p.add_argument("--labeled-fraction", type=float)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train_clf)

    p = sub.add_parser("eval", help="accuracy, macro-F1 and confusion on the test split")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("experiment", help="full labeled-proportion sweep with report tables")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if getattr(args, "per_class", 1) < 1:
            raise ConfigError("--per-class must be >= 1")
        return args.func(args)
    except NonFiniteError as exc:
        log.error("numeric failure: %s", exc)
        return EXIT_NUMERIC
    except (DataError, LeakageError) as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    except (ConfigError, SplitError, CheckpointError, ModeMismatchError) as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
