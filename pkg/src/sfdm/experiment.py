"""Labeled-proportion sweep over seeds and subject folds, plus report writers."""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import checkpoint
from .classifier import ClassifierConfig, predict
from .config import Config, ConfigError
from .denoiser import Denoiser, DenoiserConfig
from .diffusion import generate
from .metrics import MeanStd, accuracy, aggregate_runs, confusion_matrix, macro_f1, per_class_f1
from .signal_data import RawRecording, SplitSpec, Splits, Window, labeled_subset, segment_windows, stack, subject_split
from .statfeat import ConditionerMode, build_conditioner
from .trainer import (
    BatchHook,
    finetune_classifier,
    pretrain_classifier,
    rng_stream,
    train_baseline,
    train_diffusion,
)

log = logging.getLogger(__name__)

VARIANTS = ("baseline", "cc-dm", "sf-dm-corresp", "sf-dm-all")
VARIANT_NAMES = {
    "baseline": "Baseline",
    "cc-dm": "CC-DM",
    "sf-dm-corresp": "SF-DM[Corresp.P]",
    "sf-dm-all": "SF-DM[Proportion:1]",
}


# ---------------------------------------------------------------------------
# data plumbing
# ---------------------------------------------------------------------------


def recordings_to_windows(recordings: Sequence[RawRecording], cfg: Config) -> list[Window]:
    out = []
    for rec in recordings:
        out.extend(segment_windows(rec, cfg["data.window"], cfg["data.stride"] or None))
    return out


def resolve_split(subjects: Sequence[str], cfg: Config, fold: int = 0) -> SplitSpec:
    """Explicit ``split.*`` subject lists, or last subject test / second-to-last val.

    Fold ``k`` rotates the ordered subject list by ``k`` test-set widths and
    re-cuts it with the same split sizes.
    """
    train, val, test = cfg["split.train"], cfg["split.val"], cfg["split.test"]
    if not (train or val or test):
        subjects = sorted(set(subjects))
        if len(subjects) < 3:
            raise ConfigError(f"automatic split needs >= 3 subjects, found {len(subjects)}")
        train, val, test = subjects[:-2], subjects[-2:-1], subjects[-1:]
    if fold:
        order = list(train) + list(val) + list(test)
        shift = (fold * len(test)) % len(order)
        order = order[-shift:] + order[:-shift] if shift else order
        train, val, test = order[: len(train)], order[len(train) : len(train) + len(val)], order[len(train) + len(val) :]
    try:
        return SplitSpec(train, val, test, cfg["split.labeled_fraction"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def n_classes_of(windows: Sequence[Window], cfg: Config) -> int:
    _, y = stack(windows)
    return cfg["clf.n_classes"] or int(y.max()) + 1


# ---------------------------------------------------------------------------
# one pipeline run
# ---------------------------------------------------------------------------


@dataclass
class RunResult:
    fold: int
    seed: int
    proportion: float
    variant: str
    accuracy: float
    macro_f1: float
    per_class_f1: list[float]
    confusion: list[list[int]]


def evaluate(params, clf_config, windows: Sequence[Window]) -> np.ndarray:
    x, y = stack(windows)
    return confusion_matrix(y, predict(params, clf_config, x), clf_config.n_classes)


def train_denoiser_for(windows, cfg: Config, seed: int, mode: str, n_classes: int, val=None,
                       batch_hook: BatchHook | None = None) -> Denoiser:
    tc = cfg.train_config("dm")
    tc.seed, tc.cond_mode = seed, mode
    model, _ = train_diffusion(
        windows, tc, model_config=cfg.denoiser_config(n_classes, mode), schedule=cfg.schedule(),
        val_windows=val, n_classes=n_classes, batch_hook=batch_hook,
    )
    return model


def classifier_with(denoiser: Denoiser | None, labeled, splits: Splits, cfg: Config, seed: int, n_classes: int,
                    batch_hook: BatchHook | None = None):
    """Pretrain on synthetic samples (when a denoiser is given), then fine-tune on real."""
    clf_config = cfg.classifier_config(n_classes)
    ft = cfg.train_config("finetune")
    ft.seed = seed
    if denoiser is None:
        params, _ = train_baseline(labeled, ft, clf_config=clf_config, val_windows=splits.val, batch_hook=batch_hook)
        return params, clf_config
    pt = cfg.train_config("pretrain")
    pt.seed = seed
    params, _ = pretrain_classifier(denoiser, labeled, pt, clf_config=clf_config, schedule=cfg.schedule(),
                                    val_windows=splits.val, batch_hook=batch_hook)
    params, _ = finetune_classifier(params, labeled, ft, clf_config=clf_config, val_windows=splits.val,
                                    batch_hook=batch_hook)
    return params, clf_config


def make_overlay(denoiser: Denoiser, labeled: Sequence[Window], cfg: Config, seed: int, n_classes: int,
                 per_class: int = 2):
    """(class, real, synthetic) triples drawn from the first labeled windows of each class."""
    picked = []
    for c in range(n_classes):
        picked.extend([w for w in labeled if w.label == c][:per_class])
    if not picked:
        return []
    x, y = stack(picked)
    cond = build_conditioner(x, denoiser.mode, n_classes, labels=y)
    synth = generate(denoiser, cond, rng_stream(seed, "overlay"), cfg.schedule(), cfg["gen.mode"])
    return [(int(c), real, s[0]) for c, real, s in zip(y, x, synth)]


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------


@dataclass
class CellSummary:
    proportion: float
    variant: str
    accuracy: MeanStd
    macro_f1: MeanStd
    per_class_f1: list[float]
    confusion: list[list[int]]


@dataclass
class ExperimentReport:
    fingerprint: str
    config_text: str
    runs: list[RunResult] = field(default_factory=list)
    cells: list[CellSummary] = field(default_factory=list)
    overlay: list[tuple[int, np.ndarray, np.ndarray]] = field(default_factory=list)

    def cell(self, proportion: float, variant: str) -> CellSummary:
        for c in self.cells:
            if c.proportion == proportion and c.variant == variant:
                return c
        raise KeyError((proportion, variant))


def seeds_of(cfg: Config, n: int | None = None) -> list[int]:
    n = cfg["experiment.seeds"] if n is None else n
    return [cfg["train.seed"] + i for i in range(n)]


def proportion_sweep(
    windows: Sequence[Window],
    cfg: Config,
    *,
    proportions: Sequence[float] | None = None,
    variants: Sequence[str] | None = None,
    seeds: Sequence[int] | None = None,
    folds: int | None = None,
    checkpoint_dir=None,
    batch_hook: BatchHook | None = None,
) -> ExperimentReport:
    """Every (fold, seed, proportion, variant) run, then mean ± std per (proportion, variant).

    ``sf-dm-all`` trains its denoiser on every training window without labels;
    ``sf-dm-corresp`` and ``cc-dm`` train theirs only on the labeled fraction.
    The classifier always sees only the labeled fraction.
    """
    proportions = list(cfg["experiment.proportions"] if proportions is None else proportions)
    variants = list(cfg["experiment.variants"] if variants is None else variants)
    seeds = list(seeds_of(cfg) if seeds is None else seeds)
    folds = cfg["experiment.folds"] if folds is None else folds
    for p in proportions:
        if not 0.0 < p <= 1.0:
            raise ConfigError(f"labeled proportion must lie in (0, 1], got {p}")
    for v in variants:
        if v not in VARIANTS:
            raise ConfigError(f"unknown variant {v!r}; choose from {', '.join(VARIANTS)}")
    if len(seeds) * folds < 2:
        raise ConfigError("an experiment needs at least two runs per cell (seeds x folds)")

    ckdir = Path(checkpoint_dir) if checkpoint_dir else None
    n_classes = n_classes_of(windows, cfg)
    report = ExperimentReport(cfg.fingerprint(), cfg.to_text())
    subjects = [w.subject_id for w in windows]

    for fold in range(folds):
        spec = resolve_split(subjects, cfg, fold)
        for seed in seeds:
            splits = subject_split(windows, spec, rng_stream(seed, "split"))
            dm_all = None
            for p in proportions:
                labeled = labeled_subset(splits.train, p, rng_stream(seed, "split.labeled", int(round(p * 1000))))
                for variant in variants:
                    if variant == "baseline":
                        dm = None
                    elif variant == "sf-dm-all":
                        if dm_all is None:
                            dm_all = train_denoiser_for(splits.train, cfg, seed, ConditionerMode.STAT_FEATURES.value,
                                                        n_classes, splits.val, batch_hook)
                            _save_dm(ckdir, f"f{fold}_s{seed}_dm-all", dm_all, report.fingerprint)
                        dm = dm_all
                    else:
                        mode = (ConditionerMode.CLASS_ONEHOT if variant == "cc-dm" else ConditionerMode.STAT_FEATURES).value
                        dm = train_denoiser_for(labeled, cfg, seed, mode, n_classes, splits.val, batch_hook)
                        _save_dm(ckdir, f"f{fold}_s{seed}_p{p:g}_{variant}", dm, report.fingerprint)
                    params, clf_config = classifier_with(dm, labeled, splits, cfg, seed, n_classes, batch_hook)
                    if ckdir:
                        save_classifier(ckdir / f"f{fold}_s{seed}_p{p:g}_{variant}.sfcl", clf_config, variant, params,
                                        report.fingerprint)
                    cm = evaluate(params, clf_config, splits.test)
                    report.runs.append(RunResult(fold, seed, p, variant, accuracy(cm), macro_f1(cm),
                                                 per_class_f1(cm).tolist(), cm.tolist()))
                    log.info("fold %d seed %d p=%g %s: acc %.3f f1 %.3f", fold, seed, p, variant,
                             report.runs[-1].accuracy, report.runs[-1].macro_f1)
                    if not report.overlay and dm is not None and variant == "sf-dm-all":
                        report.overlay = make_overlay(dm, labeled, cfg, seed, n_classes)

    for p in proportions:
        for variant in variants:
            rows = [r for r in report.runs if r.proportion == p and r.variant == variant]
            cms = np.sum([r.confusion for r in rows], axis=0)
            report.cells.append(CellSummary(
                p, variant,
                aggregate_runs([r.accuracy for r in rows]),
                aggregate_runs([r.macro_f1 for r in rows]),
                np.mean([r.per_class_f1 for r in rows], axis=0).tolist(),
                cms.tolist(),
            ))
    return report


def _save_dm(ckdir: Path | None, stem: str, dm: Denoiser, fingerprint: str) -> None:
    if ckdir:
        save_denoiser(ckdir / f"{stem}.sfdm", dm, fingerprint)


def save_denoiser(path, dm: Denoiser, fingerprint: str | None = None) -> None:
    cfg = dict(dm.config.to_dict(), **{f"schedule.{k}": v for k, v in dm.extra.items()})
    if fingerprint:
        cfg["fingerprint"] = fingerprint
    checkpoint.save(path, checkpoint.DENOISER_MAGIC, cfg, dm.mode, dm.params)


def save_classifier(path, clf_config: ClassifierConfig, mode: str, params, fingerprint: str | None = None) -> None:
    cfg = clf_config.to_dict()
    if fingerprint:
        cfg["fingerprint"] = fingerprint
    checkpoint.save(path, checkpoint.CLASSIFIER_MAGIC, cfg, mode, params)


def load_denoiser(path) -> Denoiser:
    """Inverse of :func:`save_denoiser`; returns the model and its schedule keys in ``extra``."""
    raw, mode, params = checkpoint.load(path, checkpoint.DENOISER_MAGIC)
    raw.pop("fingerprint", None)
    extra = {k.split(".", 1)[1]: raw.pop(k) for k in list(raw) if k.startswith("schedule.")}
    raw["channels"] = tuple(raw["channels"])
    try:
        config = DenoiserConfig(**raw)
    except (TypeError, ValueError) as exc:
        raise checkpoint.CheckpointError(f"{path}: bad denoiser config in header: {exc}") from None
    return Denoiser(config, params, mode, extra)


def load_classifier(path):
    raw, mode, params = checkpoint.load(path, checkpoint.CLASSIFIER_MAGIC)
    raw.pop("fingerprint", None)
    raw["channels"], raw["fc"] = tuple(raw["channels"]), tuple(raw["fc"])
    try:
        return ClassifierConfig(**raw), mode, params
    except (TypeError, ValueError) as exc:
        raise checkpoint.CheckpointError(f"{path}: bad classifier config in header: {exc}") from None


# ---------------------------------------------------------------------------
# writers
# ---------------------------------------------------------------------------


def emit_overlay(real: Sequence, synthetic: Sequence, classes: Sequence[int], path) -> None:
    """NDJSON, one ``{"class", "real", "synthetic"}`` object per pair."""
    if not (len(real) == len(synthetic) == len(classes)):
        raise ValueError("overlay needs equal numbers of real windows, synthetic windows and classes")
    lines = []
    for c, r, s in zip(classes, real, synthetic):
        r = np.asarray(r, dtype=np.float64).reshape(-1)
        s = np.asarray(s, dtype=np.float64).reshape(-1)
        if r.shape != s.shape:
            raise ValueError(f"overlay pair lengths differ: {r.size} vs {s.size}")
        lines.append(json.dumps({"class": int(c), "real": r.tolist(), "synthetic": s.tolist()}, separators=(",", ":")))
    checkpoint.atomic_write(path, "".join(line + "\n" for line in lines))


def read_overlay(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text(encoding="utf-8").splitlines() if line]


def to_csv(headers: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(headers)
    w.writerows(rows)
    return buf.getvalue()


def to_markdown(headers: Sequence[str], rows: Sequence[Sequence]) -> str:
    cells = [[str(h) for h in headers]] + [[str(v) for v in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(headers))]

    def line(r):
        return "| " + " | ".join(v.ljust(w) for v, w in zip(r, widths)) + " |\n"

    return line(cells[0]) + "|" + "|".join("-" * (w + 2) for w in widths) + "|\n" + "".join(line(r) for r in cells[1:])


def write_table(out_dir: Path, stem: str, headers, rows) -> None:
    checkpoint.atomic_write(out_dir / f"{stem}.csv", to_csv(headers, rows))
    checkpoint.atomic_write(out_dir / f"{stem}.md", to_markdown(headers, rows))


def write_report(report: ExperimentReport, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_table(out, "runs", ["fold", "seed", "proportion", "variant", "accuracy", "macro_f1"],
                [[r.fold, r.seed, f"{r.proportion:g}", VARIANT_NAMES[r.variant], f"{r.accuracy:.6f}", f"{r.macro_f1:.6f}"]
                 for r in report.runs])
    write_table(out, "summary",
                ["proportion", "variant", "runs", "accuracy", "macro_f1", "accuracy_mean", "accuracy_std",
                 "macro_f1_mean", "macro_f1_std"],
                [[f"{c.proportion:g}", VARIANT_NAMES[c.variant], c.accuracy.n, str(c.accuracy), str(c.macro_f1),
                  f"{c.accuracy.mean:.6f}", f"{c.accuracy.std:.6f}", f"{c.macro_f1.mean:.6f}", f"{c.macro_f1.std:.6f}"]
                 for c in report.cells])
    props = sorted({c.proportion for c in report.cells})
    variants = [v for v in VARIANTS if any(c.variant == v for c in report.cells)]
    for metric in ("accuracy", "macro_f1"):
        rows = [[f"{p:g}"] + [str(getattr(report.cell(p, v), metric)) for v in variants] for p in props]
        write_table(out, f"table_{metric}", ["proportion"] + [VARIANT_NAMES[v] for v in variants], rows)
    checkpoint.atomic_write(out / "confusion.ndjson", "".join(
        json.dumps({"proportion": c.proportion, "variant": c.variant, "confusion": c.confusion,
                    "per_class_f1": [round(v, 6) for v in c.per_class_f1]}, separators=(",", ":")) + "\n"
        for c in report.cells))
    checkpoint.atomic_write(out / "config.txt", report.config_text)
    checkpoint.atomic_write(out / "fingerprint.txt", report.fingerprint + "\n")
    if report.overlay:
        classes, real, synth = zip(*report.overlay)
        emit_overlay(real, synth, classes, out / "overlay.ndjson")
