"""Two-step training: denoiser on unlabeled windows, then classifier pretrain/fine-tune."""

from __future__ import annotations

import json
import logging
import time
import zlib
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import ndtensor as nt
from .classifier import ClassifierConfig, classifier_forward, init_classifier, predict
from .denoiser import Denoiser, DenoiserConfig, init_denoiser
from .diffusion import NoiseSchedule, forward_diffuse, generate, linear_beta_schedule, sample_step
from .metrics import confusion_matrix, macro_f1
from .signal_data import DataError, Window, stack
from .statfeat import ConditionerMode, build_conditioner, conditioner_channels

log = logging.getLogger(__name__)

BatchHook = Callable[[str, Sequence[Window]], None]


class LeakageError(RuntimeError):
    """A validation or test window was about to enter a gradient step."""


@dataclass
class TrainConfig:
    batch_size: int = 128
    lr: float = 2e-4
    max_epochs: int = 200
    patience: int = 20
    seed: int = 0
    labeled_fraction: float = 1.0
    cond_mode: str = ConditionerMode.STAT_FEATURES.value
    gen_mode: str = "single-shot"

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.patience < 1 or self.max_epochs < 0:
            raise ValueError("need patience >= 1 and max_epochs >= 0")
        # max_epochs == 0 skips a stage entirely
        if self.max_epochs and self.patience >= self.max_epochs:
            raise ValueError("patience must be smaller than max_epochs")
        ConditionerMode(self.cond_mode)
        if self.gen_mode not in ("single-shot", "iterative"):
            raise ValueError(f"unknown generation mode {self.gen_mode!r}")


@dataclass
class RunRecord:
    epochs: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    stop_epoch: int = -1
    wall_time: float = 0.0

    @property
    def train_losses(self) -> list[float]:
        return [e["train_loss"] for e in self.epochs]

    def to_ndjson(self) -> str:
        return "".join(json.dumps(e, separators=(",", ":")) + "\n" for e in self.epochs)


def rng_stream(seed: int, tag: str, step: int = 0) -> np.random.Generator:
    """Independent generator per (seed, purpose, step)."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(tag.encode()), int(step)]))


def _guard(windows: Sequence[Window]) -> None:
    for w in windows:
        if w.split not in (None, "train"):
            raise LeakageError(f"window of subject {w.subject_id} tagged {w.split!r} offered for training")


def _batches(n: int, size: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    for lo in range(0, n, size):
        yield perm[lo : lo + size]


def _fit(params: dict[str, nt.Tensor], config: TrainConfig, train_epoch, validate, higher_is_better: bool) -> RunRecord:
    """Epoch loop with early stopping; leaves ``params`` at the best validation epoch."""
    rec = RunRecord()
    start = time.perf_counter()
    best = None
    best_state = None
    for epoch in range(config.max_epochs):
        loss = float(train_epoch(epoch))
        metric = float(validate(epoch))
        rec.epochs.append({"epoch": epoch, "train_loss": loss, "val_metric": metric})
        rec.stop_epoch = epoch
        better = best is None or (metric > best if higher_is_better else metric < best)
        if better:
            best, rec.best_epoch = metric, epoch
            best_state = {k: v.data.copy() for k, v in params.items()}
        elif epoch - rec.best_epoch >= config.patience:
            break
    if best_state is not None:
        for k, v in params.items():
            v.data[...] = best_state[k]
            v.zero_grad()
    rec.wall_time = time.perf_counter() - start
    return rec


# ---------------------------------------------------------------------------
# step 1: denoiser
# ---------------------------------------------------------------------------


def _conditioners(windows: Sequence[Window], mode, n_classes) -> np.ndarray:
    x, y = stack(windows)
    if ConditionerMode(mode) is ConditionerMode.CLASS_ONEHOT and np.any(y < 0):
        raise DataError("class-onehot conditioner needs labeled windows")
    return build_conditioner(x, mode, n_classes, labels=y)


def reconstruction_mae(model: Denoiser, x: np.ndarray, cond: np.ndarray, schedule: NoiseSchedule,
                       rng: np.random.Generator, batch: int = 256) -> float:
    """Mean absolute reconstruction error under one draw of steps and noise."""
    total = 0.0
    with nt.no_grad():
        for lo in range(0, len(x), batch):
            xb = x[lo : lo + batch, None, :]
            t = sample_step(rng, schedule.T, len(xb))
            s = forward_diffuse(xb, t, schedule, rng)
            out = model(s.noisy, cond[lo : lo + batch], t)
            total += float(np.abs(out.data.astype(np.float64) - xb).sum())
    return total / x.size


def train_diffusion(
    windows: Sequence[Window],
    config: TrainConfig,
    *,
    model_config: DenoiserConfig | None = None,
    schedule: NoiseSchedule | None = None,
    val_windows: Sequence[Window] | None = None,
    n_classes: int | None = None,
    batch_hook: BatchHook | None = None,
    validate: Callable[[int], float] | None = None,
) -> tuple[Denoiser, RunRecord]:
    """Fit the denoiser to reconstruct clean windows from noised ones (MAE)."""
    if not windows:
        raise DataError("empty training set for the diffusion model")
    _guard(windows)
    mode = ConditionerMode(config.cond_mode)
    schedule = schedule or linear_beta_schedule()
    x, _ = stack(windows)
    cond = _conditioners(windows, mode, n_classes)
    if model_config is None:
        model_config = DenoiserConfig(window=x.shape[1], cond_channels=conditioner_channels(mode, n_classes))
    if cond.shape[1] != model_config.cond_channels:
        raise ValueError(f"conditioner has {cond.shape[1]} channels, model expects {model_config.cond_channels}")
    model = Denoiser(model_config, init_denoiser(model_config, rng_stream(config.seed, "dm.init")), mode.value)
    opt = nt.Adam(model.parameters(), lr=config.lr)

    def train_epoch(epoch):
        rng = rng_stream(config.seed, "dm.epoch", epoch)
        total = 0.0
        for idx in _batches(len(x), config.batch_size, rng):
            if batch_hook:
                batch_hook("dm", [windows[i] for i in idx])
            xb = x[idx, None, :]
            t = sample_step(rng, schedule.T, len(idx))
            s = forward_diffuse(xb, t, schedule, rng)
            loss = nt.mae(model(s.noisy, cond[idx], t), nt.Tensor(xb))
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss.data) * len(idx)
        return total / len(x)

    if validate is None and val_windows:
        xv, _ = stack(val_windows)
        cv = _conditioners(val_windows, mode, n_classes)

        def validate(epoch):
            return reconstruction_mae(model, xv, cv, schedule, rng_stream(config.seed, "dm.val"))

    last = {}
    if validate is None:
        def validate(epoch):
            return last["loss"]

        inner = train_epoch

        def train_epoch(epoch):
            last["loss"] = inner(epoch)
            return last["loss"]

    rec = _fit(model.params, config, train_epoch, validate, higher_is_better=False)
    model.extra = {"T": schedule.T, "beta_min": float(schedule.beta[0]), "beta_max": float(schedule.beta[-1]),
                   "cumulative": schedule.cumulative, "n_classes": n_classes}
    log.info("diffusion: best epoch %d, stop epoch %d, %.1fs", rec.best_epoch, rec.stop_epoch, rec.wall_time)
    return model, rec


# ---------------------------------------------------------------------------
# step 2: classifier
# ---------------------------------------------------------------------------


def evaluate_f1(params, clf_config: ClassifierConfig, windows: Sequence[Window]) -> float:
    x, y = stack(windows)
    return macro_f1(confusion_matrix(y, predict(params, clf_config, x), clf_config.n_classes))


def _labeled(windows: Sequence[Window], clf_config: ClassifierConfig):
    if not windows:
        raise DataError("empty labeled training set")
    _guard(windows)
    x, y = stack(windows)
    if np.any(y < 0):
        raise DataError("classifier training needs labeled windows")
    if np.any(y >= clf_config.n_classes):
        raise DataError(f"labels {sorted(set(y[y >= clf_config.n_classes].tolist()))} exceed n_classes={clf_config.n_classes}")
    if x.shape[1] != clf_config.window:
        raise DataError(f"windows of length {x.shape[1]} do not match classifier window {clf_config.window}")
    return x, y


def _classifier_stage(params, clf_config, config, windows, val_windows, tag, make_inputs, batch_hook, validate):
    x, y = _labeled(windows, clf_config)
    opt = nt.Adam(list(params.values()), lr=config.lr)
    last = {}

    def train_epoch(epoch):
        rng = rng_stream(config.seed, tag, epoch)
        total = 0.0
        for idx in _batches(len(x), config.batch_size, rng):
            if batch_hook:
                batch_hook(tag, [windows[i] for i in idx])
            loss = nt.softmax_xent(classifier_forward(params, clf_config, make_inputs(x, idx, rng)), y[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss.data) * len(idx)
        last["loss"] = total / len(x)
        return last["loss"]

    if validate is None:
        if val_windows:
            def validate(epoch):
                return evaluate_f1(params, clf_config, val_windows)
        else:
            def validate(epoch):
                return -last["loss"]

    return _fit(params, config, train_epoch, validate, higher_is_better=True)


def default_classifier_config(windows: Sequence[Window], n_classes: int | None = None) -> ClassifierConfig:
    x, y = stack(windows)
    return ClassifierConfig(window=x.shape[1], n_classes=n_classes or int(y.max()) + 1)


def pretrain_classifier(
    denoiser: Denoiser,
    windows: Sequence[Window],
    config: TrainConfig,
    *,
    clf_config: ClassifierConfig | None = None,
    schedule: NoiseSchedule | None = None,
    val_windows: Sequence[Window] | None = None,
    batch_hook: BatchHook | None = None,
    validate: Callable[[int], float] | None = None,
) -> tuple[dict[str, nt.Tensor], RunRecord]:
    """Train a fresh classifier on denoiser samples conditioned on real labeled windows.

    The denoiser runs without gradient recording, so only classifier weights move.
    """
    clf_config = clf_config or default_classifier_config(windows)
    schedule = schedule or linear_beta_schedule()
    params = init_classifier(clf_config, rng_stream(config.seed, "clf.init"))
    _labeled(windows, clf_config)
    x, y = stack(windows)
    cond = build_conditioner(x, denoiser.mode, clf_config.n_classes, labels=y)

    def make_inputs(x, idx, rng):
        return generate(denoiser, cond[idx], rng, schedule, config.gen_mode)

    rec = _classifier_stage(params, clf_config, config, windows, val_windows, "clf.pretrain", make_inputs, batch_hook, validate)
    return params, rec


def finetune_classifier(
    params: dict[str, nt.Tensor],
    windows: Sequence[Window],
    config: TrainConfig,
    *,
    clf_config: ClassifierConfig | None = None,
    val_windows: Sequence[Window] | None = None,
    batch_hook: BatchHook | None = None,
    validate: Callable[[int], float] | None = None,
) -> tuple[dict[str, nt.Tensor], RunRecord]:
    """Cross-entropy on real labeled windows, starting from a copy of ``params``."""
    clf_config = clf_config or default_classifier_config(windows)
    params = {k: nt.Tensor(v.data.copy(), requires_grad=True) for k, v in params.items()}

    def make_inputs(x, idx, rng):
        return x[idx, None, :]

    rec = _classifier_stage(params, clf_config, config, windows, val_windows, "clf.finetune", make_inputs, batch_hook, validate)
    return params, rec


def train_baseline(
    windows: Sequence[Window],
    config: TrainConfig,
    *,
    clf_config: ClassifierConfig | None = None,
    val_windows: Sequence[Window] | None = None,
    batch_hook: BatchHook | None = None,
) -> tuple[dict[str, nt.Tensor], RunRecord]:
    """Real-data-only classifier from the same initialisation a pretrain stage would use."""
    clf_config = clf_config or default_classifier_config(windows)
    params = init_classifier(clf_config, rng_stream(config.seed, "clf.init"))
    return finetune_classifier(params, windows, config, clf_config=clf_config, val_windows=val_windows,
                               batch_hook=batch_hook)
