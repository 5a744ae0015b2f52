"""Flat ``section.key=value`` configuration with a stable fingerprint.

Lines starting with ``#`` and blank lines are ignored. Unknown keys are
rejected. List values are comma separated.
"""

from __future__ import annotations

import hashlib
from pathlib import Path
from typing import Any

from .classifier import ClassifierConfig
from .denoiser import DenoiserConfig
from .diffusion import NoiseSchedule, linear_beta_schedule
from .signal_data import SyntheticCorpusSpec
from .statfeat import ConditionerMode, conditioner_channels
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


def _ints(v):
    return [int(s) for s in v.split(",") if s.strip()]


def _floats(v):
    return [float(s) for s in v.split(",") if s.strip()]


def _strs(v):
    return [s.strip() for s in v.split(",") if s.strip()]


def _bool(v):
    low = v.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


# key -> (parser, default text)
SCHEMA: dict[str, tuple[Any, str]] = {
    "data.window": (int, "200"),
    "data.stride": (int, "0"),
    "split.train": (_strs, ""),
    "split.val": (_strs, ""),
    "split.test": (_strs, ""),
    "split.labeled_fraction": (float, "1.0"),
    "train.batch": (int, "128"),
    "train.lr": (float, "0.0002"),
    "train.max_epochs": (int, "200"),
    "train.patience": (int, "20"),
    "train.seed": (int, "0"),
    "dm.max_epochs": (int, "-1"),
    "pretrain.max_epochs": (int, "-1"),
    "finetune.max_epochs": (int, "-1"),
    "cond.mode": (str, "stat-features"),
    "gen.mode": (str, "single-shot"),
    "diffusion.T": (int, "50"),
    "diffusion.beta_min": (float, "0.0001"),
    "diffusion.beta_max": (float, "0.05"),
    "diffusion.cumulative": (_bool, "false"),
    "denoiser.channels": (_ints, "32,64,128"),
    "denoiser.step_dim": (int, "64"),
    "denoiser.kernel": (int, "9"),
    "clf.channels": (_ints, "16,32,64"),
    "clf.kernel": (int, "5"),
    "clf.fc": (_ints, "256,128,64,32,16"),
    "clf.n_classes": (int, "0"),
    "experiment.seeds": (int, "10"),
    "experiment.folds": (int, "1"),
    "experiment.proportions": (_floats, "0.2,0.3,0.4,0.5,1.0"),
    "experiment.variants": (_strs, "baseline,cc-dm,sf-dm-corresp,sf-dm-all"),
    "corpus.n_classes": (int, "3"),
    "corpus.n_subjects": (int, "4"),
    "corpus.windows_per_class_per_subject": (int, "10"),
    "corpus.window": (int, "200"),
    "corpus.sample_rate": (float, "50"),
    "corpus.freqs": (_floats, "0.5,1.0,1.5"),
    "corpus.amps": (_floats, "1.0,2.0,3.0"),
    "corpus.offsets": (_floats, "9.8,9.8,9.8"),
    "corpus.noise": (_floats, "0.5,0.5,0.5"),
    "corpus.seed": (int, "7"),
}


class Config:
    """Resolved configuration: every schema key with its raw text and parsed value."""

    def __init__(self, overrides: dict[str, str] | None = None):
        self.raw = {k: d for k, (_, d) in SCHEMA.items()}
        for k, v in (overrides or {}).items():
            self.set(k, v)

    def set(self, key: str, value) -> None:
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        text = value if isinstance(value, str) else _to_text(value)
        try:
            SCHEMA[key][0](text)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}") from None
        self.raw[key] = text.strip()

    def __getitem__(self, key: str):
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        return SCHEMA[key][0](self.raw[key])

    def copy(self) -> "Config":
        c = Config()
        c.raw = dict(self.raw)
        return c

    def with_(self, **kv) -> "Config":
        """Copy with overrides; keyword ``a__b`` stands for key ``a.b``."""
        c = self.copy()
        for k, v in kv.items():
            c.set(k.replace("__", "."), v)
        return c

    def to_text(self) -> str:
        return "".join(f"{k}={self.raw[k]}\n" for k in sorted(self.raw))

    def fingerprint(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()[:16]

    def diff(self, other: "Config") -> list[str]:
        return sorted(k for k in self.raw if self.raw[k] != other.raw[k])

    # -- typed views ------------------------------------------------------

    def stage_epochs(self, stage: str) -> int:
        v = self[f"{stage}.max_epochs"]
        return self["train.max_epochs"] if v < 0 else v

    def train_config(self, stage: str | None = None, labeled_fraction: float | None = None) -> TrainConfig:
        try:
            return TrainConfig(
                batch_size=self["train.batch"],
                lr=self["train.lr"],
                max_epochs=self.stage_epochs(stage) if stage else self["train.max_epochs"],
                patience=self["train.patience"],
                seed=self["train.seed"],
                labeled_fraction=self["split.labeled_fraction"] if labeled_fraction is None else labeled_fraction,
                cond_mode=self["cond.mode"],
                gen_mode=self["gen.mode"],
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def schedule(self) -> NoiseSchedule:
        try:
            return linear_beta_schedule(self["diffusion.T"], self["diffusion.beta_min"],
                                        self["diffusion.beta_max"], self["diffusion.cumulative"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def denoiser_config(self, n_classes: int | None = None, mode: str | None = None) -> DenoiserConfig:
        mode = mode or self["cond.mode"]
        try:
            return DenoiserConfig(
                window=self["data.window"],
                cond_channels=conditioner_channels(ConditionerMode(mode), n_classes),
                channels=tuple(self["denoiser.channels"]),
                step_dim=self["denoiser.step_dim"],
                kernel=self["denoiser.kernel"],
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def classifier_config(self, n_classes: int) -> ClassifierConfig:
        try:
            return ClassifierConfig(
                window=self["data.window"],
                n_classes=self["clf.n_classes"] or n_classes,
                channels=tuple(self["clf.channels"]),
                kernel=self["clf.kernel"],
                fc=tuple(self["clf.fc"]),
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def corpus_spec(self) -> SyntheticCorpusSpec:
        try:
            return SyntheticCorpusSpec(
                n_classes=self["corpus.n_classes"],
                windows_per_class_per_subject=self["corpus.windows_per_class_per_subject"],
                n_subjects=self["corpus.n_subjects"],
                window=self["corpus.window"],
                sample_rate=self["corpus.sample_rate"],
                freqs=self["corpus.freqs"],
                amps=self["corpus.amps"],
                offsets=self["corpus.offsets"],
                noise=self["corpus.noise"],
                seed=self["corpus.seed"],
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from None


def _to_text(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return ",".join(str(v) for v in value)
    return str(value)


def parse_config(text: str) -> Config:
    pairs = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        k, v = line.split("=", 1)
        pairs[k.strip()] = v.strip()
    return Config(pairs)


def load_config(path) -> Config:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)
