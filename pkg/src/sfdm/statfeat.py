"""Statistical conditioner channels (mean, std, z-score, skewness)."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

SIGMA_FLOOR = 1e-8


class ConditionerMode(str, enum.Enum):
    STAT_FEATURES = "stat-features"
    CLASS_ONEHOT = "class-onehot"


@dataclass(frozen=True)
class FeatureStack:
    mean: float
    std: float
    z: np.ndarray
    skew: float

    def as_array(self) -> np.ndarray:
        """``[4, W]`` in channel order mean, std, z-score, skewness."""
        w = self.z.size
        return np.stack([np.full(w, self.mean), np.full(w, self.std), self.z, np.full(w, self.skew)]).astype(np.float32)


def compute_features(values) -> FeatureStack:
    x = np.asarray(values, dtype=np.float64)
    if x.ndim != 1 or x.size < 2:
        raise ValueError(f"need a 1-d window of length >= 2, got shape {x.shape}")
    mu = x.mean()
    sigma = x.std()
    if sigma < SIGMA_FLOOR:
        return FeatureStack(float(mu), float(sigma), np.zeros_like(x), 0.0)
    z = (x - mu) / sigma
    return FeatureStack(float(mu), float(sigma), z, float(np.mean(z**3)))


def feature_channels(x: np.ndarray) -> np.ndarray:
    """Vectorised ``[B, W] -> [B, 4, W]`` version of :func:`compute_features`."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] < 2:
        raise ValueError(f"need windows of shape [B, W>=2], got {x.shape}")
    mu = x.mean(axis=1, keepdims=True)
    sigma = x.std(axis=1, keepdims=True)
    flat = sigma < SIGMA_FLOOR
    z = np.where(flat, 0.0, (x - mu) / np.where(flat, 1.0, sigma))
    skew = np.mean(z**3, axis=1, keepdims=True)
    ones = np.ones_like(x)
    return np.stack([mu * ones, sigma * ones, z, skew * ones], axis=1).astype(np.float32)


def onehot_channels(labels, n_classes: int, width: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"class-onehot conditioner needs labels in [0, {n_classes})")
    out = np.zeros((labels.size, n_classes, width), dtype=np.float32)
    out[np.arange(labels.size), labels, :] = 1.0
    return out


def conditioner_channels(mode: ConditionerMode | str, n_classes: int | None = None) -> int:
    mode = ConditionerMode(mode)
    if mode is ConditionerMode.STAT_FEATURES:
        return 4
    if not n_classes:
        raise ValueError("class-onehot conditioner needs n_classes")
    return n_classes


def build_conditioner(x: np.ndarray, mode: ConditionerMode | str, n_classes: int | None = None,
                      labels=None) -> np.ndarray:
    """Conditioner for a batch ``[B, W]`` (or a single window ``[W]``)."""
    mode = ConditionerMode(mode)
    x = np.asarray(x)
    single = x.ndim == 1
    batch = x[None] if single else x
    if mode is ConditionerMode.STAT_FEATURES:
        out = feature_channels(batch)
    else:
        if labels is None or (np.ndim(labels) > 0 and any(lab is None for lab in np.atleast_1d(labels))):
            raise ValueError("class-onehot conditioner needs a label for every window")
        out = onehot_channels(np.atleast_1d(labels), conditioner_channels(mode, n_classes), batch.shape[1])
    return out[0] if single else out
