"""HAR CNN: three strided convs, one max-pool, five hidden dense layers."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import ndtensor as nt
from .denoiser import init_params
from .ndtensor import Tensor


@dataclass(frozen=True)
class ClassifierConfig:
    window: int
    n_classes: int
    channels: tuple[int, int, int] = (16, 32, 64)
    kernel: int = 5
    fc: tuple[int, ...] = (256, 128, 64, 32, 16)
    stride: int = 2
    pool: int = 2

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        object.__setattr__(self, "fc", tuple(int(c) for c in self.fc))
        if len(self.channels) != 3 or len(self.fc) != 5:
            raise ValueError("classifier needs three conv widths and five dense widths")
        if self.n_classes < 2:
            raise ValueError("classifier needs at least two classes")
        if self.flatten_size() <= 0:
            raise ValueError(f"window {self.window} is too short for the stride/pool chain")

    def conv_lengths(self) -> list[int]:
        lengths = [self.window]
        for _ in self.channels:
            prev = lengths[-1]
            lengths.append((prev - self.kernel) // self.stride + 1 if prev >= self.kernel else 0)
        return lengths[1:]

    def flatten_size(self) -> int:
        last = self.conv_lengths()[-1]
        pooled = last // self.pool if last >= self.pool else 0
        return self.channels[-1] * pooled

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        d["fc"] = list(self.fc)
        return d


def param_shapes(config: ClassifierConfig) -> dict[str, tuple[int, ...]]:
    shapes = {}
    c_in = 1
    for i, c in enumerate(config.channels, start=1):
        shapes[f"conv{i}.w"] = (c, c_in, config.kernel)
        shapes[f"conv{i}.b"] = (c,)
        c_in = c
    n_in = config.flatten_size()
    for i, n in enumerate(config.fc, start=1):
        shapes[f"fc{i}.w"] = (n, n_in)
        shapes[f"fc{i}.b"] = (n,)
        n_in = n
    shapes["out.w"] = (config.n_classes, n_in)
    shapes["out.b"] = (config.n_classes,)
    return shapes


def init_classifier(config: ClassifierConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    return init_params(param_shapes(config), rng)


def classifier_forward(params: dict[str, Tensor], config: ClassifierConfig, x) -> Tensor:
    """Logits ``[B, n_classes]``; softmax lives in the loss."""
    x = nt.as_tensor(x)
    if x.data.ndim == 2:
        x = nt.reshape(x, (x.shape[0], 1, x.shape[1]))
    if x.shape[1:] != (1, config.window):
        raise nt.ShapeError(f"classifier input must be [B, 1, {config.window}], got {x.shape}")
    h = x
    for i in (1, 2, 3):
        h = nt.relu(nt.conv1d(h, params[f"conv{i}.w"], params[f"conv{i}.b"], config.stride))
    h = nt.maxpool1d(h, config.pool, config.pool)
    h = nt.reshape(h, (h.shape[0], -1))
    for i in range(1, 6):
        h = nt.relu(nt.dense(h, params[f"fc{i}.w"], params[f"fc{i}.b"]))
    return nt.dense(h, params["out.w"], params["out.b"])


def predict_logits(logits) -> np.ndarray:
    """Argmax per row; ties go to the smallest class id."""
    return np.asarray(logits).argmax(axis=1)


def predict(params: dict[str, Tensor], config: ClassifierConfig, x, batch: int = 512) -> np.ndarray:
    x = np.asarray(x, dtype=np.float32)
    out = []
    with nt.no_grad():
        for lo in range(0, len(x), batch):
            out.append(predict_logits(classifier_forward(params, config, x[lo : lo + batch]).data))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)
