"""Encoder-decoder denoiser conditioned on statistical features and diffusion step."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import ndtensor as nt
from .ndtensor import Tensor


@dataclass(frozen=True)
class DenoiserConfig:
    window: int
    cond_channels: int = 4
    channels: tuple[int, int, int] = (32, 64, 128)
    step_dim: int = 64
    kernel: int = 9
    pool: int = 2

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if len(self.channels) != 3 or min(self.channels) < 1:
            raise ValueError("denoiser needs three positive encoder widths")
        if self.kernel % 2 == 0 or self.kernel < 1:
            raise ValueError("denoiser kernel must be odd")
        if self.pool != 2 or self.window < 2 or self.window % self.pool:
            raise ValueError(f"window {self.window} must be divisible by the pool size {self.pool}")
        if self.step_dim < 2 or self.step_dim % 2 or self.cond_channels < 1:
            raise ValueError("step_dim must be even and >= 2; cond_channels >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d


def param_shapes(config: DenoiserConfig) -> dict[str, tuple[int, ...]]:
    """Parameter names and shapes in declaration order."""
    k, d = config.kernel, config.step_dim
    c1, c2, c3 = config.channels
    shapes = {"step.dense.w": (d, d), "step.dense.b": (d,)}
    c_in = 1
    for i, c in enumerate(config.channels, start=1):
        shapes[f"block{i}.conv.w"] = (c, c_in, k)
        shapes[f"block{i}.conv.b"] = (c,)
        shapes[f"block{i}.step.w"] = (c, d, 1)
        shapes[f"block{i}.step.b"] = (c,)
        shapes[f"block{i}.cond.w"] = (c, config.cond_channels, k)
        shapes[f"block{i}.cond.b"] = (c,)
        c_in = 2 * c
    shapes["dec.deconv1.w"] = (2 * c3, c2, k)
    shapes["dec.deconv1.b"] = (c2,)
    shapes["dec.deconv2.w"] = (c2, c1, k)
    shapes["dec.deconv2.b"] = (c1,)
    shapes["out.w"] = (1, c1, 1)
    shapes["out.b"] = (1,)
    return shapes


def _fan_in(name: str, shape: tuple[int, ...]) -> int:
    # dense [out, in]; conv [out, in, k]; deconv [in, out, k]
    if len(shape) == 2:
        return shape[1]
    if ".deconv" in name:
        return shape[0] * shape[2]
    return shape[1] * shape[2]


def init_params(shapes: dict[str, tuple[int, ...]], rng: np.random.Generator) -> dict[str, Tensor]:
    params = {}
    for name, shape in shapes.items():
        if name.endswith(".b"):
            data = np.zeros(shape, dtype=np.float32)
        else:
            bound = 1.0 / np.sqrt(_fan_in(name, shape))
            data = rng.uniform(-bound, bound, size=shape).astype(np.float32)
        params[name] = Tensor(data, requires_grad=True)
    return params


def init_denoiser(config: DenoiserConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    return init_params(param_shapes(config), rng)


def step_embedding(t, dim: int) -> np.ndarray:
    """Sinusoidal embedding ``[B, dim]`` of integer diffusion steps."""
    t = np.asarray(t, dtype=np.float64).reshape(-1, 1)
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    ang = t * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1).astype(np.float32)


def denoiser_forward(params: dict[str, Tensor], config: DenoiserConfig, noisy, cond, t) -> Tensor:
    noisy = nt.as_tensor(noisy)
    cond = nt.as_tensor(cond)
    t = np.atleast_1d(np.asarray(t))
    b = noisy.shape[0]
    w = config.window
    if noisy.shape != (b, 1, w):
        raise nt.ShapeError(f"denoiser input: noisy must be [B, 1, {w}], got {noisy.shape}")
    if cond.shape != (b, config.cond_channels, w):
        raise nt.ShapeError(f"denoiser conditioner: expected [{b}, {config.cond_channels}, {w}], got {cond.shape}")
    if t.shape != (b,):
        raise nt.ShapeError(f"denoiser step: expected {b} step ids, got shape {t.shape}")
    p = params
    pad = config.kernel // 2

    emb = Tensor(step_embedding(t, config.step_dim), dtype=noisy.dtype)
    emb = nt.relu(nt.dense(emb, p["step.dense.w"], p["step.dense.b"]))
    emb = nt.reshape(emb, (b, config.step_dim, 1))

    h, c = noisy, cond
    for i in (1, 2, 3):
        a = nt.conv1d(h, p[f"block{i}.conv.w"], p[f"block{i}.conv.b"], 1, pad)
        a = nt.add(a, nt.conv1d(emb, p[f"block{i}.step.w"], p[f"block{i}.step.b"]))
        f = nt.conv1d(c, p[f"block{i}.cond.w"], p[f"block{i}.cond.b"], 1, pad)
        h = nt.relu(nt.concat([a, f], axis=1))
        if i == 1:
            h = nt.maxpool1d(h, config.pool, config.pool)
            with nt.no_grad():
                c = nt.maxpool1d(c, config.pool, config.pool)

    h = nt.upsample_nearest(h, config.pool)
    h = nt.relu(nt.deconv1d(h, p["dec.deconv1.w"], p["dec.deconv1.b"], 1, pad))
    h = nt.relu(nt.deconv1d(h, p["dec.deconv2.w"], p["dec.deconv2.b"], 1, pad))
    return nt.conv1d(h, p["out.w"], p["out.b"])


@dataclass
class Denoiser:
    """Config, parameters and conditioner mode of one trained denoiser."""

    config: DenoiserConfig
    params: dict[str, Tensor]
    mode: str = "stat-features"
    extra: dict = field(default_factory=dict)

    def __call__(self, noisy, cond, t) -> Tensor:
        return denoiser_forward(self.params, self.config, noisy, cond, t)

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())
