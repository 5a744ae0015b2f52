"""Variance schedule, forward noising and sample generation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ndtensor as nt


class ModeMismatchError(ValueError):
    """Conditioner shape does not fit the denoiser it is fed to."""


@dataclass(frozen=True)
class NoiseSchedule:
    """``beta[t - 1]`` holds the noise level of step ``t`` for ``t`` in ``1..T``."""

    T: int
    beta: np.ndarray
    cumulative: bool = False

    def at(self, t) -> np.ndarray:
        t = np.asarray(t)
        if np.any(t < 1) or np.any(t > self.T):
            raise ValueError(f"diffusion step out of range [1, {self.T}]")
        return self.beta[t - 1]

    def coefficients(self, t) -> tuple[np.ndarray, np.ndarray]:
        """(signal, noise) multipliers applied to ``x`` and ``eps`` at step ``t``."""
        if self.cumulative:
            abar = np.cumprod(1.0 - self.beta)[np.asarray(t) - 1]
            self.at(t)
            return np.sqrt(abar), np.sqrt(1.0 - abar)
        b = self.at(t)
        return np.sqrt(b), np.sqrt(1.0 - b)


def linear_beta_schedule(T: int = 50, beta_min: float = 1e-4, beta_max: float = 0.05,
                         cumulative: bool = False) -> NoiseSchedule:
    if T < 2:
        raise ValueError("schedule needs T >= 2")
    if not 0.0 < beta_min < beta_max < 1.0:
        raise ValueError(f"need 0 < beta_min < beta_max < 1, got {beta_min}, {beta_max}")
    # linspace pins both endpoints exactly
    return NoiseSchedule(T, np.linspace(beta_min, beta_max, T), cumulative)


def sample_step(rng: np.random.Generator, T: int, size=None):
    """Uniform step in ``[1, T]``."""
    return rng.integers(1, T + 1, size=size)


@dataclass
class DiffusionSample:
    noisy: np.ndarray
    noise: np.ndarray
    step: np.ndarray


def forward_diffuse(x, t, schedule: NoiseSchedule, rng: np.random.Generator | None = None,
                    noise: np.ndarray | None = None) -> DiffusionSample:
    """``noisy = x * signal_coef[t] + eps * noise_coef[t]`` per batch element."""
    x = np.asarray(x.data if isinstance(x, nt.Tensor) else x)
    t = np.broadcast_to(np.asarray(t), (x.shape[0],))
    if noise is None:
        noise = rng.standard_normal(x.shape).astype(x.dtype)
    sig, nse = schedule.coefficients(t)
    expand = (slice(None),) + (None,) * (x.ndim - 1)
    noisy = x * sig[expand].astype(x.dtype) + noise * nse[expand].astype(x.dtype)
    return DiffusionSample(noisy.astype(x.dtype), noise, t.copy())


def _check_cond(denoiser, cond: np.ndarray) -> None:
    cfg = denoiser.config
    if cond.ndim != 3 or cond.shape[1:] != (cfg.cond_channels, cfg.window):
        raise ModeMismatchError(
            f"conditioner {cond.shape} does not fit denoiser ({denoiser.mode}, "
            f"{cfg.cond_channels} channels, window {cfg.window})"
        )


def generate_single_shot(denoiser, cond, rng: np.random.Generator, T: int) -> np.ndarray:
    """One denoiser call on pure noise at step ``T``; returns ``[B, 1, W]``."""
    cond = np.asarray(cond, dtype=np.float32)
    _check_cond(denoiser, cond)
    b = cond.shape[0]
    omega = rng.standard_normal((b, 1, denoiser.config.window)).astype(np.float32)
    with nt.no_grad():
        return denoiser(omega, cond, np.full(b, T)).data


def generate_iterative(denoiser, cond, rng: np.random.Generator, schedule: NoiseSchedule,
                       trace: list | None = None) -> np.ndarray:
    """Denoise from ``T`` down to 1, re-noising to step ``t - 1`` between calls."""
    cond = np.asarray(cond, dtype=np.float32)
    _check_cond(denoiser, cond)
    b = cond.shape[0]
    x = rng.standard_normal((b, 1, denoiser.config.window)).astype(np.float32)
    with nt.no_grad():
        for t in range(schedule.T, 0, -1):
            x = denoiser(x, cond, np.full(b, t)).data
            if trace is not None:
                trace.append(x.copy())
            if t > 1:
                x = forward_diffuse(x, t - 1, schedule, rng).noisy
    return x


def generate(denoiser, cond, rng: np.random.Generator, schedule: NoiseSchedule, mode: str = "single-shot"):
    if mode == "single-shot":
        return generate_single_shot(denoiser, cond, rng, schedule.T)
    if mode == "iterative":
        return generate_iterative(denoiser, cond, rng, schedule)
    raise ValueError(f"unknown generation mode {mode!r}")
