"""Noise schedules, forward noising and deterministic DDIM sampling/inversion.

Timesteps run over ``1..T`` with ``alpha_bar(0) == 1``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .tensor import ConfigurationError, ContractError, DimensionError, Tensor, mse_loss

EpsModel = Callable[[np.ndarray, int], np.ndarray]


@dataclass(frozen=True)
class NoiseSchedule:
    betas: np.ndarray
    alphas: np.ndarray = field(repr=False)
    alpha_bars: np.ndarray = field(repr=False)

    @property
    def T(self) -> int:
        return len(self.betas)

    def alpha_bar(self, t: int) -> float:
        """``alpha_bar`` at timestep ``t`` (``t=0`` gives 1)."""
        t = int(t)
        if not 0 <= t <= self.T:
            raise ConfigurationError(f"timestep {t} outside [0, {self.T}]")
        return 1.0 if t == 0 else float(self.alpha_bars[t - 1])

    def table(self) -> str:
        lines = ["t,beta,alpha_bar"]
        for t in range(1, self.T + 1):
            lines.append(f"{t},{float(self.betas[t - 1])!r},{float(self.alpha_bars[t - 1])!r}")
        return "\n".join(lines) + "\n"


def make_linear_schedule(T: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    if T < 1:
        raise ConfigurationError(f"T must be >= 1, got {T}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ConfigurationError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    if alpha_bars[-1] <= 0.0:
        raise ConfigurationError("alpha_bar underflows to zero; lower beta_end or T")
    return NoiseSchedule(betas, alphas, alpha_bars)


@dataclass(frozen=True)
class DdimStepPlan:
    """Evenly spaced timesteps; ``timesteps`` descend, ``inversion`` ascends."""

    num_inference_steps: int
    timesteps: tuple

    @property
    def inversion(self) -> tuple:
        return tuple(reversed(self.timesteps))

    def sampling_pairs(self) -> list[tuple[int, int]]:
        ts = list(self.timesteps) + [0]
        return list(zip(ts[:-1], ts[1:]))

    def inversion_pairs(self) -> list[tuple[int, int]]:
        return [(t_prev, t) for t, t_prev in reversed(self.sampling_pairs())]


def make_plan(schedule: NoiseSchedule, num_inference_steps: int = 50) -> DdimStepPlan:
    n = int(num_inference_steps)
    if not 1 <= n <= schedule.T:
        raise ConfigurationError(f"inference steps must be in [1, {schedule.T}], got {n}")
    stride = schedule.T // n
    ts = tuple(int(schedule.T - i * stride) for i in range(n))
    return DdimStepPlan(n, ts)


def _arr(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def add_noise(z0, eps, t: int, s: NoiseSchedule):
    """Closed-form ``q(z_t | z_0)``: ``sqrt(ab) z0 + sqrt(1 - ab) eps``."""
    if tuple(np.shape(_arr(z0))) != tuple(np.shape(_arr(eps))):
        raise DimensionError(f"z0 {np.shape(_arr(z0))} and eps {np.shape(_arr(eps))} differ")
    ab = s.alpha_bar(t)
    if t == 0:
        return z0
    return z0 * math.sqrt(ab) + eps * math.sqrt(1.0 - ab)


def predict_x0(z_t, eps_pred, t: int, s: NoiseSchedule):
    ab = s.alpha_bar(t)
    return (z_t - eps_pred * math.sqrt(1.0 - ab)) * (1.0 / math.sqrt(ab))


def ddim_sample_step(z_t, eps_pred, t: int, t_prev: int, s: NoiseSchedule):
    """One deterministic (eta=0) DDIM step from ``t`` down to ``t_prev``."""
    if not t > t_prev >= 0:
        raise ContractError(f"sampling needs t > t_prev >= 0, got t={t}, t_prev={t_prev}")
    x0 = predict_x0(z_t, eps_pred, t, s)
    ab_prev = s.alpha_bar(t_prev)
    return x0 * math.sqrt(ab_prev) + eps_pred * math.sqrt(1.0 - ab_prev)


def ddim_invert_step(z_prev, eps_pred, t_prev: int, t: int, s: NoiseSchedule):
    """Exact algebraic inverse of :func:`ddim_sample_step` for a fixed ``eps_pred``."""
    if not t > t_prev >= 0:
        raise ContractError(f"inversion needs t > t_prev >= 0, got t_prev={t_prev}, t={t}")
    x0 = predict_x0(z_prev, eps_pred, t_prev, s)
    ab = s.alpha_bar(t)
    return x0 * math.sqrt(ab) + eps_pred * math.sqrt(1.0 - ab)


def _checked(model: EpsModel, z: np.ndarray, t: int) -> np.ndarray:
    eps = model(z, t)
    eps = _arr(eps)
    if eps.shape != z.shape:
        raise DimensionError(f"model returned {eps.shape} for latent {z.shape}")
    return eps


def invert_loop(z0, model: EpsModel, plan: DdimStepPlan, s: NoiseSchedule,
                callback: Callable | None = None) -> np.ndarray:
    """Map a clean latent to the terminal noise latent along ascending timesteps.

    At each step the noise is predicted from the current (less noisy) latent
    at the destination timestep.
    """
    z = np.array(_arr(z0), copy=True)
    for t_prev, t in plan.inversion_pairs():
        eps = _checked(model, z, t)
        z = ddim_invert_step(z, eps, t_prev, t, s)
        if callback is not None:
            callback(t, z)
    return z


def sample_loop(z_star, model: EpsModel, plan: DdimStepPlan, s: NoiseSchedule,
                callback: Callable | None = None) -> np.ndarray:
    """Deterministic DDIM sampling from ``z_star`` down to ``t=0``."""
    z = np.array(_arr(z_star), copy=True)
    for t, t_prev in plan.sampling_pairs():
        eps = _checked(model, z, t)
        z = ddim_sample_step(z, eps, t, t_prev, s)
        if callback is not None:
            callback(t_prev, z)
    return z


def denoise_loss(model: Callable, z0_latent, conditioning, control, rng: np.random.Generator,
                 s: NoiseSchedule, t: int | None = None, eps=None) -> Tensor:
    """Noise-prediction MSE at a uniformly drawn timestep.

    ``model(z_t, t, conditioning, control)`` returns a Tensor.  ``t`` and
    ``eps`` may be pinned explicitly; otherwise they are drawn from ``rng``
    (timestep first, then noise).
    """
    z0 = _arr(z0_latent)
    if t is None:
        t = int(rng.integers(1, s.T + 1))
    if eps is None:
        eps = rng.standard_normal(z0.shape, dtype=np.float32).astype(z0.dtype, copy=False)
    eps = _arr(eps)
    z_t = add_noise(z0, eps, t, s)
    pred = model(Tensor(z_t), t, conditioning, control)
    if pred.shape != z0.shape:
        raise DimensionError(f"model output {pred.shape} does not match latent {z0.shape}")
    return mse_loss(pred, eps)
