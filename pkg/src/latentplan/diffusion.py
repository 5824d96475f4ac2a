"""Cosine noise schedule, forward noising and the deterministic DDIM sampler."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np

from .errors import ConfigError, ShapeError

MAX_BETA = 0.999

Denoiser = Callable[[np.ndarray, int, Any], np.ndarray]


@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    alpha_bar: np.ndarray  # (T + 1,), alpha_bar[0] == 1

    @property
    def betas(self) -> np.ndarray:
        return 1.0 - self.alpha_bar[1:] / self.alpha_bar[:-1]

    def _check(self, t: int) -> None:
        if not 1 <= t <= self.T:
            raise ConfigError(f"timestep {t} outside [1, {self.T}]")


def cosine_schedule(T: int = 500, s: float = 0.008) -> NoiseSchedule:
    """Improved-DDPM cosine schedule with per-step betas clipped at 0.999."""
    if T < 1:
        raise ConfigError(f"T must be >= 1, got {T}")
    if s <= 0:
        raise ConfigError(f"offset s must be positive, got {s}")
    steps = np.arange(T + 1, dtype=float)
    f = np.cos((steps / T + s) / (1 + s) * np.pi / 2) ** 2
    raw = f / f[0]
    betas = np.minimum(1.0 - raw[1:] / raw[:-1], MAX_BETA)
    alpha_bar = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
    return NoiseSchedule(T, alpha_bar)


def q_sample(z0: np.ndarray, t: int, eps: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """Noise ``z0`` to step ``t``. ``t`` may be an int or an array broadcast over the batch."""
    t_arr = np.asarray(t)
    if np.any(t_arr < 0) or np.any(t_arr > schedule.T):
        raise ConfigError(f"timestep outside [0, {schedule.T}]")
    z0, eps = np.asarray(z0, dtype=float), np.asarray(eps, dtype=float)
    if z0.shape != eps.shape:
        raise ShapeError(f"z0 {z0.shape} and eps {eps.shape} differ in shape")
    ab = schedule.alpha_bar[t_arr]
    if ab.ndim:
        ab = ab.reshape(ab.shape + (1,) * (z0.ndim - ab.ndim))
    return np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * eps


def predict_z0(z_t: np.ndarray, eps_hat: np.ndarray, t: int, schedule: NoiseSchedule) -> np.ndarray:
    schedule._check(t)
    ab = schedule.alpha_bar[t]
    return (z_t - math.sqrt(1.0 - ab) * eps_hat) / math.sqrt(ab)


def ddim_step(z_t: np.ndarray, eps_hat: np.ndarray, t: int, t_prev: int, schedule: NoiseSchedule) -> np.ndarray:
    """One deterministic (eta = 0) DDIM transition from ``t`` to ``t_prev``."""
    if not 0 <= t_prev < t <= schedule.T:
        raise ConfigError(f"DDIM step needs 0 <= t_prev < t <= T, got t={t}, t_prev={t_prev}")
    z0_hat = predict_z0(z_t, eps_hat, t, schedule)
    ab_prev = schedule.alpha_bar[t_prev]
    return math.sqrt(ab_prev) * z0_hat + math.sqrt(1.0 - ab_prev) * eps_hat


def timestep_subsequence(T: int, N: int) -> list[int]:
    """N strictly decreasing steps ``T - floor(i * T / N)`` for i = 0..N-1.

    The stride is T / N exactly when N divides T; otherwise strides differ by
    at most one, so the chain still spans the whole range rather than stopping
    at T - (N - 1) * floor(T / N) and jumping to 0 from there. The sampler
    appends the final transition to step 0 itself.
    """
    if not 1 <= N <= T:
        raise ConfigError(f"number of DDIM steps N={N} must lie in [1, T={T}]")
    return [T - (i * T) // N for i in range(N)]


def chain_noise(seed: int | Sequence[int], K: int, d: int) -> np.ndarray:
    """Starting latents for K chains; chain i draws from its own stream keyed by (seed, i)."""
    key = [int(seed)] if np.isscalar(seed) else [int(v) for v in seed]
    return np.stack([np.random.default_rng([*key, i]).standard_normal(d) for i in range(K)])


def clipped_noise(z_t: np.ndarray, eps_hat: np.ndarray, t: int, schedule: NoiseSchedule, bound: float) -> np.ndarray:
    """Noise estimate consistent with the clean-latent estimate clipped to ``[-bound, bound]``.

    At t = T the inversion divides by sqrt(alpha_bar_T) ~ 1e-4, so a small
    noise error becomes a huge clean-latent error; clipping the estimate to
    the range the latents are normalised to and re-deriving the noise keeps
    the chain on the data scale.
    """
    ab = schedule.alpha_bar[t]
    z0 = np.clip(predict_z0(z_t, eps_hat, t, schedule), -bound, bound)
    return (z_t - math.sqrt(ab) * z0) / math.sqrt(1.0 - ab)


def ddim_loop(
    z_T: np.ndarray, denoiser: Denoiser, context: Any, N: int, schedule: NoiseSchedule, clip: float | None = None
) -> np.ndarray:
    """Run the DDIM chain from explicit starting latents (any leading batch shape).

    ``clip`` bounds every intermediate clean-latent estimate (see
    :func:`clipped_noise`); ``None`` runs the plain update.
    """
    z = np.asarray(z_T, dtype=float)
    steps = timestep_subsequence(schedule.T, N)
    for t, t_prev in zip(steps, steps[1:] + [0]):
        eps_hat = np.asarray(denoiser(z, t, context), dtype=float)
        if eps_hat.shape != z.shape:
            raise ShapeError(f"denoiser returned shape {eps_hat.shape}, expected {z.shape}")
        if clip is not None:
            eps_hat = clipped_noise(z, eps_hat, t, schedule, clip)
        z = ddim_step(z, eps_hat, t, t_prev, schedule)
    return z


def ddim_sample(
    denoiser: Denoiser,
    context: Any,
    N: int,
    K: int,
    seed: int | Sequence[int],
    schedule: NoiseSchedule,
    d: int = 16,
    clip: float | None = None,
) -> np.ndarray:
    """K clean latents ``(K, d)`` from seeded standard-normal starts."""
    if K < 1:
        raise ConfigError("K must be >= 1")
    return ddim_loop(chain_noise(seed, K, d), denoiser, context, N, schedule, clip)
