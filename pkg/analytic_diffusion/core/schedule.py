"""
Discrete noise schedule and the x0 / epsilon parametrization maps.

Timesteps are 1-based: t in {1..T}; t = 0 means a clean image and is never
passed to a denoiser. Arrays are indexed with t - 1.
"""
import logging
from dataclasses import dataclass

import numpy as np

from analytic_diffusion.core.numerics import freeze
from analytic_diffusion.errors import ConfigError, NumericalError

logger = logging.getLogger(__name__)

PARAM_GUARD = 1e-12


@dataclass(frozen=True)
class NoiseSchedule:
    """beta_t, cumulative alpha-bar_t and sigma_t = sqrt(1 - alpha-bar_t)."""

    betas: np.ndarray
    alpha_bars: np.ndarray
    sigmas: np.ndarray

    @classmethod
    def from_betas(cls, betas) -> "NoiseSchedule":
        betas = np.asarray(betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size < 1:
            raise ConfigError("betas must be a non-empty vector")
        if np.any(betas <= 0) or np.any(betas >= 1):
            raise ConfigError("every beta must lie in (0, 1)")
        alpha_bars = np.cumprod(1.0 - betas)
        return cls(
            betas=freeze(betas),
            alpha_bars=freeze(alpha_bars),
            sigmas=freeze(np.sqrt(1.0 - alpha_bars)),
        )

    @classmethod
    def from_alpha_bars(cls, alpha_bars) -> "NoiseSchedule":
        """Build a schedule hitting prescribed alpha-bar values (strictly decreasing)."""
        alpha_bars = np.asarray(alpha_bars, dtype=np.float64)
        previous = np.concatenate([[1.0], alpha_bars[:-1]])
        return cls.from_betas(1.0 - alpha_bars / previous)

    @property
    def T(self) -> int:
        return int(self.betas.size)

    def check(self, t: int) -> int:
        if isinstance(t, (bool, np.bool_)) or int(t) != t:
            raise ConfigError(f"timestep must be an integer, got {t!r}")
        t = int(t)
        if not 1 <= t <= self.T:
            raise ConfigError(f"timestep {t} outside [1, {self.T}]")
        return t

    def alpha_bar(self, t: int) -> float:
        return float(self.alpha_bars[self.check(t) - 1])

    def sigma(self, t: int) -> float:
        return float(self.sigmas[self.check(t) - 1])

    def discretize(self, t_continuous: float) -> int:
        """Map continuous time in [0, 1] onto the grid as round(t * T)."""
        if not 0.0 <= t_continuous <= 1.0:
            raise ConfigError(f"continuous time must be in [0, 1], got {t_continuous}")
        return int(min(self.T, max(1, round(t_continuous * self.T))))

    def fingerprint(self) -> str:
        return (
            f"T={self.T},beta_start={self.betas[0]!r},beta_end={self.betas[-1]!r}"
        )


def linear_schedule(T: int, beta_start: float, beta_end: float) -> NoiseSchedule:
    """Linearly spaced betas, endpoints included."""
    if int(T) != T or T < 1:
        raise ConfigError(f"schedule.T must be a positive integer, got {T}")
    if not 0 < beta_start <= beta_end < 1:
        raise ConfigError(
            f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
        )
    betas = np.linspace(beta_start, beta_end, int(T), dtype=np.float64)
    sched = NoiseSchedule.from_betas(betas)
    logger.debug(f"Linear schedule {sched.fingerprint()}, alpha_bar_T={sched.alpha_bars[-1]:.6e}")
    return sched


def forward_noise(x0, eps, t: int, sched: NoiseSchedule) -> np.ndarray:
    """x_t = sqrt(alpha_bar_t) x0 + sigma_t eps."""
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise ConfigError(f"shape mismatch {x0.shape} vs {eps.shape}")
    return np.sqrt(sched.alpha_bar(t)) * x0 + sched.sigma(t) * eps


def eps_from_x0(x, x0_hat, t: int, sched: NoiseSchedule) -> np.ndarray:
    sigma = sched.sigma(t)
    if sigma < PARAM_GUARD:
        raise NumericalError("ill-defined parametrization: sigma_t is zero")
    x = np.asarray(x, dtype=np.float64)
    return (x - np.sqrt(sched.alpha_bar(t)) * np.asarray(x0_hat, dtype=np.float64)) / sigma


def x0_from_eps(x, eps_hat, t: int, sched: NoiseSchedule) -> np.ndarray:
    root = np.sqrt(sched.alpha_bar(t))
    if root < PARAM_GUARD:
        raise NumericalError("ill-defined parametrization: alpha_bar_t is zero")
    x = np.asarray(x, dtype=np.float64)
    return (x - sched.sigma(t) * np.asarray(eps_hat, dtype=np.float64)) / root


def perturbation_sensitivity_ratio(sched: NoiseSchedule, t: int, lambda_w: float) -> float:
    """Wiener factor along an injected component of std ``lambda_w``.

    s_w(t) = a lambda_W^2 / (a lambda_W^2 + 1 - a) with a = alpha_bar_t.
    """
    a = sched.alpha_bar(t)
    signal = a * lambda_w**2
    return signal / (signal + 1.0 - a)
