"""
Deterministic DDIM sampling (eta = 0) with per-step trajectory capture.
"""
import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from analytic_diffusion.core.dataset import ImageDataset
from analytic_diffusion.core.denoisers import Denoiser
from analytic_diffusion.core.metrics import nearest_neighbor_distance
from analytic_diffusion.core.numerics import freeze, require_finite
from analytic_diffusion.core.schedule import NoiseSchedule, forward_noise
from analytic_diffusion.errors import ConfigError
from analytic_diffusion.utils.parallel_utils import ordered_map

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Trajectory:
    """Grid timesteps with the x_t visited and the x0 prediction made at each."""

    timesteps: Tuple[int, ...]
    xs: np.ndarray
    x0_preds: np.ndarray
    seed: int
    index: int = 0

    def __post_init__(self):
        steps = len(self.timesteps)
        if self.xs.shape[0] != steps or self.x0_preds.shape[0] != steps:
            raise ConfigError("trajectory arrays do not match its timestep grid")
        object.__setattr__(self, "xs", freeze(self.xs))
        object.__setattr__(self, "x0_preds", freeze(self.x0_preds))

    @property
    def steps(self) -> int:
        return len(self.timesteps)

    @property
    def initial_noise(self) -> np.ndarray:
        return self.xs[0]


def timestep_grid(T: int, steps: int) -> List[int]:
    """Evenly spaced descending timesteps t_k = T - floor(k T / steps), starting at T."""
    if int(steps) != steps or steps < 1:
        raise ConfigError(f"sampler.steps must be a positive integer, got {steps}")
    if steps > T:
        raise ConfigError(f"sampler.steps = {steps} exceeds T = {T}")
    return [T - (k * T) // steps for k in range(steps)]


def initial_noise(seed: int, count: int, dim: int) -> np.ndarray:
    """x_T draws for ``count`` samples from a Philox (counter-based, 64-bit) generator."""
    if count < 1:
        raise ConfigError(f"sample count must be >= 1, got {count}")
    rng = np.random.Generator(np.random.Philox(int(seed)))
    return rng.standard_normal((count, dim))


def ddim_sample(denoiser: Denoiser, sched: NoiseSchedule, steps: int, seed: int,
                noise: Optional[np.ndarray] = None, index: int = 0) -> Tuple[np.ndarray, Trajectory]:
    """Run one chain; the output is the x0 prediction at the last grid point.

    ``noise`` overrides the seeded draw (sample ``index`` of ``initial_noise``).
    """
    if denoiser.schedule.T != sched.T:
        raise ConfigError(
            f"denoiser schedule has T={denoiser.schedule.T}, sampler schedule has T={sched.T}"
        )
    grid = timestep_grid(sched.T, steps)
    if noise is None:
        noise = initial_noise(seed, index + 1, denoiser.dim)[index]
    x = np.asarray(noise, dtype=np.float64).reshape(denoiser.dim)

    xs, preds = [], []
    for k, t in enumerate(grid):
        x0_hat = denoiser.predict_x0(x, t)
        xs.append(x)
        preds.append(x0_hat)
        if k + 1 == len(grid):
            break
        eps_hat = (x - np.sqrt(sched.alpha_bar(t)) * x0_hat) / sched.sigma(t)
        t_next = grid[k + 1]
        x = np.sqrt(sched.alpha_bar(t_next)) * x0_hat + sched.sigma(t_next) * eps_hat
        require_finite(x, f"DDIM step t={t} -> {t_next}")
        logger.debug(f"sample {index}: t={t} -> {t_next}")

    trajectory = Trajectory(
        timesteps=tuple(grid),
        xs=np.stack(xs),
        x0_preds=np.stack(preds),
        seed=int(seed),
        index=index,
    )
    return preds[-1], trajectory


def ddim_sample_many(denoiser: Denoiser, sched: NoiseSchedule, steps: int, seed: int,
                     count: int, noise: Optional[np.ndarray] = None):
    """``count`` independent chains from the same seeded noise block, run in parallel.

    Returns the (count, d) final images and the trajectories in sample order.
    """
    if noise is None:
        noise = initial_noise(seed, count, denoiser.dim)
    noise = np.atleast_2d(np.asarray(noise, dtype=np.float64))
    logger.info(f"Sampling {len(noise)} images with {denoiser.name}, {steps} steps, seed {seed}")
    results = ordered_map(
        lambda i: ddim_sample(denoiser, sched, steps, seed, noise=noise[i], index=i),
        range(len(noise)),
    )
    images = np.stack([image for image, _ in results])
    return images, [traj for _, traj in results]


@dataclass(frozen=True)
class SingleStepResult:
    """Single-step x0 predictions from noised held-out images."""

    t: int
    predictions: np.ndarray
    mse: np.ndarray
    nn_distances: np.ndarray
    nn_indices: np.ndarray


def single_step_denoise(denoiser: Denoiser, dataset: ImageDataset, images, t: int,
                      sched: NoiseSchedule, seed: int) -> SingleStepResult:
    """Noise ``images`` to level t once and denoise in one step.

    A denoiser that passes its input through keeps the held-out images
    (low MSE to the inputs); one that snaps to the training set lands on a
    training image (nearest-neighbour distance near zero).
    """
    images = np.atleast_2d(np.asarray(images, dtype=np.float64))
    eps = initial_noise(seed, len(images), images.shape[1])
    noisy = forward_noise(images, eps, t, sched)
    preds = denoiser.predict_batch(noisy, t)
    mse = np.mean((preds - images) ** 2, axis=1)
    nearest = [nearest_neighbor_distance(dataset, p) for p in preds]
    return SingleStepResult(
        t=sched.check(t),
        predictions=preds,
        mse=mse,
        nn_distances=np.array([d for d, _ in nearest]),
        nn_indices=np.array([i for _, i in nearest]),
    )
