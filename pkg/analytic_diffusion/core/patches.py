"""
Patch-based equivariant denoiser.

Output pixel q is a softmax-weighted average of the centre pixels of every
training patch at every cyclic shift, the weights coming from the distance
between the p x p patch of x around q and the training patch. Shifts wrap
around the image border so the translations form an exact group.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional

import numpy as np
from scipy import ndimage

from analytic_diffusion.core.dataset import ImageDataset
from analytic_diffusion.core.denoisers import Denoiser, StreamingSoftmaxAccumulator, dataset_batches
from analytic_diffusion.core.schedule import NoiseSchedule
from analytic_diffusion.errors import ConfigError, NumericalError
from analytic_diffusion.utils.parallel_utils import ordered_map

logger = logging.getLogger(__name__)

BOUNDARY_CYCLIC = "cyclic"

# Per-step patch sides for a 10-step sampler, largest noise first.
KAMB_PRESETS: Dict[str, tuple] = {
    "cifar10": (32, 32, 32, 29, 25, 17, 13, 9, 7, 3),
    "celeba_hq": (64, 64, 57, 49, 45, 25, 17, 17, 9, 3),
    "afhq": (64, 64, 45, 33, 25, 17, 17, 9, 9, 3),
    "mnist": (28, 28, 23, 23, 17, 17, 17, 13, 9, 9),
    "fashion_mnist": (28, 28, 25, 23, 17, 17, 13, 13, 9, 9),
}
PRESET_STEPS = 10


@dataclass(frozen=True)
class PatchConfig:
    """Patch side per timestep, translation stride and boundary handling."""

    patch_sizes: Mapping[int, int]
    translation_stride: int = 1
    boundary: str = field(default=BOUNDARY_CYCLIC)

    def __post_init__(self):
        if not self.patch_sizes:
            raise ConfigError("patch config has no timesteps")
        sizes = {int(t): int(p) for t, p in sorted(self.patch_sizes.items())}
        if any(p < 1 for p in sizes.values()):
            raise ConfigError(f"patch sizes must be positive, got {sizes}")
        if int(self.translation_stride) != self.translation_stride or self.translation_stride < 1:
            raise ConfigError(f"translation stride must be a positive integer, got {self.translation_stride}")
        if self.boundary != BOUNDARY_CYCLIC:
            raise ConfigError(f"unsupported boundary '{self.boundary}' (only '{BOUNDARY_CYCLIC}')")
        object.__setattr__(self, "patch_sizes", sizes)

    def size_for(self, t: int) -> int:
        """Patch side of the configured timestep nearest to ``t``; ties go to the larger timestep."""
        keys = np.array(list(self.patch_sizes))
        gaps = np.abs(keys - t)
        nearest = keys[gaps == gaps.min()].max()
        return self.patch_sizes[int(nearest)]

    def validate(self, height: int, width: int) -> None:
        for t, p in self.patch_sizes.items():
            if p >= max(height, width):
                continue
            if p % 2 == 0:
                raise ConfigError(f"patch size {p} at t={t} is even; the centre pixel is undefined")
            if p > min(height, width):
                raise ConfigError(f"patch size {p} at t={t} does not fit a {height}x{width} image")

    def shifts(self, height: int, width: int):
        stride = int(self.translation_stride)
        return [(dy, dx) for dy in range(0, height, stride) for dx in range(0, width, stride)]


def full_image_config(timesteps, height: int, width: int) -> PatchConfig:
    """Whole-image patches and only the identity shift."""
    side = max(height, width)
    return PatchConfig(patch_sizes={int(t): side for t in timesteps},
                       translation_stride=max(height, width))


def kamb_patch_schedule(name: str, T: int = 1000, translation_stride: int = 1) -> PatchConfig:
    """Bundled per-step patch sizes, keyed on the 10-step grid of a T-step schedule."""
    key = name.lower().replace("-", "_")
    if key not in KAMB_PRESETS:
        raise ConfigError(
            f"Unknown patch preset '{name}'. Known presets: {', '.join(sorted(KAMB_PRESETS))}"
        )
    if T < PRESET_STEPS:
        raise ConfigError(f"patch presets need T >= {PRESET_STEPS}, got {T}")
    grid = [T - (k * T) // PRESET_STEPS for k in range(PRESET_STEPS)]
    return PatchConfig(patch_sizes=dict(zip(grid, KAMB_PRESETS[key])),
                       translation_stride=translation_stride)


def _box_sum(sq: np.ndarray, p: int, height: int, width: int) -> np.ndarray:
    """Cyclic p x p window sums of a (B, H, W) array, centred on each pixel."""
    if p >= max(height, width):
        total = sq.sum(axis=(1, 2), keepdims=True)
        return np.broadcast_to(total, sq.shape)
    if p == 1:
        return sq
    return ndimage.uniform_filter(sq, size=(1, p, p), mode="wrap") * (p * p)


def patch_predict(dataset: ImageDataset, cfg: PatchConfig, x, t: int, sched: NoiseSchedule,
                  batch_size: Optional[int] = None) -> np.ndarray:
    """Softmax over (image, shift) pairs of patch distances, one weighting per spatial location.

    All channels of a location share its weights. Each shift is reduced in
    its own accumulator and the partial results are merged in shift order.
    """
    h, w, c = dataset.shape
    cfg.validate(h, w)
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.size != dataset.dim:
        raise ConfigError(f"input has {x.size} pixels, dataset images have {dataset.dim}")
    t = sched.check(t)
    p = cfg.size_for(t)
    root = np.sqrt(sched.alpha_bar(t))
    temperature = 2.0 * sched.sigma(t) ** 2
    image = x.reshape(h, w, c)
    batches = list(dataset_batches(dataset.count, batch_size))

    def reduce_shift(shift) -> StreamingSoftmaxAccumulator:
        acc = StreamingSoftmaxAccumulator(dataset.dim)
        for start, stop in batches:
            block = np.asarray(dataset.images[start:stop], dtype=np.float64).reshape(-1, h, w, c)
            rolled = np.roll(block, shift, axis=(1, 2))
            sq = ((image - root * rolled) ** 2).sum(axis=3)
            dist = _box_sum(sq, p, h, w).reshape(len(block), h * w)
            logits = np.repeat(-dist / temperature, c, axis=1)
            acc.update(logits, rolled.reshape(len(block), -1))
        return acc

    partials = ordered_map(reduce_shift, cfg.shifts(h, w))
    logger.debug(f"patch_predict t={t}: p={p}, {len(partials)} shifts")
    return _merge(partials)


def _merge(partials) -> np.ndarray:
    running_max = np.max([a.running_max for a in partials], axis=0)
    normalizer = np.zeros_like(running_max)
    weighted = np.zeros_like(running_max)
    for acc in partials:
        scale = np.exp(acc.running_max - running_max)
        normalizer += acc.normalizer * scale
        weighted += acc.weighted * scale
    if np.any(normalizer <= 0):
        raise NumericalError("empty support")
    return weighted / normalizer


class PatchDenoiser(Denoiser):
    name = "patch"

    def __init__(self, dataset: ImageDataset, cfg: PatchConfig, sched: NoiseSchedule,
                 batch_size: Optional[int] = None):
        cfg.validate(dataset.height, dataset.width)
        super().__init__(dataset.shape, sched)
        self.dataset = dataset
        self.config = cfg
        self.batch_size = batch_size

    def fingerprint(self) -> str:
        sizes = ",".join(f"{t}:{p}" for t, p in self.config.patch_sizes.items())
        return (
            f"N={self.dataset.count},sizes={sizes},stride={self.config.translation_stride},"
            f"{self.schedule.fingerprint()}"
        )

    def _predict(self, x, t):
        return patch_predict(self.dataset, self.config, x, t, self.schedule, self.batch_size)
