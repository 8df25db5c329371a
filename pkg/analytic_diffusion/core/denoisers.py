"""
Analytical denoisers.

Every denoiser maps a noisy image x at timestep t to an estimate of
E[x0 | x_t = x]. The optimal denoiser is a softmax-weighted average of the
training images; the masked denoiser computes that weighting separately
for each output pixel from the distance restricted to the pixel's mask;
the Wiener denoiser is the Gaussian posterior mean. The patch denoiser
lives in ``patches``.
"""
import logging
from abc import ABC, abstractmethod
from typing import Optional, Sequence

import numpy as np

from analytic_diffusion.core.dataset import ImageDataset
from analytic_diffusion.core.masks import MaskSet, load_masks
from analytic_diffusion.core.numerics import require_finite, row_space_projection, stable_softmax
from analytic_diffusion.core.schedule import NoiseSchedule
from analytic_diffusion.core.spectral import SpectralModel, stats_fingerprint, wiener_predict
from analytic_diffusion.defaults import DEFAULT_BATCH_SIZE, thread_count
from analytic_diffusion.errors import ConfigError, NumericalError
from analytic_diffusion.utils.parallel_utils import ordered_map, split_range

logger = logging.getLogger(__name__)


class Denoiser(ABC):
    """Abstract x0-predictor f(x, t) over flattened images of a fixed shape.

    Instances are immutable after construction and safe to call from
    several threads at once.
    """

    name = "denoiser"

    def __init__(self, shape, sched: NoiseSchedule):
        self.shape = tuple(int(s) for s in shape)
        self.schedule = sched

    @property
    def dim(self) -> int:
        return int(np.prod(self.shape))

    @property
    def descriptor(self) -> str:
        return f"{self.name}[{self.fingerprint()}]"

    def fingerprint(self) -> str:
        return self.schedule.fingerprint()

    @abstractmethod
    def _predict(self, x: np.ndarray, t: int) -> np.ndarray:
        """Return x0_hat for a single float64 image ``x`` of length d."""

    def predict_x0(self, x, t: int) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.dim,):
            raise ConfigError(f"{self.name}: expected an image of {self.dim} pixels, got {x.shape}")
        t = self.schedule.check(t)
        out = self._predict(x, t)
        return require_finite(np.asarray(out, dtype=np.float64).reshape(self.dim),
                              f"{self.name} output at t={t}")

    __call__ = predict_x0

    def predict_batch(self, xs, t: int) -> np.ndarray:
        """Predict every row of ``xs`` (k x d); rows are spread over a thread pool."""
        xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
        rows = ordered_map(lambda x: self.predict_x0(x, t), list(xs))
        return np.stack(rows) if rows else np.zeros((0, self.dim))


class StreamingSoftmaxAccumulator:
    """Single-pass softmax-weighted sum over batches, one slot per output pixel.

    Keeps a running max logit, a running normalizer and a running weighted
    value sum; earlier contributions are rescaled whenever the max grows.
    Logits may be -inf (excluded entries).
    """

    def __init__(self, size: int):
        self.running_max = np.full(size, -np.inf)
        self.normalizer = np.zeros(size)
        self.weighted = np.zeros(size)

    def update(self, logits, values) -> None:
        """Fold in a batch: ``logits`` is (B,) shared by all slots or (B, size); ``values`` is (B, size)."""
        logits = np.asarray(logits, dtype=np.float64)
        values = np.asarray(values, dtype=np.float64)
        if logits.ndim == 1:
            logits = logits[:, None]
        if logits.shape[0] == 0:
            return
        if np.isnan(logits).any() or np.isposinf(logits).any():
            raise NumericalError("softmax logits must be finite or -inf")

        new_max = np.maximum(self.running_max, logits.max(axis=0))
        with np.errstate(invalid="ignore"):
            scale = np.where(np.isneginf(self.running_max), 0.0,
                             np.exp(self.running_max - new_max))
            weights = np.exp(logits - new_max)
        weights = np.where(np.isneginf(new_max), 0.0, weights)

        self.normalizer = self.normalizer * scale + weights.sum(axis=0)
        self.weighted = self.weighted * scale + (weights * values).sum(axis=0)
        self.running_max = np.broadcast_to(new_max, self.running_max.shape).copy()

    def finalize(self) -> np.ndarray:
        if np.any(self.normalizer <= 0):
            raise NumericalError("empty support")
        return self.weighted / self.normalizer


def dataset_batches(count: int, batch_size: Optional[int]):
    size = DEFAULT_BATCH_SIZE if batch_size is None else int(batch_size)
    if size < 1:
        raise ConfigError(f"batch size must be >= 1, got {batch_size}")
    for start in range(0, count, size):
        yield start, min(count, start + size)


def _check_input(dataset: ImageDataset, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.size != dataset.dim:
        raise ConfigError(f"input has {x.size} pixels, dataset images have {dataset.dim}")
    return x


def optimal_logits(dataset: ImageDataset, x, t: int, sched: NoiseSchedule) -> np.ndarray:
    """-||x - sqrt(a) x0_i||^2 / (2 sigma^2) for every training image."""
    x = _check_input(dataset, x)
    diff = x - np.sqrt(sched.alpha_bar(t)) * dataset.as_float64()
    return -np.einsum("ij,ij->i", diff, diff) / (2.0 * sched.sigma(t) ** 2)


def optimal_weights(dataset: ImageDataset, x, t: int, sched: NoiseSchedule) -> np.ndarray:
    """Softmax weights of the optimal denoiser over the N training images."""
    return stable_softmax(optimal_logits(dataset, x, t, sched))


def optimal_predict(dataset: ImageDataset, x, t: int, sched: NoiseSchedule,
                    batch_size: Optional[int] = None) -> np.ndarray:
    """x0_hat = sum_i w_i x0_i, streamed over dataset batches."""
    x = _check_input(dataset, x)
    root = np.sqrt(sched.alpha_bar(t))
    temperature = 2.0 * sched.sigma(t) ** 2
    acc = StreamingSoftmaxAccumulator(dataset.dim)
    for start, stop in dataset_batches(dataset.count, batch_size):
        block = np.asarray(dataset.images[start:stop], dtype=np.float64)
        diff = x - root * block
        acc.update(-np.einsum("ij,ij->i", diff, diff) / temperature, block)
    return acc.finalize()


def masked_predict(dataset: ImageDataset, masks: MaskSet, x, t: int, sched: NoiseSchedule,
                   batch_size: Optional[int] = None) -> np.ndarray:
    """Per-pixel softmax over mask-restricted distances.

    Squared differences D (B x d) are gathered through the sparse mask
    matrix, Dm = D M^T, so each logit costs |mask_q| operations. Output
    pixels are split into contiguous blocks, one per worker; each block
    reduces over the dataset in the same order whatever the thread count.
    """
    x = _check_input(dataset, x)
    if masks.dim != dataset.dim:
        raise ConfigError(f"masks cover {masks.dim} pixels, dataset images have {dataset.dim}")
    matrix = masks.matrix(sched.check(t))
    root = np.sqrt(sched.alpha_bar(t))
    temperature = 2.0 * sched.sigma(t) ** 2
    batches = list(dataset_batches(dataset.count, batch_size))

    def reduce_block(pixels: np.ndarray) -> np.ndarray:
        rows = matrix[pixels[0]:pixels[-1] + 1]
        acc = StreamingSoftmaxAccumulator(pixels.size)
        for start, stop in batches:
            block = np.asarray(dataset.images[start:stop], dtype=np.float64)
            sq = (x - root * block) ** 2
            dist = np.asarray(rows @ sq.T).T
            acc.update(-dist / temperature, block[:, pixels])
        return acc.finalize()

    blocks = split_range(dataset.dim, thread_count())
    return np.concatenate(ordered_map(reduce_block, blocks))


def masked_weights(dataset: ImageDataset, masks: MaskSet, x, t: int, sched: NoiseSchedule,
                   pixels: Sequence[int]) -> np.ndarray:
    """Softmax weights w_i^q (len(pixels) x N) of the masked denoiser."""
    x = _check_input(dataset, x)
    rows = masks.rows(sched.check(t))
    sq = (x - np.sqrt(sched.alpha_bar(t)) * dataset.as_float64()) ** 2
    temperature = 2.0 * sched.sigma(t) ** 2
    return np.stack([stable_softmax(-sq[:, rows[q]].sum(axis=1) / temperature) for q in pixels])


def generalized_masked_predict(dataset: ImageDataset, operators: Sequence[np.ndarray], x,
                               t: int, sched: NoiseSchedule) -> np.ndarray:
    """Dense reference for arbitrary per-pixel linear locality operators A^q.

    Pixel q uses the distance ||P^q (x - sqrt(a) x0_i)||^2 with P^q the
    projector onto the row space of A^q. Costs O(N d^3); meant for checks.
    """
    x = _check_input(dataset, x)
    if len(operators) != dataset.dim:
        raise ConfigError(f"need one operator per pixel ({dataset.dim}), got {len(operators)}")
    images = dataset.as_float64()
    diff = x - np.sqrt(sched.alpha_bar(t)) * images
    temperature = 2.0 * sched.sigma(t) ** 2
    out = np.empty(dataset.dim)
    for q, a in enumerate(operators):
        projected = diff @ row_space_projection(a).T
        weights = stable_softmax(-np.einsum("ij,ij->i", projected, projected) / temperature)
        out[q] = weights @ images[:, q]
    return out


class OptimalDenoiser(Denoiser):
    name = "optimal"

    def __init__(self, dataset: ImageDataset, sched: NoiseSchedule,
                 batch_size: Optional[int] = None):
        super().__init__(dataset.shape, sched)
        self.dataset = dataset
        self.batch_size = batch_size

    def fingerprint(self) -> str:
        return f"N={self.dataset.count},{self.schedule.fingerprint()}"

    def _predict(self, x, t):
        return optimal_predict(self.dataset, x, t, self.schedule, self.batch_size)


class WienerDenoiser(Denoiser):
    name = "wiener"

    def __init__(self, model: SpectralModel, sched: NoiseSchedule):
        super().__init__(model.shape, sched)
        self.model = model

    def fingerprint(self) -> str:
        return f"{stats_fingerprint(self.model)},{self.schedule.fingerprint()}"

    def _predict(self, x, t):
        return wiener_predict(self.model, x, t, self.schedule)


def wiener_denoiser(model: SpectralModel, sched: NoiseSchedule) -> WienerDenoiser:
    return WienerDenoiser(model, sched)


class MaskedDenoiser(Denoiser):
    """Optimal denoiser under per-pixel binary locality masks."""

    name = "masked"

    def __init__(self, dataset: ImageDataset, masks: MaskSet, sched: NoiseSchedule,
                 batch_size: Optional[int] = None):
        if masks.dim != dataset.dim:
            raise ConfigError(f"masks cover {masks.dim} pixels, dataset images have {dataset.dim}")
        super().__init__(dataset.shape, sched)
        self.dataset = dataset
        self.masks = masks
        self.batch_size = batch_size

    def fingerprint(self) -> str:
        return (
            f"N={self.dataset.count},tau={self.masks.threshold},"
            f"provenance={self.masks.provenance},{self.schedule.fingerprint()}"
        )

    def _predict(self, x, t):
        return masked_predict(self.dataset, self.masks, x, t, self.schedule, self.batch_size)


class ExternalMaskDenoiser(MaskedDenoiser):
    """Masked denoiser driven by masks measured elsewhere (a mask file or a shared kernel)."""

    name = "external-masked"

    @classmethod
    def from_file(cls, path: str, dataset: ImageDataset, sched: NoiseSchedule,
                  batch_size: Optional[int] = None) -> "ExternalMaskDenoiser":
        return cls(dataset, load_masks(path), sched, batch_size)
