"""
Second-order dataset statistics.

A SpectralModel holds the dataset mean and the eigensystem of its
covariance; from it come per-component SNR, the Wiener (Gaussian posterior
mean) predictor, the normalized sensitivity projector and binarized masks.
"""
import logging
from dataclasses import dataclass
from typing import Iterable, Tuple

import numpy as np

from analytic_diffusion.core.dataset import ImageDataset
from analytic_diffusion.core.masks import MaskSet, PROVENANCE_SPECTRAL, binarize_rows
from analytic_diffusion.core.numerics import freeze, orthonormal_completion, sym_eigen
from analytic_diffusion.core.schedule import NoiseSchedule
from analytic_diffusion.defaults import DEFAULT_TAU, MAX_SPECTRAL_DIM
from analytic_diffusion.errors import ConfigError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SpectralModel:
    """Mean, orthonormal eigenvectors (d x r) and descending variances (r)."""

    mean: np.ndarray
    eigvecs: np.ndarray
    eigvals: np.ndarray
    n_samples: int
    shape: Tuple[int, int, int]

    def __post_init__(self):
        d = self.mean.size
        if self.eigvecs.shape[0] != d or self.eigvecs.shape[1] != self.eigvals.size:
            raise ConfigError("eigenvector matrix does not match mean/eigenvalues")
        if np.any(self.eigvals < 0) or np.any(np.diff(self.eigvals) > 0):
            raise ConfigError("eigenvalues must be non-negative and non-increasing")
        for name in ("mean", "eigvecs", "eigvals"):
            object.__setattr__(self, name, freeze(np.asarray(getattr(self, name), dtype=np.float64)))

    @property
    def dim(self) -> int:
        return self.mean.size

    @property
    def rank(self) -> int:
        return self.eigvals.size

    def covariance(self) -> np.ndarray:
        u = self.eigvecs
        return (u * self.eigvals) @ u.T

    @classmethod
    def from_covariance(cls, mean, cov, n_samples: int = 0, shape=None) -> "SpectralModel":
        mean = np.asarray(mean, dtype=np.float64).reshape(-1)
        eig = sym_eigen(cov, check_psd=True)
        return cls(
            mean=mean,
            eigvecs=eig.eigenvectors,
            eigvals=eig.eigenvalues,
            n_samples=n_samples,
            shape=tuple(shape) if shape else (1, mean.size, 1),
        )


def fit(dataset: ImageDataset) -> SpectralModel:
    """Centre the images and eigendecompose Sigma = (1/N) sum (x - mu)(x - mu)^T.

    Keeps r = min(N - 1, d) components. When N < d the N x N Gram matrix is
    decomposed instead and its eigenvectors lifted to pixel space.
    """
    n, d = dataset.count, dataset.dim
    if n < 2:
        raise ConfigError(f"fit needs at least 2 images, got {n}")
    if d > MAX_SPECTRAL_DIM:
        raise ConfigError(
            f"d = {d} exceeds the dense covariance limit {MAX_SPECTRAL_DIM}; "
            "downscale the images first"
        )
    images = dataset.as_float64()
    mean = images.mean(axis=0)
    centred = images - mean
    r = min(n - 1, d)

    if n < d:
        gram = centred @ centred.T / n
        eig = sym_eigen(gram, check_psd=True)
        values = eig.eigenvalues[:r]
        tol = max(values[0], 0.0) * 1e-12 if values.size else 0.0
        positive = values > tol
        lifted = np.zeros((d, 0))
        if positive.any():
            lifted = centred.T @ eig.eigenvectors[:, :r][:, positive]
            lifted /= np.sqrt(n * values[positive])
            # Re-orthonormalize; lifting loses a little orthogonality for tiny eigenvalues.
            q, rr = np.linalg.qr(lifted)
            lifted = q * np.sign(np.diag(rr))
        vectors = orthonormal_completion(lifted, r)
        values = np.where(positive, values, 0.0)
    else:
        cov = centred.T @ centred / n
        eig = sym_eigen(cov, check_psd=True)
        vectors = eig.eigenvectors[:, :r]
        values = eig.eigenvalues[:r]

    logger.info(
        f"Fitted spectral model: N={n}, d={d}, rank={r}, "
        f"top eigenvalue={values[0] if values.size else 0.0:.6g}"
    )
    return SpectralModel(
        mean=mean,
        eigvecs=vectors,
        eigvals=values,
        n_samples=n,
        shape=dataset.shape,
    )


def snr(model: SpectralModel, t: int, sched: NoiseSchedule) -> np.ndarray:
    """SNR_i = alpha_bar_t v_i / (1 - alpha_bar_t)."""
    a = sched.alpha_bar(t)
    return a * model.eigvals / (1.0 - a)


def shrinkage(model: SpectralModel, t: int, sched: NoiseSchedule) -> np.ndarray:
    """Per-component projector factors SNR / (SNR + 1)."""
    a = sched.alpha_bar(t)
    signal = a * model.eigvals
    return signal / (signal + (1.0 - a))


def wiener_predict(model: SpectralModel, x, t: int, sched: NoiseSchedule) -> np.ndarray:
    """Gaussian posterior mean mu + sqrt(a) Sigma (a Sigma + sigma^2 I)^-1 (x - sqrt(a) mu).

    Evaluated in the eigenbasis with factors sqrt(a) v_i / (a v_i + sigma^2).
    Accepts a single image (d,) or a batch (k, d).
    """
    a = sched.alpha_bar(t)
    root = np.sqrt(a)
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.dim:
        raise ConfigError(f"input has {x.shape[-1]} pixels, model expects {model.dim}")
    factors = root * model.eigvals / (a * model.eigvals + (1.0 - a))
    u = model.eigvecs
    coords = (x - root * model.mean) @ u
    return model.mean + (coords * factors) @ u.T


def sensitivity_projector(model: SpectralModel, t: int, sched: NoiseSchedule) -> np.ndarray:
    """S_t = U diag(SNR / (SNR + 1)) U^T, a symmetric d x d matrix."""
    u = model.eigvecs
    s = (u * shrinkage(model, t, sched)) @ u.T
    return 0.5 * (s + s.T)


def build_masks(model: SpectralModel, t: int, sched: NoiseSchedule,
                tau: float = DEFAULT_TAU) -> MaskSet:
    """Binarize the rows of S_t relative to each row's max absolute value."""
    rows = binarize_rows(sensitivity_projector(model, t, sched), tau)
    return MaskSet(masks={sched.check(t): rows}, dim=model.dim, threshold=tau,
                   provenance=PROVENANCE_SPECTRAL)


def build_mask_table(model: SpectralModel, timesteps: Iterable[int], sched: NoiseSchedule,
                     tau: float = DEFAULT_TAU) -> MaskSet:
    """Masks for every timestep in ``timesteps`` (e.g. a sampler grid)."""
    masks = {}
    for t in timesteps:
        masks[sched.check(t)] = binarize_rows(sensitivity_projector(model, t, sched), tau)
        logger.debug(f"masks t={t}: mean size {np.mean([r.size for r in masks[t]]):.1f}")
    logger.info(f"Built spectral masks for {len(masks)} timesteps (tau={tau})")
    return MaskSet(masks=masks, dim=model.dim, threshold=tau, provenance=PROVENANCE_SPECTRAL)


def top_component_images(model: SpectralModel, k: int) -> np.ndarray:
    """The first ``k`` eigenvectors as rows, for display."""
    return np.asarray(model.eigvecs[:, :k]).T.copy()


def component_alignment(model: SpectralModel, direction: np.ndarray, index: int = 0) -> float:
    """|cos| between eigenvector ``index`` and ``direction``."""
    direction = np.asarray(direction, dtype=np.float64).reshape(-1)
    norm = np.linalg.norm(direction)
    if norm == 0:
        raise ConfigError("direction must be nonzero")
    return float(abs(model.eigvecs[:, index] @ direction) / norm)


def projector_gain(model: SpectralModel, t: int, sched: NoiseSchedule,
                   direction: np.ndarray) -> float:
    """Rayleigh quotient of S_t along ``direction``."""
    direction = np.asarray(direction, dtype=np.float64).reshape(-1)
    direction = direction / np.linalg.norm(direction)
    coords = model.eigvecs.T @ direction
    return float(np.sum(shrinkage(model, t, sched) * coords**2))


def stats_fingerprint(model: SpectralModel) -> str:
    return f"N={model.n_samples},d={model.dim},rank={model.rank}"


def wiener_matrix(model: SpectralModel, t: int, sched: NoiseSchedule) -> np.ndarray:
    """Dense Jacobian of ``wiener_predict``: (1 / sqrt(a)) S_t."""
    return sensitivity_projector(model, t, sched) / np.sqrt(sched.alpha_bar(t))
