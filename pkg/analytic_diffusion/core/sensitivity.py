"""
Sensitivity fields S_f(x, t) = df(x, t)/dx of the x0-predictors.

Analytic Jacobians exist for the optimal, masked and Wiener denoisers; the
centred finite-difference Jacobian works for any denoiser and serves as
the oracle. Row q of a field is the receptive pattern of output pixel q.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from analytic_diffusion.core.dataset import ImageDataset, save_array_tensor
from analytic_diffusion.core.denoisers import Denoiser, masked_weights, optimal_weights
from analytic_diffusion.core.masks import MaskSet
from analytic_diffusion.core.numerics import freeze, require_finite
from analytic_diffusion.core.schedule import PARAM_GUARD, NoiseSchedule
from analytic_diffusion.core.spectral import SpectralModel, wiener_matrix
from analytic_diffusion.defaults import DEFAULT_FD_STEP
from analytic_diffusion.errors import ConfigError, NumericalError
from analytic_diffusion.utils.parallel_utils import ordered_map

logger = logging.getLogger(__name__)

MODE_PER_IMAGE = "per-image"
MODE_JOINT = "joint"
MODE_RAW = "raw"
RENDER_MODES = (MODE_PER_IMAGE, MODE_JOINT, MODE_RAW)


@dataclass(frozen=True)
class SensitivityField:
    """Selected Jacobian rows (one per output pixel) at an evaluation point."""

    rows: np.ndarray
    pixels: Tuple[int, ...]
    shape: Tuple[int, int, int]
    t: int
    x: Optional[np.ndarray] = None
    mode: str = MODE_PER_IMAGE
    kind: str = "x0"

    def __post_init__(self):
        rows = np.atleast_2d(np.asarray(self.rows, dtype=np.float64))
        pixels = tuple(int(p) for p in self.pixels)
        d = int(np.prod(self.shape))
        if rows.shape != (len(pixels), d):
            raise ConfigError(f"field rows {rows.shape} do not match {len(pixels)} pixels of {d}")
        if self.mode not in RENDER_MODES:
            raise ConfigError(f"unknown normalization mode '{self.mode}' (expected {', '.join(RENDER_MODES)})")
        require_finite(rows, "sensitivity field")
        object.__setattr__(self, "rows", freeze(rows))
        object.__setattr__(self, "pixels", pixels)
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))

    @property
    def dim(self) -> int:
        return int(np.prod(self.shape))

    def row(self, q: int) -> np.ndarray:
        return self.rows[self.pixels.index(int(q))]


def _pixels(pixels: Optional[Sequence[int]], d: int) -> Tuple[int, ...]:
    if pixels is None:
        return tuple(range(d))
    pixels = tuple(int(p) for p in pixels)
    if not pixels:
        raise ConfigError("no output pixels requested")
    if min(pixels) < 0 or max(pixels) >= d:
        raise ConfigError(f"requested pixel outside [0, {d})")
    return pixels


def pixel_index(row: int, col: int, shape, channel: int = 0) -> int:
    """Flat index of (row, col, channel) in the interleaved layout."""
    h, w, c = shape
    if not (0 <= row < h and 0 <= col < w and 0 <= channel < c):
        raise ConfigError(f"pixel ({row}, {col}, {channel}) outside a {h}x{w}x{c} image")
    return (row * w + col) * c + channel


def analytic_jacobian_optimal(dataset: ImageDataset, x, t: int, sched: NoiseSchedule,
                              pixels: Optional[Sequence[int]] = None) -> SensitivityField:
    """J = (sqrt(a) / sigma^2) (sum_i w_i x_i x_i^T - x0_hat x0_hat^T)."""
    pixels = _pixels(pixels, dataset.dim)
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    weights = optimal_weights(dataset, x, t, sched)
    images = dataset.as_float64()
    mean = weights @ images
    selected = list(pixels)
    second = (images[:, selected] * weights[:, None]).T @ images
    rows = (np.sqrt(sched.alpha_bar(t)) / sched.sigma(t) ** 2) * (second - np.outer(mean[selected], mean))
    return SensitivityField(rows=rows, pixels=pixels, shape=dataset.shape, t=sched.check(t), x=x)


def analytic_jacobian_masked(dataset: ImageDataset, masks: MaskSet, x, t: int, sched: NoiseSchedule,
                             pixels: Optional[Sequence[int]] = None) -> SensitivityField:
    """Row q: (sqrt(a) / sigma^2) sum_i w_i^q x_i[q] (mask_q * (x_i - xbar^q))."""
    pixels = _pixels(pixels, dataset.dim)
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    t = sched.check(t)
    mask_rows = masks.rows(t)
    weights = masked_weights(dataset, masks, x, t, sched, pixels)
    images = dataset.as_float64()
    scale = np.sqrt(sched.alpha_bar(t)) / sched.sigma(t) ** 2

    rows = np.zeros((len(pixels), dataset.dim))
    for k, q in enumerate(pixels):
        support = mask_rows[q]
        w = weights[k]
        local = images[:, support]
        centred = local - w @ local
        rows[k, support] = scale * ((w * images[:, q]) @ centred)
    return SensitivityField(rows=rows, pixels=pixels, shape=dataset.shape, t=t, x=x)


def wiener_sensitivity(model: SpectralModel, t: int, sched: NoiseSchedule,
                       pixels: Optional[Sequence[int]] = None) -> SensitivityField:
    """Exact Jacobian of the Wiener denoiser, S_t / sqrt(a); the same for every x."""
    pixels = _pixels(pixels, model.dim)
    rows = wiener_matrix(model, t, sched)[list(pixels)]
    return SensitivityField(rows=rows, pixels=pixels, shape=model.shape, t=sched.check(t))


def fd_jacobian(denoiser: Denoiser, x, t: int, pixels: Optional[Sequence[int]] = None,
                step: float = DEFAULT_FD_STEP) -> SensitivityField:
    """Central differences [f(x + h e_p) - f(x - h e_p)] / (2h) over every input pixel p."""
    if not step > 0:
        raise ConfigError(f"finite-difference step must be > 0, got {step}")
    pixels = _pixels(pixels, denoiser.dim)
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    selected = list(pixels)
    logger.info(f"Finite-difference Jacobian of {denoiser.name} at t={t}: "
                f"{2 * denoiser.dim} evaluations, step {step:g}")

    def column(p: int) -> np.ndarray:
        bump = np.zeros_like(x)
        bump[p] = step
        plus = denoiser.predict_x0(x + bump, t)
        minus = denoiser.predict_x0(x - bump, t)
        return (plus[selected] - minus[selected]) / (2.0 * step)

    columns = ordered_map(column, range(denoiser.dim))
    rows = np.stack(columns, axis=1)
    return SensitivityField(rows=rows, pixels=pixels, shape=denoiser.shape,
                            t=denoiser.schedule.check(t), x=x)


def fd_richardson(denoiser: Denoiser, x, t: int, pixels: Optional[Sequence[int]] = None,
                  step: float = DEFAULT_FD_STEP) -> SensitivityField:
    """Richardson-extrapolated central differences (4 D(h/2) - D(h)) / 3."""
    coarse = fd_jacobian(denoiser, x, t, pixels, step)
    fine = fd_jacobian(denoiser, x, t, pixels, step / 2.0)
    rows = (4.0 * fine.rows - coarse.rows) / 3.0
    return SensitivityField(rows=rows, pixels=coarse.pixels, shape=coarse.shape, t=coarse.t, x=coarse.x)


def eps_sensitivity(field: SensitivityField, sched: NoiseSchedule) -> SensitivityField:
    """Convert an x0-field to the epsilon parametrization: (e_q - sqrt(a) J_q) / sigma."""
    if field.kind != "x0":
        raise ConfigError(f"expected an x0 sensitivity field, got '{field.kind}'")
    sigma = sched.sigma(field.t)
    if sigma < PARAM_GUARD:
        raise NumericalError("ill-defined parametrization: sigma_t is zero")
    identity = np.zeros_like(field.rows)
    identity[np.arange(len(field.pixels)), list(field.pixels)] = 1.0
    rows = (identity - np.sqrt(sched.alpha_bar(field.t)) * field.rows) / sigma
    return SensitivityField(rows=rows, pixels=field.pixels, shape=field.shape, t=field.t,
                            x=field.x, mode=field.mode, kind="eps")


def average_fields(fields: Sequence[SensitivityField]) -> SensitivityField:
    """Mean of |rows| over evaluation points sharing pixels and timestep."""
    fields = list(fields)
    if not fields:
        raise ConfigError("no fields to average")
    first = fields[0]
    for f in fields[1:]:
        if f.pixels != first.pixels or f.t != first.t or f.shape != first.shape:
            raise ConfigError("fields to average must share pixels, timestep and shape")
    rows = np.mean([np.abs(f.rows) for f in fields], axis=0)
    return SensitivityField(rows=rows, pixels=first.pixels, shape=first.shape, t=first.t,
                            mode=first.mode, kind=first.kind)


def magnitude_map(row: np.ndarray, shape) -> np.ndarray:
    """|row| as an H x W map, channels averaged."""
    h, w, c = shape
    return np.abs(np.asarray(row, dtype=np.float64)).reshape(h, w, c).mean(axis=2)


def render_field(field: SensitivityField, mode: Optional[str] = None):
    """One H x W grayscale map per row.

    per-image: each map divided by its own max; joint: all maps divided by
    the largest value among them; raw: magnitudes as they are. All-zero
    maps stay black.
    """
    mode = mode or field.mode
    if mode not in RENDER_MODES:
        raise ConfigError(f"unknown normalization mode '{mode}' (expected {', '.join(RENDER_MODES)})")
    maps = [magnitude_map(row, field.shape) for row in field.rows]
    if mode == MODE_RAW:
        return maps
    if mode == MODE_JOINT:
        peak = max(float(m.max()) for m in maps)
        return [m / peak if peak > 0 else m for m in maps]
    return [m / m.max() if m.max() > 0 else m for m in maps]


def stencil_overlap(row: np.ndarray, stencil: np.ndarray, shape) -> float:
    """Share of a row's magnitude falling on the stencil's active pixels."""
    mass = magnitude_map(row, shape)
    stencil = np.asarray(stencil, dtype=np.float64)
    if stencil.shape != mass.shape:
        raise ConfigError(f"stencil shape {stencil.shape} does not match field {mass.shape}")
    total = mass.sum()
    if total == 0:
        return 0.0
    return float(mass[stencil > 0].sum() / total)


def centered_kernel(field: SensitivityField, radius: Optional[int] = None) -> np.ndarray:
    """Average of |rows| re-centred on their own output pixel.

    Returns a (2R + 1) x (2R + 1) kernel; the window is zero-padded outside
    the image. Feeds ``masks.shared_kernel_masks``.
    """
    h, w, c = field.shape
    radius = max(h, w) - 1 if radius is None else int(radius)
    if radius < 0:
        raise ConfigError(f"kernel radius must be >= 0, got {radius}")
    size = 2 * radius + 1
    kernel = np.zeros((size, size))
    for q, row in zip(field.pixels, field.rows):
        r, col = divmod(q // c, w)
        padded = np.zeros((h + 2 * radius, w + 2 * radius))
        padded[radius:radius + h, radius:radius + w] = magnitude_map(row, field.shape)
        kernel += padded[r:r + size, col:col + size]
    return kernel / len(field.pixels)


def save_field_tensor(field: SensitivityField, path: str) -> None:
    """Dump the rows as an ADT1 tensor (rows, H, W, C)."""
    h, w, c = field.shape
    save_array_tensor(field.rows, h, w, c, path)
