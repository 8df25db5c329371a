"""Bundled binary stencils for the covariance-manipulation experiment."""

import numpy as np
from PIL import Image

from analytic_diffusion.errors import ConfigError

# 28 x 28 raster of the letter W.
_W_RASTER = (
    "............................",
    "............................",
    "............................",
    "............................",
    "..##....................##..",
    "..##....................##..",
    "..##....................##..",
    "...##..................##...",
    "...##..................##...",
    "...##.......##.........##...",
    "....##.....####.......##....",
    "....##.....####.......##....",
    "....##....##..##......##....",
    ".....##...##..##.....##.....",
    ".....##...##..##.....##.....",
    ".....##..##....##....##.....",
    "......##.##....##...##......",
    "......##.##....##...##......",
    "......####......##.##.......",
    ".......###......##.##.......",
    ".......##........###........",
    ".......##........###........",
    "............................",
    "............................",
    "............................",
    "............................",
    "............................",
    "............................",
)


def w_raster() -> np.ndarray:
    """The 28 x 28 W stencil as a {0, 1} float array."""
    return np.array([[ch == "#" for ch in row] for row in _W_RASTER], dtype=np.float64)


def resample_stencil(stencil: np.ndarray, height: int, width: int) -> np.ndarray:
    """Nearest-neighbour resample of a binary stencil to ``height`` x ``width``."""
    if height < 1 or width < 1:
        raise ConfigError(f"invalid stencil size {height}x{width}")
    stencil = np.asarray(stencil)
    if stencil.shape == (height, width):
        return stencil.astype(np.float64)
    img = Image.fromarray((stencil > 0).astype(np.uint8) * 255)
    resized = img.resize((width, height), resample=Image.Resampling.NEAREST)
    out = (np.asarray(resized) > 127).astype(np.float64)
    if not out.any():
        raise ConfigError(f"stencil vanished when resampled to {height}x{width}")
    return out


def default_stencil(height: int, width: int) -> np.ndarray:
    return resample_stencil(w_raster(), height, width)
