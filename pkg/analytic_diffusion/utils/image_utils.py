"""
8-bit image export through Pillow: PGM (P5) for one channel, PPM (P6) for three.
"""
import logging
import math
from typing import Optional, Sequence, Tuple

import numpy as np
from PIL import Image

from analytic_diffusion.errors import ConfigError

logger = logging.getLogger(__name__)

IMAGE_EXTENSIONS = {1: ".pgm", 3: ".ppm"}


def to_uint8(pixels: np.ndarray, value_range: Tuple[float, float]) -> np.ndarray:
    """Map ``value_range`` onto 0..255, rounding to nearest and clipping."""
    lo, hi = float(value_range[0]), float(value_range[1])
    if not hi > lo:
        raise ConfigError(f"degenerate value range [{lo}, {hi}]")
    scaled = (np.asarray(pixels, dtype=np.float64) - lo) * (255.0 / (hi - lo))
    return np.clip(np.rint(scaled), 0, 255).astype(np.uint8)


def image_extension(channels: int) -> str:
    if channels not in IMAGE_EXTENSIONS:
        raise ConfigError(f"only 1- or 3-channel images can be exported, got {channels}")
    return IMAGE_EXTENSIONS[channels]


def _to_pil(array: np.ndarray) -> Image.Image:
    if array.ndim == 3 and array.shape[2] == 1:
        array = array[:, :, 0]
    return Image.fromarray(np.ascontiguousarray(array))


def export_image(image, shape, path: str, value_range: Tuple[float, float]) -> str:
    """Write one flattened image of ``shape`` (H, W, C) as binary PGM/PPM."""
    h, w, c = shape
    image_extension(c)
    pixels = to_uint8(np.asarray(image).reshape(h, w, c), value_range)
    _to_pil(pixels).save(path, format="PPM")
    return path


def export_map(values: np.ndarray, path: str) -> str:
    """Write an H x W map with values in [0, 1] as a grayscale PGM."""
    _to_pil(to_uint8(values, (0.0, 1.0))).save(path, format="PPM")
    return path


def export_grid(images: Sequence[np.ndarray], shape, path: str, value_range: Tuple[float, float],
                columns: Optional[int] = None, padding: int = 1) -> str:
    """Tile flattened images row-major into one PGM/PPM; gaps are black."""
    images = np.atleast_2d(np.asarray(images, dtype=np.float64))
    h, w, c = shape
    image_extension(c)
    count = len(images)
    columns = columns or int(math.ceil(math.sqrt(count)))
    rows = int(math.ceil(count / columns))
    canvas = np.zeros((rows * (h + padding) - padding, columns * (w + padding) - padding, c),
                      dtype=np.uint8)
    for k, image in enumerate(images):
        r, col = divmod(k, columns)
        top, left = r * (h + padding), col * (w + padding)
        canvas[top:top + h, left:left + w] = to_uint8(image.reshape(h, w, c), value_range)
    _to_pil(canvas).save(path, format="PPM")
    logger.debug(f"Wrote {count}-image grid to {path}")
    return path


def read_image(path: str) -> np.ndarray:
    """Read a PGM/PPM back as a uint8 (H, W) or (H, W, 3) array."""
    with Image.open(path) as img:
        return np.asarray(img).copy()
