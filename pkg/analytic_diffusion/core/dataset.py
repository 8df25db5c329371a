"""
Image dataset ingestion and manipulation.

Datasets are held as an N x d matrix of flattened images (row-major pixels,
channels interleaved) with a declared value range. Loaders produce [0, 1];
the denoisers work on [-1, 1] after ``rescale``.
"""
import logging
import os
import struct
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from analytic_diffusion.core.numerics import freeze
from analytic_diffusion.errors import ConfigError, DataFormatError

logger = logging.getLogger(__name__)

IDX_IMAGE_MAGIC = 0x00000803
CIFAR_RECORD = 3073
CIFAR_SIDE = 32
RAW_MAGIC = b"ADT1"
RAW_HEADER = struct.Struct("<4sBB")
RAW_DIMS = struct.Struct("<4I")
RAW_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}

RANGE_TOLERANCE = 1e-9
UNIT_RANGE = (0.0, 1.0)


@dataclass(frozen=True)
class ImageDataset:
    """N flattened images plus their shape and value-range contract."""

    images: np.ndarray
    height: int
    width: int
    channels: int
    value_range: Tuple[float, float] = UNIT_RANGE

    def __post_init__(self):
        images = np.asarray(self.images)
        if images.ndim != 2:
            raise ConfigError(f"images must be an N x d matrix, got shape {images.shape}")
        if images.dtype not in (np.float32, np.float64):
            images = images.astype(np.float64)
        n, d = images.shape
        if n < 1:
            raise ConfigError("dataset must contain at least one image")
        if d != self.height * self.width * self.channels:
            raise ConfigError(
                f"pixel count {d} does not match {self.height}x{self.width}x{self.channels}"
            )
        lo, hi = float(self.value_range[0]), float(self.value_range[1])
        if not np.isfinite(images).all():
            raise ConfigError("dataset contains non-finite pixels")
        if images.min() < lo - RANGE_TOLERANCE or images.max() > hi + RANGE_TOLERANCE:
            raise ConfigError(
                f"pixels [{images.min():.6g}, {images.max():.6g}] fall outside the "
                f"declared range [{lo}, {hi}]"
            )
        object.__setattr__(self, "images", freeze(images))
        object.__setattr__(self, "value_range", (lo, hi))

    @property
    def count(self) -> int:
        return self.images.shape[0]

    @property
    def dim(self) -> int:
        return self.images.shape[1]

    @property
    def shape(self) -> Tuple[int, int, int]:
        return (self.height, self.width, self.channels)

    def as_float64(self) -> np.ndarray:
        return np.asarray(self.images, dtype=np.float64)

    def with_images(self, images: np.ndarray, value_range=None) -> "ImageDataset":
        return ImageDataset(
            images=images,
            height=self.height,
            width=self.width,
            channels=self.channels,
            value_range=self.value_range if value_range is None else value_range,
        )


@dataclass(frozen=True)
class PerturbationSpec:
    """Binary stencil s, signal strength gamma and the seed of the colour draw."""

    stencil: np.ndarray
    gamma: float
    seed: int = 0
    clamp: bool = field(default=True)

    def __post_init__(self):
        stencil = np.asarray(self.stencil, dtype=np.float64)
        if stencil.ndim == 3:
            if not np.all(stencil == stencil[:, :, :1]):
                raise ConfigError("stencil channels must be identical")
            stencil = stencil[:, :, 0]
        if stencil.ndim != 2:
            raise ConfigError(f"stencil must be an H x W image, got shape {stencil.shape}")
        if not np.isin(stencil, (0.0, 1.0)).all():
            raise ConfigError("stencil entries must be 0 or 1")
        if not stencil.any():
            raise ConfigError("stencil has no active pixel")
        if self.gamma < 0:
            raise ConfigError(f"gamma must be >= 0, got {self.gamma}")
        object.__setattr__(self, "stencil", freeze(stencil))

    @property
    def norm(self) -> float:
        """Euclidean norm of the single-channel stencil."""
        return float(np.sqrt(self.stencil.sum()))


def perturbation_scale(spec: PerturbationSpec) -> float:
    """Standard deviation lambda_W = gamma * ||s|| / sqrt(3) of the injected component."""
    return spec.gamma * spec.norm / np.sqrt(3.0)


def _read_bytes(path: str) -> bytes:
    if not os.path.exists(path):
        raise ConfigError(f"Dataset file {path} does not exist")
    with open(path, "rb") as f:
        return f.read()


def load_idx(path: str) -> ImageDataset:
    """Load an IDX image file (MNIST layout) scaled to [0, 1]."""
    raw = _read_bytes(path)
    if len(raw) < 4:
        raise DataFormatError(f"{path}: truncated IDX magic", offset=len(raw))
    (magic,) = struct.unpack_from(">I", raw, 0)
    if magic != IDX_IMAGE_MAGIC:
        raise DataFormatError(f"{path}: bad IDX magic 0x{magic:08x}", offset=0)
    if len(raw) < 16:
        raise DataFormatError(f"{path}: truncated IDX header", offset=len(raw))
    n, rows, cols = struct.unpack_from(">3I", raw, 4)
    expected = n * rows * cols
    payload = raw[16:]
    if len(payload) < expected:
        raise DataFormatError(
            f"{path}: truncated payload, expected {expected} bytes, found {len(payload)}",
            offset=16 + len(payload),
        )
    if n == 0:
        raise DataFormatError(f"{path}: IDX file declares zero images", offset=4)
    pixels = np.frombuffer(payload, dtype=np.uint8, count=expected)
    images = pixels.reshape(n, rows * cols).astype(np.float64) / 255.0
    logger.info(f"Loaded {n} IDX images of {rows}x{cols} from {path}")
    return ImageDataset(images=images, height=rows, width=cols, channels=1)


def load_cifar_binary(paths: Sequence[str]) -> ImageDataset:
    """Load CIFAR-10 binary batches, converting channel-planar records to interleaved."""
    if isinstance(paths, (str, os.PathLike)):
        paths = [paths]
    batches = []
    for path in paths:
        raw = _read_bytes(path)
        if len(raw) == 0 or len(raw) % CIFAR_RECORD:
            raise DataFormatError(
                f"{path}: length {len(raw)} is not a multiple of {CIFAR_RECORD}",
                offset=len(raw) - len(raw) % CIFAR_RECORD,
            )
        records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
        planar = records[:, 1:].reshape(-1, 3, CIFAR_SIDE, CIFAR_SIDE)
        batches.append(planar.transpose(0, 2, 3, 1).reshape(len(records), -1))
        logger.info(f"Loaded {len(records)} CIFAR records from {path}")
    images = np.concatenate(batches, axis=0).astype(np.float64) / 255.0
    return ImageDataset(images=images, height=CIFAR_SIDE, width=CIFAR_SIDE, channels=3)


def read_raw_array(path: str) -> Tuple[np.ndarray, Tuple[int, int, int]]:
    """Pixels of an ADT1 tensor as stored: an (N, H*W*C) array plus (H, W, C)."""
    raw = _read_bytes(path)
    if len(raw) < RAW_HEADER.size:
        raise DataFormatError(f"{path}: truncated tensor header", offset=len(raw))
    magic, dtype_code, rank = RAW_HEADER.unpack_from(raw, 0)
    if magic != RAW_MAGIC:
        raise DataFormatError(f"{path}: bad tensor magic {magic!r}", offset=0)
    if dtype_code not in RAW_DTYPES:
        raise DataFormatError(f"{path}: unknown dtype code {dtype_code}", offset=4)
    if rank != 4:
        raise DataFormatError(f"{path}: tensor rank must be 4, got {rank}", offset=5)
    if len(raw) < RAW_HEADER.size + RAW_DIMS.size:
        raise DataFormatError(f"{path}: truncated tensor dims", offset=len(raw))
    n, h, w, c = RAW_DIMS.unpack_from(raw, RAW_HEADER.size)
    dtype = RAW_DTYPES[dtype_code]
    start = RAW_HEADER.size + RAW_DIMS.size
    expected = n * h * w * c * dtype.itemsize
    if len(raw) - start != expected:
        raise DataFormatError(
            f"{path}: payload is {len(raw) - start} bytes, expected {expected}",
            offset=start + min(len(raw) - start, expected),
        )
    images = np.frombuffer(raw, dtype=dtype, offset=start).reshape(n, h * w * c)
    return images.astype(dtype.newbyteorder("=")), (h, w, c)


def load_raw_tensor(path: str, value_range: Optional[Tuple[float, float]] = None) -> ImageDataset:
    """Load an ADT1 tensor (N, H, W, C).

    The format stores no value range, so callers that know it must pass
    ``value_range``. Without one the data's own [min, max] extent is declared.
    Pixels are never rescaled on load.
    """
    images, (h, w, c) = read_raw_array(path)
    if value_range is None and images.size:
        value_range = (float(images.min()), float(images.max()))
    return ImageDataset(images=images, height=h, width=w, channels=c,
                        value_range=value_range or UNIT_RANGE)


def load_external_images(path: str, shape: Tuple[int, int, int],
                         source_range: Tuple[float, float],
                         target_range: Tuple[float, float]) -> np.ndarray:
    """Images produced elsewhere (predictions, queries) as an (N, d) float64 array.

    Pixels are read in ``source_range`` and mapped affinely onto
    ``target_range``; equal ranges leave them untouched. Nothing is clipped,
    so out-of-range predictions keep their error.
    """
    images, found = read_raw_array(path)
    if found != tuple(shape):
        raise ConfigError(f"{path}: image shape {found} does not match dataset {tuple(shape)}")
    if not np.isfinite(images).all():
        raise DataFormatError(f"{path}: tensor contains non-finite pixels")
    images = images.astype(np.float64)
    lo, hi = float(source_range[0]), float(source_range[1])
    new_lo, new_hi = float(target_range[0]), float(target_range[1])
    if (lo, hi) == (new_lo, new_hi):
        return images
    if not hi > lo:
        raise ConfigError(f"degenerate source range [{lo}, {hi}]")
    return (images - lo) * ((new_hi - new_lo) / (hi - lo)) + new_lo


def save_raw_tensor(dataset: ImageDataset, path: str) -> None:
    """Write ``dataset`` as an ADT1 tensor; float32 data stays float32."""
    images = np.asarray(dataset.images)
    code = 0 if images.dtype == np.float32 else 1
    with open(path, "wb") as f:
        f.write(RAW_HEADER.pack(RAW_MAGIC, code, 4))
        f.write(RAW_DIMS.pack(dataset.count, dataset.height, dataset.width, dataset.channels))
        f.write(images.astype(RAW_DTYPES[code], copy=False).tobytes())


def save_array_tensor(array: np.ndarray, height: int, width: int, channels: int, path: str) -> None:
    """Dump rows of an arbitrary (k, d) float64 array with the ADT1 layout."""
    array = np.atleast_2d(np.asarray(array, dtype=np.float64))
    with open(path, "wb") as f:
        f.write(RAW_HEADER.pack(RAW_MAGIC, 1, 4))
        f.write(RAW_DIMS.pack(array.shape[0], height, width, channels))
        f.write(array.astype(RAW_DTYPES[1]).tobytes())


def load_dataset(source: str, fmt: Optional[str] = None,
                 raw_range: Tuple[float, float] = UNIT_RANGE) -> ImageDataset:
    """Dispatch to a loader; ``source`` may hold comma-separated CIFAR batches.

    ``raw_range`` is the declared range of ADT1 sources.
    """
    paths = [p.strip() for p in str(source).split(",") if p.strip()]
    if not paths:
        raise ConfigError("dataset.source is empty")
    if fmt is None:
        first = paths[0].lower()
        if "idx" in first or first.endswith("ubyte"):
            fmt = "idx"
        elif first.endswith(".bin"):
            fmt = "cifar"
        else:
            fmt = "raw"
    if fmt == "idx":
        return load_idx(paths[0])
    if fmt == "cifar":
        return load_cifar_binary(paths)
    if fmt == "raw":
        return load_raw_tensor(paths[0], raw_range)
    raise ConfigError(f"Unknown dataset format '{fmt}' (expected idx, cifar or raw)")


def rescale(dataset: ImageDataset, target_range: Tuple[float, float]) -> ImageDataset:
    """Affine map of the declared range onto ``target_range``."""
    lo, hi = dataset.value_range
    new_lo, new_hi = float(target_range[0]), float(target_range[1])
    if not hi > lo:
        raise ConfigError(f"degenerate source range [{lo}, {hi}]")
    if not new_hi > new_lo:
        raise ConfigError(f"degenerate target range [{new_lo}, {new_hi}]")
    if (lo, hi) == (new_lo, new_hi):
        return dataset
    images = dataset.as_float64()
    scaled = (images - lo) * ((new_hi - new_lo) / (hi - lo)) + new_lo
    scaled = np.clip(scaled, new_lo, new_hi)
    return dataset.with_images(scaled, value_range=(new_lo, new_hi))


def subset(dataset: ImageDataset, count: int, seed: int) -> ImageDataset:
    """Draw ``count`` distinct images with a seeded Philox generator."""
    if not 1 <= count <= dataset.count:
        raise ConfigError(f"subset count must be in [1, {dataset.count}], got {count}")
    rng = np.random.Generator(np.random.Philox(seed))
    index = rng.choice(dataset.count, size=count, replace=False)
    return dataset.with_images(np.asarray(dataset.images)[index])


def stencil_vector(stencil: np.ndarray, channels: int) -> np.ndarray:
    """Flatten an H x W stencil replicated over channels to a d-vector."""
    stencil = np.asarray(stencil, dtype=np.float64)
    return np.repeat(stencil[:, :, None], channels, axis=2).reshape(-1)


def inject_pattern(dataset: ImageDataset, spec: PerturbationSpec) -> ImageDataset:
    """Add gamma * c * s to every image, with one colour c ~ U[-1, 1]^C per image."""
    stencil = np.asarray(spec.stencil)
    if stencil.shape != (dataset.height, dataset.width):
        raise ConfigError(
            f"stencil shape {stencil.shape} does not match dataset "
            f"{dataset.height}x{dataset.width}"
        )
    if spec.gamma == 0:
        return dataset

    rng = np.random.Generator(np.random.Philox(spec.seed))
    colours = rng.uniform(-1.0, 1.0, size=(dataset.count, dataset.channels))
    n = dataset.count
    shaped = dataset.as_float64().reshape(n, dataset.height, dataset.width, dataset.channels)
    perturbed = shaped + spec.gamma * colours[:, None, None, :] * stencil[None, :, :, None]
    perturbed = perturbed.reshape(n, -1)

    if spec.clamp:
        lo, hi = dataset.value_range
        perturbed = np.clip(perturbed, lo, hi)
        return dataset.with_images(perturbed)

    # Unclamped output may leave the declared range; widen it accordingly.
    lo = min(dataset.value_range[0], float(perturbed.min()))
    hi = max(dataset.value_range[1], float(perturbed.max()))
    return dataset.with_images(perturbed, value_range=(lo, hi))
