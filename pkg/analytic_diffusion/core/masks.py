"""
Per-pixel binary masks and their file format.

A mask for output pixel q is the sorted list of input pixels entering the
masked distance of pixel q. Masks are stored per timestep and always
contain q itself.
"""
import logging
import os
import struct
from dataclasses import dataclass
from typing import Dict, Iterable, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse

from analytic_diffusion.core.numerics import freeze
from analytic_diffusion.errors import ConfigError, DataFormatError

logger = logging.getLogger(__name__)

MASK_MAGIC = b"ADMK"
_U32 = struct.Struct("<I")

PROVENANCE_SPECTRAL = "spectral"
PROVENANCE_EXTERNAL = "external"


def _validate_rows(rows: Sequence[np.ndarray], d: int, timestep: int) -> Tuple[np.ndarray, ...]:
    if len(rows) != d:
        raise ConfigError(f"timestep {timestep}: expected {d} masks, got {len(rows)}")
    checked = []
    for q, row in enumerate(rows):
        row = np.asarray(row, dtype=np.int64)
        if row.size and (row.min() < 0 or row.max() >= d):
            raise ConfigError(f"timestep {timestep}, pixel {q}: index outside [0, {d})")
        if np.unique(row).size != row.size:
            raise ConfigError(f"timestep {timestep}, pixel {q}: duplicate indices")
        if not np.isin(q, row):
            raise ConfigError(f"timestep {timestep}, pixel {q}: diagonal pixel absent")
        checked.append(freeze(np.sort(row)))
    return tuple(checked)


@dataclass(frozen=True)
class MaskSet:
    """Masks indexed by timestep, then by output pixel."""

    masks: Mapping[int, Tuple[np.ndarray, ...]]
    dim: int
    threshold: Optional[float] = None
    provenance: str = PROVENANCE_SPECTRAL

    def __post_init__(self):
        if not self.masks:
            raise ConfigError("mask set has no timesteps")
        checked = {
            int(t): _validate_rows(rows, self.dim, int(t))
            for t, rows in sorted(self.masks.items())
        }
        object.__setattr__(self, "masks", checked)

    @property
    def timesteps(self) -> Tuple[int, ...]:
        return tuple(self.masks)

    def rows(self, t: int) -> Tuple[np.ndarray, ...]:
        if t not in self.masks:
            raise ConfigError(
                f"mask set has no masks for timestep {t} (available: {list(self.masks)})"
            )
        return self.masks[t]

    def matrix(self, t: int) -> sparse.csr_matrix:
        """Mask rows as a sparse d x d 0/1 matrix (row q = mask of pixel q)."""
        rows = self.rows(t)
        indptr = np.zeros(self.dim + 1, dtype=np.int64)
        indptr[1:] = np.cumsum([r.size for r in rows])
        indices = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
        data = np.ones(indices.size, dtype=np.float64)
        return sparse.csr_matrix((data, indices, indptr), shape=(self.dim, self.dim))

    def sizes(self, t: int) -> np.ndarray:
        return np.array([r.size for r in self.rows(t)])

    def merged(self, other: "MaskSet") -> "MaskSet":
        if other.dim != self.dim:
            raise ConfigError("cannot merge mask sets of different dimension")
        masks = dict(self.masks)
        masks.update(other.masks)
        return MaskSet(masks=masks, dim=self.dim, threshold=self.threshold,
                       provenance=self.provenance)

    def equals(self, other: "MaskSet") -> bool:
        if self.dim != other.dim or self.timesteps != other.timesteps:
            return False
        return all(
            np.array_equal(a, b)
            for t in self.timesteps
            for a, b in zip(self.masks[t], other.masks[t])
        )


def binarize_rows(matrix: np.ndarray, tau: float) -> Tuple[np.ndarray, ...]:
    """Row-relative threshold: keep p where |m[q, p]| >= tau * max_p' |m[q, p']|.

    ``tau = 0`` keeps every pixel. For ``tau > 0`` exact zeros are never
    kept, so an all-zero row reduces to its diagonal. The diagonal is always
    included.
    """
    if not 0.0 <= tau <= 1.0:
        raise ConfigError(f"tau must lie in [0, 1], got {tau}")
    magnitude = np.abs(np.asarray(matrix, dtype=np.float64))
    if magnitude.ndim != 2 or magnitude.shape[0] != magnitude.shape[1]:
        raise ConfigError(f"expected a square matrix, got shape {magnitude.shape}")
    d = magnitude.shape[0]
    if tau == 0:
        full = np.arange(d)
        return tuple(full for _ in range(d))
    keep = magnitude >= tau * magnitude.max(axis=1, keepdims=True)
    keep &= magnitude > 0
    np.fill_diagonal(keep, True)
    return tuple(np.flatnonzero(row) for row in keep)


def full_masks(dim: int, timesteps: Iterable[int]) -> MaskSet:
    full = np.arange(dim)
    return MaskSet(
        masks={int(t): tuple(full for _ in range(dim)) for t in timesteps},
        dim=dim,
        threshold=0.0,
    )


def shared_kernel_masks(
    kernels: Mapping[int, np.ndarray],
    height: int,
    width: int,
    channels: int,
    tau: float,
) -> MaskSet:
    """Place one binarized spatial kernel at every output pixel.

    ``kernels`` maps a timestep to an odd-sided (kh, kw) sensitivity kernel
    centred on the output pixel, e.g. a field averaged over all pixels and
    noise samples. The kernel is thresholded relative to its max, clipped at
    the image border (no wrap) and applied across all channels.
    """
    if not 0.0 <= tau <= 1.0:
        raise ConfigError(f"tau must lie in [0, 1], got {tau}")
    d = height * width * channels
    masks: Dict[int, Tuple[np.ndarray, ...]] = {}
    for t, kernel in kernels.items():
        kernel = np.abs(np.asarray(kernel, dtype=np.float64))
        kh, kw = kernel.shape
        if kh % 2 == 0 or kw % 2 == 0:
            raise ConfigError(f"kernel for timestep {t} must have odd sides, got {kernel.shape}")
        keep = kernel >= tau * kernel.max() if tau > 0 else np.ones_like(kernel, dtype=bool)
        if tau > 0:
            keep &= kernel > 0
        keep[kh // 2, kw // 2] = True
        offsets = np.argwhere(keep) - np.array([kh // 2, kw // 2])

        rows = []
        for r in range(height):
            for c in range(width):
                rr = r + offsets[:, 0]
                cc = c + offsets[:, 1]
                inside = (rr >= 0) & (rr < height) & (cc >= 0) & (cc < width)
                spatial = (rr[inside] * width + cc[inside]) * channels
                pixels = (spatial[:, None] + np.arange(channels)[None, :]).reshape(-1)
                for ch in range(channels):
                    rows.append(pixels)
        masks[int(t)] = tuple(rows)
    logger.info(f"Built shared-kernel masks for {len(masks)} timesteps (d={d}, tau={tau})")
    return MaskSet(masks=masks, dim=d, threshold=tau, provenance=PROVENANCE_EXTERNAL)


def save_masks(maskset: MaskSet, path: str) -> None:
    """Write the ADMK format: magic, u32 entry count, then per entry
    u32 timestep, u32 d and d length-prefixed u32 index lists."""
    with open(path, "wb") as f:
        f.write(MASK_MAGIC)
        f.write(_U32.pack(len(maskset.timesteps)))
        for t in maskset.timesteps:
            f.write(_U32.pack(t))
            f.write(_U32.pack(maskset.dim))
            for row in maskset.masks[t]:
                f.write(_U32.pack(row.size))
                f.write(row.astype("<u4").tobytes())


def load_masks(path: str, provenance: str = PROVENANCE_EXTERNAL,
               threshold: Optional[float] = None) -> MaskSet:
    if not os.path.exists(path):
        raise ConfigError(f"Mask file {path} does not exist")
    with open(path, "rb") as f:
        raw = f.read()

    def read_u32(offset: int) -> int:
        if offset + 4 > len(raw):
            raise DataFormatError(f"{path}: truncated mask file", offset=len(raw))
        return _U32.unpack_from(raw, offset)[0]

    if raw[:4] != MASK_MAGIC:
        raise DataFormatError(f"{path}: bad mask magic {raw[:4]!r}", offset=0)
    entries = read_u32(4)
    if entries == 0:
        raise DataFormatError(f"{path}: empty timestep table", offset=4)

    offset = 8
    masks: Dict[int, Tuple[np.ndarray, ...]] = {}
    dim = None
    for _ in range(entries):
        t = read_u32(offset)
        d = read_u32(offset + 4)
        offset += 8
        if dim is None:
            dim = d
        elif d != dim:
            raise DataFormatError(f"{path}: inconsistent d {d} != {dim}", offset=offset - 4)
        if t in masks:
            raise DataFormatError(f"{path}: duplicate timestep {t}", offset=offset - 8)
        rows = []
        for q in range(d):
            length = read_u32(offset)
            offset += 4
            end = offset + 4 * length
            if end > len(raw):
                raise DataFormatError(f"{path}: truncated index list", offset=len(raw))
            row = np.frombuffer(raw, dtype="<u4", count=length, offset=offset).astype(np.int64)
            if not np.isin(q, row):
                raise DataFormatError(
                    f"{path}: timestep {t}, pixel {q}: diagonal pixel absent", offset=offset
                )
            rows.append(row)
            offset = end
        masks[t] = tuple(rows)
    if offset != len(raw):
        raise DataFormatError(f"{path}: trailing bytes after mask table", offset=offset)

    try:
        return MaskSet(masks=masks, dim=dim, threshold=threshold, provenance=provenance)
    except ConfigError as e:
        raise DataFormatError(f"{path}: {e}") from e
