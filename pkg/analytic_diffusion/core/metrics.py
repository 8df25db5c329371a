"""
Comparison metrics: MSE, r^2, nearest-training-image distance and their
per-step series along sampling trajectories.
"""
import csv
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from analytic_diffusion.core.dataset import ImageDataset
from analytic_diffusion.core.numerics import freeze, require_finite
from analytic_diffusion.defaults import DEFAULT_BATCH_SIZE
from analytic_diffusion.errors import ConfigError, NumericalError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MetricReport:
    """Per-sample values of one metric with their mean and population std."""

    name: str
    values: np.ndarray
    fingerprint: str = ""

    def __post_init__(self):
        values = np.atleast_1d(np.asarray(self.values, dtype=np.float64))
        if values.ndim != 1 or values.size < 1:
            raise ConfigError(f"metric '{self.name}' needs at least one value")
        require_finite(values, f"metric '{self.name}'")
        object.__setattr__(self, "values", freeze(values))

    @property
    def count(self) -> int:
        return int(self.values.size)

    @property
    def mean(self) -> float:
        return float(self.values.mean())

    @property
    def std(self) -> float:
        return float(self.values.std())

    def summary(self) -> str:
        return f"{self.name}: {self.mean:.6g} +/- {self.std:.6g} (n={self.count})"


def _paired(a, b) -> Tuple[np.ndarray, np.ndarray]:
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape != b.shape:
        raise ConfigError(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b


def mse(a, b, fingerprint: str = "") -> MetricReport:
    a, b = _paired(a, b)
    return MetricReport("mse", np.mean((a - b) ** 2, axis=1), fingerprint)


def r_squared(pred, ref, fingerprint: str = "") -> MetricReport:
    """1 - ||pred - ref||^2 / ||ref - mean(ref)||^2 per sample, mean taken over the sample's pixels."""
    pred, ref = _paired(pred, ref)
    residual = np.sum((pred - ref) ** 2, axis=1)
    spread = np.sum((ref - ref.mean(axis=1, keepdims=True)) ** 2, axis=1)
    constant = np.flatnonzero(spread == 0)
    if constant.size:
        raise NumericalError(f"undefined r²: reference sample {int(constant[0])} is constant")
    return MetricReport("r2", 1.0 - residual / spread, fingerprint)


def _unit_scale(dataset: ImageDataset):
    lo, hi = dataset.value_range
    if not hi > lo:
        raise ConfigError(f"degenerate dataset range [{lo}, {hi}]")
    return lo, hi - lo


def nearest_neighbor_distance(dataset: ImageDataset, img) -> Tuple[float, int]:
    """(||img - x0_i||_2 / sqrt(d), i) for the closest training image, on [0, 1] pixels.

    ``img`` is read in the dataset's declared range. Ties go to the lowest index.
    """
    img = np.asarray(img, dtype=np.float64).reshape(-1)
    if img.size != dataset.dim:
        raise ConfigError(f"image has {img.size} pixels, dataset images have {dataset.dim}")
    lo, width = _unit_scale(dataset)
    target = (img - lo) / width
    best, best_index = np.inf, -1
    for start in range(0, dataset.count, DEFAULT_BATCH_SIZE):
        block = (np.asarray(dataset.images[start:start + DEFAULT_BATCH_SIZE], dtype=np.float64) - lo) / width
        dist = np.sum((block - target) ** 2, axis=1)
        k = int(np.argmin(dist))
        if dist[k] < best:
            best, best_index = float(dist[k]), start + k
    return float(np.sqrt(best / dataset.dim)), best_index


def nearest_neighbors(dataset: ImageDataset, images) -> Tuple[np.ndarray, np.ndarray]:
    images = np.atleast_2d(np.asarray(images, dtype=np.float64))
    found = [nearest_neighbor_distance(dataset, img) for img in images]
    return np.array([d for d, _ in found]), np.array([i for _, i in found], dtype=np.int64)


def trajectory_metrics(trajectories, others=None, dataset: Optional[ImageDataset] = None,
                       fingerprint: str = "") -> List[MetricReport]:
    """One report per grid step.

    With ``others``: MSE between the x0 predictions of paired trajectories.
    With ``dataset``: nearest-training-image distance of each x0 prediction.
    """
    trajectories = _as_list(trajectories)
    if (others is None) == (dataset is None):
        raise ConfigError("trajectory_metrics needs exactly one of a second trajectory set or a dataset")
    grid = trajectories[0].timesteps
    if any(tr.timesteps != grid for tr in trajectories):
        raise ConfigError("trajectories use different timestep grids")

    reports = []
    if others is not None:
        others = _as_list(others)
        if len(others) != len(trajectories):
            raise ConfigError(f"{len(trajectories)} trajectories vs {len(others)} to compare")
        if any(tr.timesteps != grid for tr in others):
            raise ConfigError("trajectory grids do not match")
        for k, t in enumerate(grid):
            a = np.stack([tr.x0_preds[k] for tr in trajectories])
            b = np.stack([tr.x0_preds[k] for tr in others])
            report = mse(a, b, fingerprint)
            reports.append(MetricReport(f"mse@t={t}", report.values, fingerprint))
    else:
        for k, t in enumerate(grid):
            dist, _ = nearest_neighbors(dataset, np.stack([tr.x0_preds[k] for tr in trajectories]))
            reports.append(MetricReport(f"nn@t={t}", dist, fingerprint))
    return reports


def _as_list(trajectories) -> list:
    if hasattr(trajectories, "timesteps"):
        return [trajectories]
    trajectories = list(trajectories)
    if not trajectories:
        raise ConfigError("no trajectories given")
    return trajectories


def format_value(value: float) -> str:
    """Shortest round-tripping text for a float, so CSVs are byte-reproducible."""
    return repr(float(value))


def write_metric_csv(report: MetricReport, path: str,
                     sample_ids: Optional[Sequence] = None, extra: Optional[dict] = None) -> None:
    """Columns sample_id,value (plus ``extra`` columns), then ``mean`` and ``std`` rows."""
    ids = list(sample_ids) if sample_ids is not None else list(range(report.count))
    if len(ids) != report.count:
        raise ConfigError(f"{len(ids)} sample ids for {report.count} values")
    extra = extra or {}
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["sample_id", "value", *extra])
        for k, (sid, value) in enumerate(zip(ids, report.values)):
            writer.writerow([sid, format_value(value), *(col[k] for col in extra.values())])
        writer.writerow(["mean", format_value(report.mean), *("" for _ in extra)])
        writer.writerow(["std", format_value(report.std), *("" for _ in extra)])
    logger.info(f"Wrote {report.summary()} to {path}")
