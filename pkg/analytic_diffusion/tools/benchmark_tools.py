"""
Pairwise comparison of prediction sources, and nearest-training-image lookup.
"""
import csv
import logging
import os
import time
from itertools import combinations
from typing import Any, Dict, Optional, Tuple

import numpy as np

from analytic_diffusion.core.dataset import ImageDataset, load_external_images
from analytic_diffusion.core.metrics import MetricReport, format_value, mse, nearest_neighbors, r_squared, write_metric_csv
from analytic_diffusion.core.sampler import ddim_sample_many, initial_noise
from analytic_diffusion.errors import ConfigError
from analytic_diffusion.utils.config_utils import RunConfig
from analytic_diffusion.utils.experiment_utils import (
    build_denoisers,
    make_schedule,
    prepare_dataset,
    sampler_grid,
    tool_response,
)
from analytic_diffusion.utils.file_utils import ensure_output_dir
from analytic_diffusion.utils.manifest_utils import array_digest, build_manifest, input_digests, write_manifest

logger = logging.getLogger(__name__)


def external_range(config: RunConfig, dataset: ImageDataset) -> Tuple[float, float]:
    """Declared range of external tensors; the working range unless external.range says otherwise."""
    return config["external.range"] or dataset.value_range


def load_predictions(path: str, dataset: ImageDataset, count: int,
                     source_range: Tuple[float, float]) -> np.ndarray:
    """External predictions: an ADT1 tensor of ``count`` images matching the dataset shape."""
    images = load_external_images(path, dataset.shape, source_range, dataset.value_range)
    if len(images) != count:
        raise ConfigError(f"{path}: holds {len(images)} predictions, expected sampler.count = {count}")
    return images


def cmd_benchmark(config: RunConfig) -> Dict[str, Any]:
    """r^2 and MSE between every pair of sources sampled from the same initial noise."""
    out = ensure_output_dir(config["output.dir"])
    dataset = prepare_dataset(config)
    sched = make_schedule(config)
    grid = sampler_grid(config, sched)
    seed, count, steps = config["sampler.seed"], config["sampler.count"], config["sampler.steps"]
    external = config["benchmark.external"] or ()
    if len(config["denoiser.kind"] or ()) + len(external) < 2:
        raise ConfigError("benchmark needs at least two prediction sources (denoisers or external files)")
    noise = initial_noise(seed, count, dataset.dim)

    predictions: Dict[str, np.ndarray] = {}
    timings: Dict[str, float] = {}
    for label, denoiser in build_denoisers(config, dataset, sched, grid).items():
        start = time.perf_counter()
        predictions[label], _ = ddim_sample_many(denoiser, sched, steps, seed, count, noise=noise)
        timings[label] = time.perf_counter() - start
    for k, path in enumerate(external):
        predictions[f"external#{k}"] = load_predictions(path, dataset, count, external_range(config, dataset))

    artifacts, pairs = [], []
    for a, b in combinations(predictions, 2):
        tag = f"{a}__{b}".replace("#", "_")
        fingerprint = f"{a} vs {b}"
        reports = {
            "mse": mse(predictions[a], predictions[b], fingerprint),
            "r2": r_squared(predictions[b], predictions[a], fingerprint),
        }
        for name, report in reports.items():
            path = os.path.join(out, f"{name}_{tag}.csv")
            write_metric_csv(report, path)
            artifacts.append(path)
            pairs.append((a, b, name, report))

    summary_path = os.path.join(out, "summary.csv")
    with open(summary_path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["reference", "prediction", "metric", "mean", "std", "count"])
        for a, b, name, report in pairs:
            writer.writerow([a, b, name, format_value(report.mean), format_value(report.std), report.count])
    timing_path = os.path.join(out, "timings.csv")
    with open(timing_path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["denoiser", "seconds"])
        for label, seconds in timings.items():
            writer.writerow([label, f"{seconds:.3f}"])
    artifacts += [summary_path, timing_path]

    manifest = write_manifest(out, build_manifest(
        "benchmark", config,
        seeds={"sampler": seed, "dataset": config["dataset.seed"]},
        inputs=input_digests(config, ["dataset.source", "denoiser.mask_file", "benchmark.external"]),
        extra={"initial_noise.sha256": array_digest(noise), "sources": ",".join(predictions)},
    ))
    return {
        "artifacts": artifacts,
        "manifest": manifest,
        "pairs": [
            {"reference": a, "prediction": b, "metric": name, "mean": r.mean, "std": r.std}
            for a, b, name, r in pairs
        ],
        "timings": timings,
    }


def cmd_nn(config: RunConfig) -> Dict[str, Any]:
    """Nearest training image of every image in nn.image."""
    out = ensure_output_dir(config["output.dir"])
    dataset = prepare_dataset(config)
    images = load_external_images(config.require("nn.image"), dataset.shape,
                                  external_range(config, dataset), dataset.value_range)
    distances, indices = nearest_neighbors(dataset, images)
    report = MetricReport("nn_distance", distances, f"N={dataset.count}")
    path = os.path.join(out, "nn.csv")
    write_metric_csv(report, path, extra={"index": [int(i) for i in indices]})
    manifest = write_manifest(out, build_manifest(
        "nn", config,
        seeds={"dataset": config["dataset.seed"]},
        inputs=input_digests(config, ["dataset.source", "nn.image"]),
    ))
    return {
        "artifacts": [path],
        "manifest": manifest,
        "distances": [float(d) for d in distances],
        "indices": [int(i) for i in indices],
    }


async def run_benchmark(config_path: Optional[str] = None, overrides: Optional[dict] = None) -> str:
    """Compare configured denoisers (and external prediction files) pairwise with r² and MSE.

    Args:
        config_path: Optional key=value run configuration file
        overrides: Optional mapping of configuration keys to values
    """
    return tool_response(cmd_benchmark, config_path, overrides)


async def run_nearest_neighbor(config_path: Optional[str] = None, overrides: Optional[dict] = None) -> str:
    """Find the closest training image for each image of a tensor file.

    Args:
        config_path: Optional key=value run configuration file
        overrides: Optional mapping of configuration keys to values
    """
    return tool_response(cmd_nn, config_path, overrides)
