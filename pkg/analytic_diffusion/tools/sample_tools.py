"""
DDIM sampling with every configured denoiser from one shared noise draw.
"""
import csv
import logging
import os
from typing import Any, Dict, List, Optional

from analytic_diffusion.core.dataset import ImageDataset
from analytic_diffusion.core.metrics import (
    MetricReport,
    format_value,
    nearest_neighbors,
    trajectory_metrics,
    write_metric_csv,
)
from analytic_diffusion.core.sampler import ddim_sample_many, initial_noise
from analytic_diffusion.utils.config_utils import RunConfig
from analytic_diffusion.utils.experiment_utils import (
    build_denoisers,
    make_schedule,
    prepare_dataset,
    sampler_grid,
    tool_response,
)
from analytic_diffusion.utils.file_utils import ensure_output_dir
from analytic_diffusion.utils.image_utils import export_grid, export_image, image_extension
from analytic_diffusion.utils.manifest_utils import array_digest, build_manifest, input_digests, write_manifest

logger = logging.getLogger(__name__)


def write_trajectory_series(reports: List[MetricReport], timesteps, path: str) -> str:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["step", "t", "mean", "std"])
        for k, (t, report) in enumerate(zip(timesteps, reports)):
            writer.writerow([k, t, format_value(report.mean), format_value(report.std)])
    return path


def save_samples(images, dataset: ImageDataset, directory: str) -> List[str]:
    ext = image_extension(dataset.channels)
    paths = [
        export_image(image, dataset.shape, os.path.join(directory, f"sample_{i:03d}{ext}"),
                     dataset.value_range)
        for i, image in enumerate(images)
    ]
    paths.append(export_grid(images, dataset.shape, os.path.join(directory, f"grid{ext}"),
                             dataset.value_range))
    return paths


def cmd_sample(config: RunConfig) -> Dict[str, Any]:
    """Sample sampler.count images per denoiser; all denoisers start from the same x_T."""
    out = ensure_output_dir(config["output.dir"])
    dataset = prepare_dataset(config)
    sched = make_schedule(config)
    grid = sampler_grid(config, sched)
    seed, count, steps = config["sampler.seed"], config["sampler.count"], config["sampler.steps"]
    noise = initial_noise(seed, count, dataset.dim)
    noise_digest = array_digest(noise)
    inputs = input_digests(config, ["dataset.source", "denoiser.mask_file"])

    artifacts, summary = [], {}
    for label, denoiser in build_denoisers(config, dataset, sched, grid).items():
        directory = ensure_output_dir(os.path.join(out, label.replace("#", "_")))
        images, trajectories = ddim_sample_many(denoiser, sched, steps, seed, count, noise=noise)
        artifacts += save_samples(images, dataset, directory)

        distances, indices = nearest_neighbors(dataset, images)
        report = MetricReport("nn_distance", distances, denoiser.descriptor)
        nn_path = os.path.join(directory, "nn.csv")
        write_metric_csv(report, nn_path, extra={"index": [int(i) for i in indices]})
        series = trajectory_metrics(trajectories, dataset=dataset, fingerprint=denoiser.descriptor)
        artifacts += [nn_path, write_trajectory_series(series, grid, os.path.join(directory, "trajectory_nn.csv"))]

        artifacts.append(write_manifest(directory, build_manifest(
            "sample", config,
            seeds={"sampler": seed, "dataset": config["dataset.seed"]},
            inputs=inputs,
            extra={
                "denoiser": label,
                "denoiser.descriptor": denoiser.descriptor,
                "initial_noise.sha256": noise_digest,
                "sampler.grid": ",".join(map(str, grid)),
            },
        )))
        summary[label] = {"nn_mean": report.mean, "nn_std": report.std}
        logger.info(f"{label}: {report.summary()}")

    manifest = write_manifest(out, build_manifest(
        "sample", config,
        seeds={"sampler": seed, "dataset": config["dataset.seed"]},
        inputs=inputs,
        extra={"initial_noise.sha256": noise_digest, "denoisers": ",".join(summary)},
    ))
    return {"artifacts": artifacts, "manifest": manifest, "nearest_neighbor": summary}


async def run_sample(config_path: Optional[str] = None, overrides: Optional[dict] = None) -> str:
    """Generate images with DDIM for every configured denoiser from a shared seed.

    Args:
        config_path: Optional key=value run configuration file
        overrides: Optional mapping of configuration keys to values
    """
    return tool_response(cmd_sample, config_path, overrides)
