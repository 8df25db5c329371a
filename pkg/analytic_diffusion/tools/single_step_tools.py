"""
Single-step denoising of held-out images: does a denoiser pass its input
through, or snap it onto a training image?
"""
import csv
import logging
import os
from typing import Any, Dict, Optional

from analytic_diffusion.core.dataset import load_external_images
from analytic_diffusion.core.metrics import format_value
from analytic_diffusion.core.sampler import single_step_denoise
from analytic_diffusion.tools.benchmark_tools import external_range
from analytic_diffusion.utils.config_utils import RunConfig
from analytic_diffusion.utils.experiment_utils import (
    build_denoisers,
    make_schedule,
    prepare_dataset,
    sampler_grid,
    tool_response,
)
from analytic_diffusion.utils.file_utils import ensure_output_dir
from analytic_diffusion.utils.manifest_utils import build_manifest, input_digests, write_manifest

logger = logging.getLogger(__name__)

COLUMNS = ["t", "sigma", "mse_mean", "mse_std", "nn_mean", "nn_std", "nn_index"]


def cmd_single_step(config: RunConfig) -> Dict[str, Any]:
    """Noise single_step.image to each timestep once and denoise it with every configured denoiser."""
    out = ensure_output_dir(config["output.dir"])
    dataset = prepare_dataset(config)
    sched = make_schedule(config)
    timesteps = [sched.check(t) for t in config["single_step.timesteps"] or sampler_grid(config, sched)]
    images = load_external_images(config.require("single_step.image"), dataset.shape,
                                  external_range(config, dataset), dataset.value_range)
    seed = config["sampler.seed"]

    artifacts, summary = [], {}
    for label, denoiser in build_denoisers(config, dataset, sched, timesteps).items():
        path = os.path.join(out, f"single_step_{label.replace('#', '_')}.csv")
        rows = {}
        with open(path, "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(COLUMNS)
            for t in timesteps:
                result = single_step_denoise(denoiser, dataset, images, t, sched, seed)
                writer.writerow([
                    t, format_value(sched.sigma(t)),
                    format_value(result.mse.mean()), format_value(result.mse.std()),
                    format_value(result.nn_distances.mean()), format_value(result.nn_distances.std()),
                    " ".join(str(int(i)) for i in result.nn_indices),
                ])
                rows[t] = {"mse": float(result.mse.mean()), "nn": float(result.nn_distances.mean())}
        artifacts.append(path)
        summary[label] = rows
        logger.info(f"{label}: single-step results for {len(timesteps)} timesteps written to {path}")

    manifest = write_manifest(out, build_manifest(
        "single-step", config,
        seeds={"sampler": seed, "dataset": config["dataset.seed"]},
        inputs=input_digests(config, ["dataset.source", "denoiser.mask_file", "single_step.image"]),
        extra={"single_step.grid": ",".join(map(str, timesteps)), "denoisers": ",".join(summary)},
    ))
    return {"artifacts": artifacts, "manifest": manifest, "timesteps": timesteps, "results": summary}


async def run_single_step(config_path: Optional[str] = None, overrides: Optional[dict] = None) -> str:
    """Denoise noised held-out images in one step and report MSE and nearest-training-image distance.

    Args:
        config_path: Optional key=value run configuration file
        overrides: Optional mapping of configuration keys to values
    """
    return tool_response(cmd_single_step, config_path, overrides)
