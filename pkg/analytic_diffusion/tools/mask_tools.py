"""
Mask tables: spectral masks from dataset statistics, or shared-kernel masks
from an externally measured sensitivity kernel.
"""
import csv
import logging
import os
from typing import Any, Dict, Optional, Sequence

import numpy as np

from analytic_diffusion.core.dataset import ImageDataset, load_raw_tensor
from analytic_diffusion.core.masks import MaskSet, save_masks, shared_kernel_masks
from analytic_diffusion.core.metrics import format_value
from analytic_diffusion.core.spectral import SpectralModel, build_mask_table, fit
from analytic_diffusion.defaults import TAU_ABLATION_GRID
from analytic_diffusion.errors import ConfigError
from analytic_diffusion.utils.config_utils import RunConfig
from analytic_diffusion.utils.experiment_utils import make_schedule, prepare_dataset, sampler_grid, tool_response
from analytic_diffusion.utils.file_utils import ensure_output_dir
from analytic_diffusion.utils.manifest_utils import build_manifest, input_digests, write_manifest

logger = logging.getLogger(__name__)

MASK_FILE = "masks.admk"


def load_kernels(path: str, timesteps: Sequence[int]) -> Dict[int, np.ndarray]:
    """One (kh, kw) kernel per timestep from an ADT1 tensor of shape (len(timesteps), kh, kw, 1)."""
    tensor = load_raw_tensor(path)
    if tensor.channels != 1:
        raise ConfigError(f"kernel file {path} must have one channel, got {tensor.channels}")
    if tensor.count != len(timesteps):
        raise ConfigError(f"kernel file {path} holds {tensor.count} kernels for {len(timesteps)} timesteps")
    kernels = tensor.as_float64().reshape(tensor.count, tensor.height, tensor.width)
    return {int(t): kernels[k] for k, t in enumerate(timesteps)}


def write_mask_sizes(masks: MaskSet, path: str) -> str:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["t", "mean_size", "min_size", "max_size"])
        for t in masks.timesteps:
            sizes = masks.sizes(t)
            writer.writerow([t, format_value(sizes.mean()), int(sizes.min()), int(sizes.max())])
    return path


def build_config_masks(config: RunConfig, dataset: ImageDataset, timesteps: Sequence[int], sched,
                       tau: Optional[float] = None, model: Optional[SpectralModel] = None) -> MaskSet:
    """Kernel masks when masks.kernel_file is set, spectral masks otherwise.

    ``tau`` overrides masks.external_tau or denoiser.tau respectively.
    """
    kernel_file = config["masks.kernel_file"]
    if kernel_file:
        tau = config["masks.external_tau"] if tau is None else tau
        return shared_kernel_masks(load_kernels(kernel_file, timesteps), dataset.height,
                                   dataset.width, dataset.channels, tau)
    tau = config["denoiser.tau"] if tau is None else tau
    return build_mask_table(model or fit(dataset), timesteps, sched, tau)


def write_tau_ablation(config: RunConfig, dataset: ImageDataset, timesteps: Sequence[int], sched,
                       path: str) -> str:
    """Mean mask size for every threshold of TAU_ABLATION_GRID at every timestep."""
    model = None if config["masks.kernel_file"] else fit(dataset)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["tau", "t", "mean_size"])
        for tau in TAU_ABLATION_GRID:
            masks = build_config_masks(config, dataset, timesteps, sched, tau, model)
            for t in masks.timesteps:
                writer.writerow([format_value(tau), t, format_value(masks.sizes(t).mean())])
    logger.info(f"Threshold ablation over {len(TAU_ABLATION_GRID)} values written to {path}")
    return path


def cmd_masks(config: RunConfig) -> Dict[str, Any]:
    """Build masks for masks.timesteps (default: the sampler grid) and save them."""
    out = ensure_output_dir(config["output.dir"])
    dataset = prepare_dataset(config)
    sched = make_schedule(config)
    timesteps = config["masks.timesteps"] or sampler_grid(config, sched)
    timesteps = [sched.check(t) for t in timesteps]
    masks = build_config_masks(config, dataset, timesteps, sched)

    mask_path = os.path.join(out, MASK_FILE)
    save_masks(masks, mask_path)
    artifacts = [mask_path, write_mask_sizes(masks, os.path.join(out, "mask_sizes.csv"))]
    if config["masks.ablation"]:
        artifacts.append(write_tau_ablation(config, dataset, timesteps, sched,
                                            os.path.join(out, "tau_ablation.csv")))
    manifest = write_manifest(out, build_manifest(
        "masks", config,
        seeds={"dataset": config["dataset.seed"]},
        inputs=input_digests(config, ["dataset.source", "masks.kernel_file"]),
        extra={"masks.provenance": masks.provenance, "masks.threshold": masks.threshold},
    ))
    return {
        "artifacts": artifacts,
        "manifest": manifest,
        "timesteps": list(masks.timesteps),
        "mean_sizes": {t: float(masks.sizes(t).mean()) for t in masks.timesteps},
    }


async def run_masks(config_path: Optional[str] = None, overrides: Optional[dict] = None) -> str:
    """Build and save per-pixel binary masks.

    Args:
        config_path: Optional key=value run configuration file
        overrides: Optional mapping of configuration keys to values
    """
    return tool_response(cmd_masks, config_path, overrides)
