"""
Covariance manipulation: inject a coloured stencil pattern into the dataset
and measure how the statistics and the Wiener sensitivity pick it up.
"""
import csv
import logging
import os
from typing import Any, Dict, Optional

import numpy as np

from analytic_diffusion.core.dataset import (
    ImageDataset,
    PerturbationSpec,
    inject_pattern,
    load_raw_tensor,
    perturbation_scale,
)
from analytic_diffusion.core.metrics import format_value
from analytic_diffusion.core.schedule import perturbation_sensitivity_ratio
from analytic_diffusion.core.sensitivity import (
    pixel_index,
    render_field,
    stencil_overlap,
    wiener_sensitivity,
)
from analytic_diffusion.core.spectral import SpectralModel, fit, projector_gain
from analytic_diffusion.core.stencils import default_stencil, resample_stencil
from analytic_diffusion.errors import ConfigError
from analytic_diffusion.tools.stats_tools import export_components, write_spectrum
from analytic_diffusion.utils.config_utils import RunConfig
from analytic_diffusion.utils.experiment_utils import make_schedule, prepare_dataset, sampler_grid, tool_response
from analytic_diffusion.utils.file_utils import ensure_output_dir
from analytic_diffusion.utils.image_utils import export_map, image_extension
from analytic_diffusion.utils.manifest_utils import build_manifest, input_digests, write_manifest

logger = logging.getLogger(__name__)


def load_stencil(config: RunConfig, dataset: ImageDataset) -> np.ndarray:
    """perturb.stencil (first image, channel 0, > 0.5) or the bundled W, at dataset resolution."""
    path = config["perturb.stencil"]
    if not path:
        return default_stencil(dataset.height, dataset.width)
    tensor = load_raw_tensor(path)
    first = tensor.as_float64()[0].reshape(tensor.height, tensor.width, tensor.channels)[:, :, 0]
    return resample_stencil((first > 0.5).astype(np.float64), dataset.height, dataset.width)


def stencil_pixel(stencil: np.ndarray):
    """Active stencil pixel closest to the image centre (first in raster order on ties)."""
    active = np.argwhere(stencil > 0)
    centre = (np.array(stencil.shape) - 1) / 2.0
    r, c = active[np.argmin(np.sum((active - centre) ** 2, axis=1))]
    return int(r), int(c)


def stencil_alignment(model: SpectralModel, stencil: np.ndarray, channels: int) -> float:
    """Norm of the top eigenvector's projection onto the per-channel stencil span."""
    if model.rank == 0:
        return 0.0
    unit = stencil.reshape(-1) / np.linalg.norm(stencil)
    top = model.eigvecs[:, 0].reshape(-1, channels)
    return float(np.sqrt(np.sum((unit @ top) ** 2)))


def channel_stencil_direction(stencil: np.ndarray, channels: int) -> np.ndarray:
    direction = np.zeros((stencil.size, channels))
    direction[:, 0] = stencil.reshape(-1)
    return direction.reshape(-1)


def cmd_perturb(config: RunConfig) -> Dict[str, Any]:
    """For each perturb.gamma: inject, refit, and compare measured gains with s_w(t)."""
    gammas = config.require("perturb.gamma")
    if any(g < 0 for g in gammas):
        raise ConfigError(f"perturb.gamma values must be >= 0, got {gammas}")
    out = ensure_output_dir(config["output.dir"])
    dataset = prepare_dataset(config)
    sched = make_schedule(config)
    grid = sampler_grid(config, sched)
    stencil = load_stencil(config, dataset)
    row, col = stencil_pixel(stencil)
    q = pixel_index(row, col, dataset.shape)
    direction = channel_stencil_direction(stencil, dataset.channels)
    ext = image_extension(dataset.channels)

    artifacts, summary = [], {}
    for gamma in gammas:
        spec = PerturbationSpec(stencil=stencil, gamma=gamma, seed=config["perturb.seed"],
                                clamp=config["perturb.clamp"])
        injected = inject_pattern(dataset, spec)
        model = fit(injected)
        lambda_w = perturbation_scale(spec)
        directory = ensure_output_dir(os.path.join(out, f"gamma_{gamma:g}"))
        artifacts += [
            write_spectrum(model, os.path.join(directory, "eigenvalues.csv")),
            export_components(model, config["stats.top_k"], os.path.join(directory, f"components{ext}")),
        ]

        table = os.path.join(directory, "perturbation.csv")
        with open(table, "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["t", "sigma", "predicted_gain", "measured_gain", "stencil_overlap"])
            for t in grid:
                field = wiener_sensitivity(model, t, sched, [q])
                heat = render_field(field)[0]
                overlap = stencil_overlap(field.rows[0], stencil, dataset.shape)
                writer.writerow([
                    t,
                    format_value(sched.sigma(t)),
                    format_value(perturbation_sensitivity_ratio(sched, t, lambda_w)),
                    format_value(projector_gain(model, t, sched, direction)),
                    format_value(overlap),
                ])
                artifacts.append(export_map(heat, os.path.join(directory, f"wiener_t{t:04d}.pgm")))
        artifacts.append(table)

        top = float(model.eigvals[0]) if model.rank else 0.0
        summary[f"{gamma:g}"] = {
            "lambda_w": lambda_w,
            "top_eigenvalue": top,
            "predicted_eigenvalue": lambda_w ** 2,
            "alignment": stencil_alignment(model, stencil, dataset.channels),
        }
        logger.info(f"gamma={gamma:g}: lambda_W={lambda_w:.4g}, top eigenvalue {top:.4g}")

    export_map(stencil, os.path.join(out, "stencil.pgm"))
    artifacts.append(os.path.join(out, "stencil.pgm"))
    manifest = write_manifest(out, build_manifest(
        "perturb", config,
        seeds={"perturb": config["perturb.seed"], "dataset": config["dataset.seed"]},
        inputs=input_digests(config, ["dataset.source", "perturb.stencil"]),
        extra={"perturb.pixel": f"{row},{col}"},
    ))
    return {"artifacts": artifacts, "manifest": manifest, "stencil_pixel": [row, col], "gammas": summary}


async def run_perturb(config_path: Optional[str] = None, overrides: Optional[dict] = None) -> str:
    """Inject the stencil pattern at each gamma and measure the resulting statistics.

    Args:
        config_path: Optional key=value run configuration file
        overrides: Optional mapping of configuration keys to values
    """
    return tool_response(cmd_perturb, config_path, overrides)
