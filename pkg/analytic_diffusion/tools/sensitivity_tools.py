"""
Sensitivity heatmaps of one output pixel across timesteps, for every
configured denoiser.
"""
import logging
import os
from typing import Any, Dict, List, Optional

import numpy as np

from analytic_diffusion.core.dataset import ImageDataset
from analytic_diffusion.core.denoisers import Denoiser, MaskedDenoiser, OptimalDenoiser, WienerDenoiser
from analytic_diffusion.core.schedule import NoiseSchedule, forward_noise
from analytic_diffusion.core.sensitivity import (
    MODE_JOINT,
    MODE_RAW,
    RENDER_MODES,
    SensitivityField,
    analytic_jacobian_masked,
    analytic_jacobian_optimal,
    average_fields,
    fd_jacobian,
    pixel_index,
    render_field,
    save_field_tensor,
    wiener_sensitivity,
)
from analytic_diffusion.errors import ConfigError
from analytic_diffusion.utils.config_utils import RunConfig
from analytic_diffusion.utils.experiment_utils import (
    build_denoisers,
    centre_pixel,
    make_schedule,
    prepare_dataset,
    sampler_grid,
    tool_response,
)
from analytic_diffusion.utils.file_utils import ensure_output_dir
from analytic_diffusion.utils.image_utils import export_map
from analytic_diffusion.utils.manifest_utils import build_manifest, input_digests, write_manifest

logger = logging.getLogger(__name__)

METHODS = ("analytic", "fd")


def evaluation_points(dataset: ImageDataset, t: int, sched: NoiseSchedule, count: int, seed: int) -> np.ndarray:
    """``count`` noised training images x_t, drawn with a Philox generator."""
    rng = np.random.Generator(np.random.Philox(seed))
    index = rng.choice(dataset.count, size=count, replace=count > dataset.count)
    eps = rng.standard_normal((count, dataset.dim))
    return forward_noise(dataset.as_float64()[index], eps, t, sched)


def field_at(denoiser: Denoiser, x: np.ndarray, t: int, pixels: List[int], method: str,
             step: float) -> SensitivityField:
    """Analytic Jacobian rows where a closed form exists, finite differences otherwise."""
    if method == "analytic":
        if isinstance(denoiser, OptimalDenoiser):
            return analytic_jacobian_optimal(denoiser.dataset, x, t, denoiser.schedule, pixels)
        if isinstance(denoiser, MaskedDenoiser):
            return analytic_jacobian_masked(denoiser.dataset, denoiser.masks, x, t, denoiser.schedule, pixels)
        if isinstance(denoiser, WienerDenoiser):
            return wiener_sensitivity(denoiser.model, t, denoiser.schedule, pixels)
        logger.info(f"{denoiser.name} has no analytic Jacobian; using finite differences")
    return fd_jacobian(denoiser, x, t, pixels, step)


def measure(denoiser: Denoiser, dataset: ImageDataset, t: int, pixels: List[int], config: RunConfig,
            method: str) -> SensitivityField:
    points = evaluation_points(dataset, t, denoiser.schedule, config["sensitivity.samples"],
                               config["sampler.seed"])
    fields = [field_at(denoiser, x, t, pixels, method, config["sensitivity.step"]) for x in points]
    return fields[0] if len(fields) == 1 else average_fields(fields)


def cmd_sensitivity(config: RunConfig) -> Dict[str, Any]:
    """Heatmaps (PGM) and raw row dumps (ADT1) of the field at sensitivity.pixel."""
    mode, method = config["sensitivity.mode"], config["sensitivity.method"]
    if mode not in RENDER_MODES:
        raise ConfigError(f"sensitivity.mode must be one of {', '.join(RENDER_MODES)}, got '{mode}'")
    if method not in METHODS:
        raise ConfigError(f"sensitivity.method must be one of {', '.join(METHODS)}, got '{method}'")
    if config["sensitivity.samples"] < 1:
        raise ConfigError("sensitivity.samples must be >= 1")
    out = ensure_output_dir(config["output.dir"])
    dataset = prepare_dataset(config)
    sched = make_schedule(config)
    timesteps = [sched.check(t) for t in (config["sensitivity.timesteps"] or sampler_grid(config, sched))]
    row, col = centre_pixel(config, dataset)
    pixels = [pixel_index(row, col, dataset.shape, ch) for ch in range(dataset.channels)]

    artifacts = []
    for label, denoiser in build_denoisers(config, dataset, sched, timesteps).items():
        directory = ensure_output_dir(os.path.join(out, label.replace("#", "_")))
        fields = {t: measure(denoiser, dataset, t, pixels, config, method) for t in timesteps}
        maps = {t: render_field(f, MODE_RAW if mode == MODE_JOINT else mode) for t, f in fields.items()}
        if mode == MODE_JOINT:
            peak = max(float(m.max()) for ms in maps.values() for m in ms)
            maps = {t: [m / peak if peak > 0 else m for m in ms] for t, ms in maps.items()}
        for t, field in fields.items():
            for ch, heat in enumerate(maps[t]):
                suffix = "" if dataset.channels == 1 else f"_c{ch}"
                artifacts.append(export_map(np.clip(heat, 0.0, 1.0),
                                            os.path.join(directory, f"sens_t{t:04d}{suffix}.pgm")))
            tensor_path = os.path.join(directory, f"sens_t{t:04d}.adt")
            save_field_tensor(field, tensor_path)
            artifacts.append(tensor_path)
        logger.info(f"{label}: sensitivity of pixel ({row}, {col}) at {len(timesteps)} timesteps")

    manifest = write_manifest(out, build_manifest(
        "sensitivity", config,
        seeds={"sampler": config["sampler.seed"], "dataset": config["dataset.seed"]},
        inputs=input_digests(config, ["dataset.source", "denoiser.mask_file"]),
        extra={"sensitivity.pixel_index": ",".join(map(str, pixels))},
    ))
    return {"artifacts": artifacts, "manifest": manifest, "pixel": [row, col], "timesteps": timesteps}


async def run_sensitivity(config_path: Optional[str] = None, overrides: Optional[dict] = None) -> str:
    """Render sensitivity fields of one output pixel for every configured denoiser.

    Args:
        config_path: Optional key=value run configuration file
        overrides: Optional mapping of configuration keys to values
    """
    return tool_response(cmd_sensitivity, config_path, overrides)
