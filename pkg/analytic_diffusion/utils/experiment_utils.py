"""
Helpers shared by the experiment commands: dataset preparation, schedule
and denoiser construction from a RunConfig, and the JSON tool response.
"""
import json
import logging
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence

import numpy as np

from analytic_diffusion.core.dataset import ImageDataset, load_dataset, rescale, subset
from analytic_diffusion.core.denoisers import (
    Denoiser,
    ExternalMaskDenoiser,
    MaskedDenoiser,
    OptimalDenoiser,
    wiener_denoiser,
)
from analytic_diffusion.core.patches import PatchConfig, PatchDenoiser, kamb_patch_schedule
from analytic_diffusion.core.sampler import timestep_grid
from analytic_diffusion.core.schedule import NoiseSchedule, linear_schedule
from analytic_diffusion.core.spectral import SpectralModel, build_mask_table, fit
from analytic_diffusion.errors import ConfigError, LabError
from analytic_diffusion.utils.config_utils import RunConfig, load_config

logger = logging.getLogger(__name__)

DENOISER_KINDS = ("optimal", "wiener", "masked", "patch", "external-masked")


def prepare_dataset(config: RunConfig) -> ImageDataset:
    """Load dataset.source, draw dataset.subset images, rescale to dataset.range."""
    dataset = load_dataset(config.require("dataset.source"), config["dataset.format"],
                           config["dataset.raw_range"])
    count = config["dataset.subset"]
    if count is not None and count < dataset.count:
        dataset = subset(dataset, count, config["dataset.seed"])
    working = rescale(dataset, config["dataset.range"])
    logger.info(
        f"Working dataset: N={working.count}, {working.height}x{working.width}x{working.channels}, "
        f"range {working.value_range}"
    )
    return working


def make_schedule(config: RunConfig) -> NoiseSchedule:
    return linear_schedule(config["schedule.T"], config["schedule.beta_start"],
                           config["schedule.beta_end"])


def sampler_grid(config: RunConfig, sched: NoiseSchedule) -> List[int]:
    return timestep_grid(sched.T, config["sampler.steps"])


def patch_config(config: RunConfig, dataset: ImageDataset, sched: NoiseSchedule,
                 timesteps: Sequence[int]) -> PatchConfig:
    stride = config["denoiser.translation_stride"]
    if config["denoiser.patch_preset"]:
        return kamb_patch_schedule(config["denoiser.patch_preset"], sched.T, stride)
    if config["denoiser.patch_size"]:
        return PatchConfig(patch_sizes={int(t): config["denoiser.patch_size"] for t in timesteps},
                           translation_stride=stride)
    raise ConfigError("the patch denoiser needs denoiser.patch_preset or denoiser.patch_size")


def build_denoiser(kind: str, config: RunConfig, dataset: ImageDataset, sched: NoiseSchedule,
                   timesteps: Sequence[int], model: Optional[SpectralModel] = None) -> Denoiser:
    """Construct one configured denoiser; masks are built for ``timesteps``."""
    batch_size = config["denoiser.batch_size"]
    if kind == "optimal":
        return OptimalDenoiser(dataset, sched, batch_size)
    if kind == "wiener":
        return wiener_denoiser(model or fit(dataset), sched)
    if kind == "masked":
        masks = build_mask_table(model or fit(dataset), timesteps, sched, config["denoiser.tau"])
        return MaskedDenoiser(dataset, masks, sched, batch_size)
    if kind == "patch":
        return PatchDenoiser(dataset, patch_config(config, dataset, sched, timesteps), sched, batch_size)
    if kind == "external-masked":
        return ExternalMaskDenoiser.from_file(config.require("denoiser.mask_file"), dataset, sched,
                                              batch_size)
    raise ConfigError(f"Unknown denoiser kind '{kind}' (expected {', '.join(DENOISER_KINDS)})")


def build_denoisers(config: RunConfig, dataset: ImageDataset, sched: NoiseSchedule,
                    timesteps: Sequence[int]) -> Dict[str, Denoiser]:
    """All kinds in denoiser.kind, keyed by a unique label (repeated kinds get '#k')."""
    kinds = config.require("denoiser.kind")
    model = fit(dataset) if {"wiener", "masked"} & set(kinds) else None
    denoisers: Dict[str, Denoiser] = {}
    for k, kind in enumerate(kinds):
        label = kind if kinds.count(kind) == 1 else f"{kind}#{k}"
        denoisers[label] = build_denoiser(kind, config, dataset, sched, timesteps, model)
    return denoisers


def centre_pixel(config: RunConfig, dataset: ImageDataset):
    pixel = config["sensitivity.pixel"]
    if pixel is None:
        return dataset.height // 2, dataset.width // 2
    return pixel


def tool_response(command: Callable[[RunConfig], Dict[str, Any]], config_path: Optional[str] = None,
                  overrides: Optional[Mapping[str, Any]] = None) -> str:
    """Run ``command`` and wrap its result (or failure) as a JSON string."""
    try:
        config = load_config(config_path, overrides)
        result = command(config)
        return json.dumps({"success": True, **result}, indent=2, default=_jsonable)
    except LabError as e:
        logger.error(f"{command.__name__} failed: {e}")
        return json.dumps({"success": False, "error": str(e), "exit_code": e.exit_code})
    except Exception as e:
        logger.exception(f"{command.__name__} crashed")
        return json.dumps({"success": False, "error": f"Failed to run {command.__name__}: {str(e)}"})


def _jsonable(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    return str(value)
