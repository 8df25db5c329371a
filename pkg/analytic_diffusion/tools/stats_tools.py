"""
Dataset statistics: eigenvalue spectrum, principal component images and
the per-timestep SNR table.
"""
import csv
import logging
import os
from typing import Any, Dict, Optional

import numpy as np

from analytic_diffusion.core.metrics import format_value
from analytic_diffusion.core.spectral import SpectralModel, fit, shrinkage, snr, top_component_images
from analytic_diffusion.core.schedule import NoiseSchedule
from analytic_diffusion.utils.config_utils import RunConfig
from analytic_diffusion.utils.experiment_utils import make_schedule, prepare_dataset, sampler_grid, tool_response
from analytic_diffusion.utils.file_utils import ensure_output_dir
from analytic_diffusion.utils.image_utils import export_grid, export_image, image_extension
from analytic_diffusion.utils.manifest_utils import build_manifest, input_digests, write_manifest

logger = logging.getLogger(__name__)


def write_spectrum(model: SpectralModel, path: str) -> str:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["index", "eigenvalue"])
        for i, v in enumerate(model.eigvals):
            writer.writerow([i, format_value(v)])
    return path


def write_snr_table(model: SpectralModel, sched: NoiseSchedule, timesteps, top_k: int, path: str) -> str:
    """One row per timestep: alpha_bar, the leading SNRs and trace(S_t)."""
    k = min(top_k, model.rank)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["t", "alpha_bar", *(f"snr_{i}" for i in range(k)), "projector_trace"])
        for t in timesteps:
            ratios = snr(model, t, sched)[:k]
            trace = float(np.sum(shrinkage(model, t, sched)))
            writer.writerow([t, format_value(sched.alpha_bar(t)), *map(format_value, ratios),
                             format_value(trace)])
    return path


def export_components(model: SpectralModel, top_k: int, path: str) -> str:
    """Top eigenvectors, each scaled to its own max |value| and shown on [-1, 1]."""
    vectors = top_component_images(model, min(top_k, model.rank))
    peaks = np.abs(vectors).max(axis=1, keepdims=True)
    scaled = np.divide(vectors, peaks, out=np.zeros_like(vectors), where=peaks > 0)
    return export_grid(scaled, model.shape, path, (-1.0, 1.0))


def cmd_stats(config: RunConfig) -> Dict[str, Any]:
    """Fit the spectral model and write spectrum, SNR table, component and mean images."""
    out = ensure_output_dir(config["output.dir"])
    dataset = prepare_dataset(config)
    sched = make_schedule(config)
    model = fit(dataset)
    top_k = config["stats.top_k"]
    ext = image_extension(dataset.channels)

    artifacts = [
        write_spectrum(model, os.path.join(out, "eigenvalues.csv")),
        write_snr_table(model, sched, sampler_grid(config, sched), top_k, os.path.join(out, "snr.csv")),
        export_components(model, top_k, os.path.join(out, f"components{ext}")),
        export_image(model.mean, dataset.shape, os.path.join(out, f"mean{ext}"), dataset.value_range),
    ]
    manifest = write_manifest(out, build_manifest(
        "stats", config,
        seeds={"dataset": config["dataset.seed"]},
        inputs=input_digests(config, ["dataset.source"]),
        extra={"stats.rank": model.rank},
    ))
    logger.info(f"stats: rank {model.rank}, top eigenvalue {model.eigvals[0] if model.rank else 0.0:.6g}")
    return {
        "artifacts": artifacts,
        "manifest": manifest,
        "rank": model.rank,
        "top_eigenvalues": [float(v) for v in model.eigvals[:top_k]],
    }


async def run_stats(config_path: Optional[str] = None, overrides: Optional[dict] = None) -> str:
    """Fit dataset statistics and write the spectrum artifacts.

    Args:
        config_path: Optional key=value run configuration file
        overrides: Optional mapping of configuration keys to values
    """
    return tool_response(cmd_stats, config_path, overrides)
