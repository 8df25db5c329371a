import asyncio
import csv
import json
import sys
from pathlib import Path

import numpy as np
import pytest

from analytic_diffusion.core.dataset import load_raw_tensor, save_array_tensor
from analytic_diffusion.core.denoisers import OptimalDenoiser
from analytic_diffusion.core.masks import load_masks
from analytic_diffusion.core.sampler import ddim_sample_many, initial_noise
from analytic_diffusion.defaults import TAU_ABLATION_GRID
from analytic_diffusion.tools import (
    cmd_benchmark,
    cmd_masks,
    cmd_nn,
    cmd_perturb,
    cmd_sample,
    cmd_sensitivity,
    cmd_single_step,
    cmd_stats,
    run_stats,
)
from analytic_diffusion.tools.mask_tools import MASK_FILE
from analytic_diffusion.utils.config_utils import load_config
from analytic_diffusion.utils.experiment_utils import make_schedule, prepare_dataset
from analytic_diffusion.utils.image_utils import read_image
from analytic_diffusion.utils.manifest_utils import read_manifest


def _make_config(dataset_file: Path, out: Path, **overrides):
    values = {"dataset.source": str(dataset_file), "output.dir": str(out), "sampler.count": "4"}
    values.update({key.replace("__", "."): value for key, value in overrides.items()})
    return load_config(None, values)


def _read_csv(path: Path):
    with open(path, newline="") as f:
        return list(csv.reader(f))


def _file_bytes(directory: Path):
    return {
        p.relative_to(directory).as_posix(): p.read_bytes()
        for p in sorted(directory.rglob("*"))
        if p.is_file() and p.name != "manifest.txt"
    }


def test_stats_writes_spectrum_and_tables(tmp_path: Path, dataset_file: Path):
    result = cmd_stats(_make_config(dataset_file, tmp_path / "stats", sampler__steps="5"))
    out = tmp_path / "stats"
    assert result["rank"] == 11
    rows = _read_csv(out / "eigenvalues.csv")
    assert rows[0] == ["index", "eigenvalue"]
    assert len(rows) == 12
    values = [float(r[1]) for r in rows[1:]]
    assert values == sorted(values, reverse=True)
    snr_rows = _read_csv(out / "snr.csv")
    assert [r[0] for r in snr_rows[1:]] == ["1000", "800", "600", "400", "200"]
    assert read_image(str(out / "mean.pgm")).shape == (4, 4)
    manifest = read_manifest(str(out / "manifest.txt"))
    assert manifest["command"] == "stats"
    assert manifest["stats.rank"] == "11"
    assert manifest["input.dataset.source"]


def test_sample_every_denoiser_from_shared_noise(tmp_path: Path, dataset_file: Path):
    out = tmp_path / "sample"
    cmd_sample(_make_config(dataset_file, out, denoiser__kind="optimal,wiener,masked,patch",
                            denoiser__patch_size="3"))
    digests = set()
    for label in ("optimal", "wiener", "masked", "patch"):
        directory = out / label
        for k in range(4):
            assert read_image(str(directory / f"sample_{k:03d}.pgm")).shape == (4, 4)
        assert (directory / "grid.pgm").is_file()
        assert len(_read_csv(directory / "trajectory_nn.csv")) == 11
        digests.add(read_manifest(str(directory / "manifest.txt"))["initial_noise.sha256"])
    assert len(digests) == 1
    assert read_manifest(str(out / "manifest.txt"))["initial_noise.sha256"] in digests

    nn_rows = _read_csv(out / "optimal" / "nn.csv")
    assert nn_rows[0] == ["sample_id", "value", "index"]
    assert all(float(row[1]) < 1e-3 for row in nn_rows[1:5])


def test_sample_bytes_do_not_depend_on_thread_count(tmp_path: Path, dataset_file: Path, monkeypatch):
    monkeypatch.setenv("ADL_THREADS", "1")
    cmd_sample(_make_config(dataset_file, tmp_path / "one", denoiser__kind="optimal,masked"))
    monkeypatch.setenv("ADL_THREADS", "8")
    cmd_sample(_make_config(dataset_file, tmp_path / "eight", denoiser__kind="optimal,masked"))
    assert _file_bytes(tmp_path / "one") == _file_bytes(tmp_path / "eight")


def test_rerun_reproduces_manifest(tmp_path: Path, dataset_file: Path):
    config = _make_config(dataset_file, tmp_path / "run", sampler__count="2")
    first = Path(cmd_sample(config)["manifest"]).read_bytes()
    second = Path(cmd_sample(config)["manifest"]).read_bytes()
    assert first == second


def test_benchmark_identical_sources(tmp_path: Path, dataset_file: Path):
    out = tmp_path / "bench"
    result = cmd_benchmark(_make_config(dataset_file, out, denoiser__kind="optimal,optimal",
                                        sampler__steps="4"))
    r2 = _read_csv(out / "r2_optimal_0__optimal_1.csv")
    assert r2[-2] == ["mean", "1.0"]
    mse_rows = _read_csv(out / "mse_optimal_0__optimal_1.csv")
    assert mse_rows[-2] == ["mean", "0.0"]
    summary = _read_csv(out / "summary.csv")
    assert summary[0] == ["reference", "prediction", "metric", "mean", "std", "count"]
    assert len(summary) == 3
    assert [r[0] for r in _read_csv(out / "timings.csv")[1:]] == ["optimal#0", "optimal#1"]
    assert "seconds" not in (out / "manifest.txt").read_text()
    assert read_manifest(result["manifest"])["sources"] == "optimal#0,optimal#1"


def test_benchmark_against_external_predictions(tmp_path: Path, dataset_file: Path):
    predictions = tmp_path / "preds.adt"
    images = load_raw_tensor(str(dataset_file)).as_float64()[:4]
    save_array_tensor(images, 4, 4, 1, str(predictions))
    result = cmd_benchmark(_make_config(dataset_file, tmp_path / "bench", sampler__steps="4",
                                        benchmark__external=str(predictions)))
    assert {(p["reference"], p["prediction"]) for p in result["pairs"]} == {("optimal", "external#0")}


def test_benchmark_external_copy_of_samples_scores_zero(tmp_path: Path, dataset_file: Path):
    config = _make_config(dataset_file, tmp_path / "direct", sampler__steps="4")
    dataset = prepare_dataset(config)
    sched = make_schedule(config)
    denoiser = OptimalDenoiser(dataset, sched, config["denoiser.batch_size"])
    seed, count = config["sampler.seed"], config["sampler.count"]
    samples, _ = ddim_sample_many(denoiser, sched, 4, seed, count,
                                  noise=initial_noise(seed, count, dataset.dim))
    predictions = tmp_path / "preds.adt"
    save_array_tensor(samples, 4, 4, 1, str(predictions))

    out = tmp_path / "bench"
    cmd_benchmark(_make_config(dataset_file, out, sampler__steps="4",
                               benchmark__external=str(predictions)))
    assert _read_csv(out / "mse_optimal__external_0.csv")[-2] == ["mean", "0.0"]
    assert _read_csv(out / "r2_optimal__external_0.csv")[-2] == ["mean", "1.0"]


def test_zero_threshold_masks_drive_external_denoiser(tmp_path: Path, dataset_file: Path):
    masks_out = tmp_path / "masks"
    result = cmd_masks(_make_config(dataset_file, masks_out, denoiser__tau="0"))
    masks = load_masks(str(masks_out / MASK_FILE))
    assert masks.timesteps == tuple(sorted(result["timesteps"]))
    assert all(np.all(masks.sizes(t) == 16) for t in masks.timesteps)
    assert _read_csv(masks_out / "mask_sizes.csv")[1][1:] == ["16.0", "16", "16"]

    sample_out = tmp_path / "sample"
    cmd_sample(_make_config(dataset_file, sample_out, denoiser__kind="external-masked",
                            denoiser__mask_file=str(masks_out / MASK_FILE)))
    nn_rows = _read_csv(sample_out / "external-masked" / "nn.csv")
    assert all(float(row[1]) < 1e-3 for row in nn_rows[1:5])


def test_masks_from_shared_kernel(tmp_path: Path, dataset_file: Path):
    kernels = tmp_path / "kernels.adt"
    save_array_tensor(np.ones((2, 9)), 3, 3, 1, str(kernels))
    result = cmd_masks(_make_config(dataset_file, tmp_path / "masks", masks__timesteps="500,100",
                                    masks__kernel_file=str(kernels)))
    # Corners keep 4 pixels, edges 6, the interior 9.
    assert result["mean_sizes"][100] == pytest.approx(100 / 16)
    manifest = read_manifest(result["manifest"])
    assert manifest["masks.provenance"] == "external"


def test_perturb_without_pattern_matches_stats(tmp_path: Path, dataset_file: Path):
    stencil_file = tmp_path / "stencil.adt"
    stencil = np.zeros((4, 4))
    stencil[1, 1:3] = 1.0
    stencil[2, 2] = 1.0
    save_array_tensor(stencil.reshape(1, -1), 4, 4, 1, str(stencil_file))

    cmd_stats(_make_config(dataset_file, tmp_path / "stats"))
    result = cmd_perturb(_make_config(dataset_file, tmp_path / "perturb", perturb__gamma="0,0.5",
                                      perturb__stencil=str(stencil_file), sampler__steps="4"))
    assert (tmp_path / "perturb" / "gamma_0" / "eigenvalues.csv").read_bytes() == \
        (tmp_path / "stats" / "eigenvalues.csv").read_bytes()
    table = _read_csv(tmp_path / "perturb" / "gamma_0.5" / "perturbation.csv")
    assert table[0] == ["t", "sigma", "predicted_gain", "measured_gain", "stencil_overlap"]
    assert len(table) == 5
    assert result["stencil_pixel"] == [1, 1]
    assert result["gammas"]["0.5"]["lambda_w"] == pytest.approx(0.5)


def test_sensitivity_heatmaps(tmp_path: Path, dataset_file: Path):
    out = tmp_path / "sens"
    result = cmd_sensitivity(_make_config(dataset_file, out, denoiser__kind="optimal,wiener,patch",
                                          denoiser__patch_size="3", sensitivity__timesteps="500,100",
                                          sensitivity__mode="joint"))
    assert result["pixel"] == [2, 2]
    for label in ("optimal", "wiener", "patch"):
        for t in (500, 100):
            assert read_image(str(out / label / f"sens_t{t:04d}.pgm")).shape == (4, 4)
            assert load_raw_tensor(str(out / label / f"sens_t{t:04d}.adt")).count == 1


def test_nearest_neighbor_of_training_images(tmp_path: Path, dataset_file: Path):
    result = cmd_nn(_make_config(dataset_file, tmp_path / "nn", nn__image=str(dataset_file),
                                 external__range="0,1"))
    assert result["distances"] == [0.0] * 12
    assert result["indices"] == list(range(12))


def test_nearest_neighbor_query_in_working_range(tmp_path: Path, dataset_file: Path):
    working = prepare_dataset(_make_config(dataset_file, tmp_path / "prep")).as_float64()
    query = tmp_path / "query.adt"
    save_array_tensor(working[[5, 2, 9]], 4, 4, 1, str(query))
    result = cmd_nn(_make_config(dataset_file, tmp_path / "nn", nn__image=str(query)))
    assert result["distances"] == [0.0] * 3
    assert result["indices"] == [5, 2, 9]


def test_single_step_snaps_held_out_copies(tmp_path: Path, dataset_file: Path):
    working = prepare_dataset(_make_config(dataset_file, tmp_path / "prep")).as_float64()
    held_out = tmp_path / "held_out.adt"
    save_array_tensor(working[:3], 4, 4, 1, str(held_out))
    out = tmp_path / "single"
    result = cmd_single_step(_make_config(dataset_file, out, single_step__image=str(held_out),
                                          single_step__timesteps="1,500"))
    assert result["timesteps"] == [1, 500]
    assert result["results"]["optimal"][1]["nn"] < 1e-6
    assert result["results"]["optimal"][1]["mse"] < 1e-10
    rows = _read_csv(out / "single_step_optimal.csv")
    assert rows[0] == ["t", "sigma", "mse_mean", "mse_std", "nn_mean", "nn_std", "nn_index"]
    assert rows[1][0] == "1" and rows[1][-1] == "0 1 2"
    assert read_manifest(result["manifest"])["single_step.grid"] == "1,500"


def test_masks_threshold_ablation(tmp_path: Path, dataset_file: Path):
    out = tmp_path / "masks"
    cmd_masks(_make_config(dataset_file, out, masks__timesteps="500,100", masks__ablation="true"))
    rows = _read_csv(out / "tau_ablation.csv")
    assert rows[0] == ["tau", "t", "mean_size"]
    assert len(rows) == 1 + 2 * len(TAU_ABLATION_GRID)
    for t in ("100", "500"):
        sizes = [float(r[2]) for r in rows[1:] if r[1] == t]
        assert sizes == sorted(sizes, reverse=True)
    default = {r[0]: r[1] for r in _read_csv(out / "mask_sizes.csv")[1:]}
    at_default = {r[1]: r[2] for r in rows[1:] if float(r[0]) == 0.02}
    assert at_default == default


def test_tool_wrapper_reports_success_and_failure(tmp_path: Path, dataset_file: Path):
    ok = json.loads(asyncio.run(run_stats(None, {"dataset.source": str(dataset_file),
                                                 "output.dir": str(tmp_path / "s")})))
    assert ok["success"] is True
    assert ok["rank"] == 11
    failed = json.loads(asyncio.run(run_stats(None, {"dataset.source": str(tmp_path / "absent.adt")})))
    assert failed["success"] is False
    assert failed["exit_code"] == 2


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
