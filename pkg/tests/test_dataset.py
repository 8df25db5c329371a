import struct
import sys
from pathlib import Path

import numpy as np
import pytest

from analytic_diffusion.core.dataset import (
    ImageDataset,
    PerturbationSpec,
    inject_pattern,
    load_cifar_binary,
    load_dataset,
    load_external_images,
    load_idx,
    load_raw_tensor,
    perturbation_scale,
    rescale,
    save_array_tensor,
    save_raw_tensor,
    stencil_vector,
    subset,
)
from analytic_diffusion.core.stencils import default_stencil, resample_stencil, w_raster
from analytic_diffusion.errors import ConfigError, DataFormatError
from conftest import make_dataset


def _make_idx(path: Path, pixels: np.ndarray) -> None:
    n, rows, cols = pixels.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">I3I", 0x00000803, n, rows, cols))
        f.write(pixels.astype(np.uint8).tobytes())


def _make_stencil(height: int, width: int, active) -> np.ndarray:
    stencil = np.zeros((height, width))
    for r, c in active:
        stencil[r, c] = 1.0
    return stencil


def test_idx_loader_scales_to_unit_range(tmp_path: Path):
    pixels = np.arange(2 * 3 * 4).reshape(2, 3, 4) * 10
    path = tmp_path / "images-idx3-ubyte"
    _make_idx(path, pixels)
    dataset = load_idx(str(path))
    assert dataset.shape == (3, 4, 1)
    assert dataset.count == 2
    assert dataset.value_range == (0.0, 1.0)
    np.testing.assert_allclose(dataset.images[1], pixels[1].reshape(-1) / 255.0)
    assert load_dataset(str(path)).count == 2


def test_idx_loader_reports_offsets(tmp_path: Path):
    path = tmp_path / "bad.idx"
    path.write_bytes(struct.pack(">I", 0x00000801) + bytes(12))
    with pytest.raises(DataFormatError) as info:
        load_idx(str(path))
    assert info.value.offset == 0

    truncated = tmp_path / "short.idx"
    truncated.write_bytes(struct.pack(">I3I", 0x00000803, 2, 2, 2) + bytes(5))
    with pytest.raises(DataFormatError, match="truncated"):
        load_idx(str(truncated))


def test_cifar_records_become_interleaved(tmp_path: Path):
    record = np.zeros(3073, dtype=np.uint8)
    record[1:1025] = 255  # red plane
    path = tmp_path / "data_batch_1.bin"
    path.write_bytes(record.tobytes())
    dataset = load_cifar_binary([str(path)])
    assert dataset.shape == (32, 32, 3)
    pixel = dataset.images[0].reshape(32, 32, 3)[5, 7]
    np.testing.assert_array_equal(pixel, [1.0, 0.0, 0.0])


def test_cifar_rejects_partial_record(tmp_path: Path):
    path = tmp_path / "broken.bin"
    path.write_bytes(bytes(3073 + 10))
    with pytest.raises(DataFormatError):
        load_cifar_binary([str(path)])


def test_raw_tensor_round_trip_keeps_dtype(tmp_path: Path):
    dataset = make_dataset(3, 2, 5, channels=3, seed=4, value_range=(0.0, 1.0))
    path = tmp_path / "t.adt"
    save_raw_tensor(dataset, str(path))
    loaded = load_raw_tensor(str(path), value_range=(0.0, 1.0))
    assert loaded.shape == (2, 5, 3)
    assert loaded.value_range == (0.0, 1.0)
    np.testing.assert_array_equal(loaded.images, dataset.images)


def test_raw_tensor_without_range_declares_its_extent(tmp_path: Path):
    images = np.array([[-0.5, 0.1, 0.9, 0.3]])
    path = tmp_path / "t.adt"
    save_array_tensor(images, 2, 2, 1, str(path))
    loaded = load_raw_tensor(str(path))
    assert loaded.value_range == (-0.5, 0.9)
    np.testing.assert_array_equal(loaded.images, images)
    # A declared range that the data violates is rejected, not clipped.
    with pytest.raises(ConfigError, match="outside the declared range"):
        load_raw_tensor(str(path), value_range=(0.0, 1.0))


def test_external_images_keep_working_range_values(tmp_path: Path):
    # Bright predictions with one overshooting pixel: nothing is stretched or clipped.
    rng = np.random.default_rng(5)
    images = rng.uniform(0.1, 0.9, size=(4, 16))
    images[2, 7] = 1.3
    path = tmp_path / "pred.adt"
    save_array_tensor(images, 4, 4, 1, str(path))
    loaded = load_external_images(str(path), (4, 4, 1), (-1.0, 1.0), (-1.0, 1.0))
    np.testing.assert_array_equal(loaded, images)
    assert np.mean((loaded - images) ** 2) == 0.0


def test_external_images_map_declared_range(tmp_path: Path):
    images = np.array([[0.0, 0.25, 1.0, 1.1]])
    path = tmp_path / "pred.adt"
    save_array_tensor(images, 2, 2, 1, str(path))
    loaded = load_external_images(str(path), (2, 2, 1), (0.0, 1.0), (-1.0, 1.0))
    np.testing.assert_allclose(loaded[0], [-1.0, -0.5, 1.0, 1.2])
    with pytest.raises(ConfigError, match="does not match"):
        load_external_images(str(path), (4, 1, 1), (0.0, 1.0), (-1.0, 1.0))
    with pytest.raises(ConfigError, match="degenerate"):
        load_external_images(str(path), (2, 2, 1), (1.0, 1.0), (-1.0, 1.0))


def test_raw_tensor_errors(tmp_path: Path):
    path = tmp_path / "bad.adt"
    path.write_bytes(b"XXXX" + bytes(20))
    with pytest.raises(DataFormatError) as info:
        load_raw_tensor(str(path))
    assert info.value.offset == 0

    dataset = make_dataset(2, 2, 2, value_range=(0.0, 1.0))
    good = tmp_path / "good.adt"
    save_raw_tensor(dataset, str(good))
    short = tmp_path / "short.adt"
    short.write_bytes(good.read_bytes()[:-3])
    with pytest.raises(DataFormatError, match="payload"):
        load_raw_tensor(str(short))
    with pytest.raises(ConfigError, match="does not exist"):
        load_raw_tensor(str(tmp_path / "missing.adt"))


def test_dataset_validates_range_and_shape():
    with pytest.raises(ConfigError, match="outside the declared range"):
        ImageDataset(images=np.full((1, 4), 1.5), height=2, width=2, channels=1)
    with pytest.raises(ConfigError, match="pixel count"):
        ImageDataset(images=np.zeros((1, 5)), height=2, width=2, channels=1)
    dataset = make_dataset(2, 2, 2)
    with pytest.raises(ValueError):
        dataset.images[0, 0] = 0.0


def test_rescale_maps_unit_to_working_range():
    dataset = ImageDataset(images=np.array([[0.0, 0.25, 1.0, 0.5]]), height=2, width=2, channels=1)
    working = rescale(dataset, (-1.0, 1.0))
    np.testing.assert_allclose(working.images[0], [-1.0, -0.5, 1.0, 0.0])
    assert working.value_range == (-1.0, 1.0)
    assert rescale(working, (-1.0, 1.0)) is working


def test_rescale_round_trip_is_lossless():
    dataset = make_dataset(8, 3, 3, channels=3, seed=6, value_range=(0.0, 1.0))
    back = rescale(rescale(dataset, (-1.0, 1.0)), (0.0, 1.0))
    assert back.value_range == (0.0, 1.0)
    np.testing.assert_allclose(back.images, dataset.images, rtol=0, atol=1e-12)


def test_subset_is_seeded_and_distinct():
    dataset = make_dataset(20, 2, 2, seed=1)
    a = subset(dataset, 5, seed=9)
    b = subset(dataset, 5, seed=9)
    np.testing.assert_array_equal(a.images, b.images)
    assert len({row.tobytes() for row in a.images}) == 5
    with pytest.raises(ConfigError):
        subset(dataset, 21, seed=0)


def test_perturbation_scale():
    spec = PerturbationSpec(stencil=_make_stencil(4, 4, [(0, 0), (1, 1), (2, 2), (3, 3)]), gamma=0.5)
    assert spec.norm == pytest.approx(2.0)
    assert perturbation_scale(spec) == pytest.approx(0.5 * 2.0 / np.sqrt(3.0))


def test_perturbation_spec_validation():
    with pytest.raises(ConfigError, match="0 or 1"):
        PerturbationSpec(stencil=np.full((2, 2), 0.5), gamma=0.1)
    with pytest.raises(ConfigError, match="no active pixel"):
        PerturbationSpec(stencil=np.zeros((2, 2)), gamma=0.1)
    with pytest.raises(ConfigError, match="gamma"):
        PerturbationSpec(stencil=np.ones((2, 2)), gamma=-1.0)


def test_inject_pattern_touches_only_the_stencil():
    dataset = ImageDataset(images=np.zeros((6, 3 * 3 * 3)), height=3, width=3, channels=3,
                           value_range=(-1.0, 1.0))
    stencil = _make_stencil(3, 3, [(0, 1), (2, 2)])
    injected = inject_pattern(dataset, PerturbationSpec(stencil=stencil, gamma=0.5, seed=2))
    images = injected.images.reshape(6, 3, 3, 3)
    assert not images[:, stencil == 0].any()
    # One colour per image: both stencil pixels carry the same RGB triple.
    np.testing.assert_array_equal(images[:, 0, 1], images[:, 2, 2])
    assert np.abs(images).max() <= 0.5
    assert inject_pattern(dataset, PerturbationSpec(stencil=stencil, gamma=0.0)) is dataset


def test_inject_pattern_unclamped_widens_range():
    dataset = ImageDataset(images=np.full((50, 4), 0.9), height=2, width=2, channels=1)
    spec = PerturbationSpec(stencil=np.ones((2, 2)), gamma=0.5, clamp=False, seed=0)
    injected = inject_pattern(dataset, spec)
    assert injected.value_range[1] > 1.0
    clamped = inject_pattern(dataset, PerturbationSpec(stencil=np.ones((2, 2)), gamma=0.5, seed=0))
    assert clamped.images.max() <= 1.0


def test_inject_pattern_colour_statistics():
    n = 10_000
    dataset = ImageDataset(images=np.zeros((n, 16)), height=4, width=4, channels=1,
                           value_range=(-1.0, 1.0))
    stencil = _make_stencil(4, 4, [(0, 0), (1, 2), (3, 3)])
    spec = PerturbationSpec(stencil=stencil, gamma=1.0, clamp=False, seed=8)
    images = inject_pattern(dataset, spec).images.reshape(n, 4, 4)
    # U[-1, 1] colours: per-pixel variance 1/3 on the stencil.
    for r, c in [(0, 0), (1, 2), (3, 3)]:
        assert images[:, r, c].var() == pytest.approx(1.0 / 3.0, abs=0.02)
    shift = np.linalg.norm(images.mean(axis=0))
    assert shift <= 3.0 * spec.gamma * spec.norm / np.sqrt(3.0 * n)


def test_stencil_vector_repeats_over_channels():
    vector = stencil_vector(_make_stencil(1, 2, [(0, 1)]), 3)
    np.testing.assert_array_equal(vector, [0, 0, 0, 1, 1, 1])


def test_default_stencil_is_binary_at_native_size():
    raster = w_raster()
    assert raster.shape == (28, 28)
    assert set(np.unique(raster)) == {0.0, 1.0}
    np.testing.assert_array_equal(default_stencil(28, 28), raster)
    assert resample_stencil(raster, 56, 56).sum() == pytest.approx(4 * raster.sum())


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
