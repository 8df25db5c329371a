import sys

import numpy as np
import pytest

from analytic_diffusion.core.dataset import ImageDataset, stencil_vector
from analytic_diffusion.core.denoisers import MaskedDenoiser, OptimalDenoiser, WienerDenoiser
from analytic_diffusion.core.masks import MaskSet
from analytic_diffusion.core.schedule import NoiseSchedule
from analytic_diffusion.core.sensitivity import (
    SensitivityField,
    analytic_jacobian_masked,
    analytic_jacobian_optimal,
    average_fields,
    centered_kernel,
    eps_sensitivity,
    fd_jacobian,
    fd_richardson,
    pixel_index,
    render_field,
    stencil_overlap,
    wiener_sensitivity,
)
from analytic_diffusion.core.spectral import SpectralModel, fit
from analytic_diffusion.errors import ConfigError
from conftest import make_dataset, timestep_for_sigma

SIGMAS = (0.1, 0.5, 0.9)


def _make_clustered_dataset(seed: int = 0) -> ImageDataset:
    """Four 2x3 images close to one another so that softmax weights stay mixed."""
    rng = np.random.default_rng(seed)
    base = rng.uniform(-0.5, 0.5, 6)
    images = base + 0.05 * rng.standard_normal((4, 6))
    return ImageDataset(images=images, height=2, width=3, channels=1, value_range=(-1.0, 1.0))


def _relative_error(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


def test_optimal_jacobian_matches_finite_differences(schedule):
    dataset = _make_clustered_dataset()
    denoiser = OptimalDenoiser(dataset, schedule)
    rng = np.random.default_rng(1)
    for sigma in SIGMAS:
        t = timestep_for_sigma(schedule, sigma)
        x = np.sqrt(schedule.alpha_bar(t)) * dataset.images[0] + 0.5 * sigma * rng.standard_normal(6)
        analytic = analytic_jacobian_optimal(dataset, x, t, schedule)
        numeric = fd_jacobian(denoiser, x, t)
        assert _relative_error(analytic.rows, numeric.rows) < 1e-4


def test_masked_jacobian_matches_finite_differences(schedule):
    dataset = _make_clustered_dataset(seed=2)
    rows = [np.array([0, 1]), np.array([1, 2, 4]), np.array([2]),
            np.array([0, 3, 4]), np.array([4, 5]), np.array([1, 2, 5])]
    rng = np.random.default_rng(3)
    for sigma in SIGMAS:
        t = timestep_for_sigma(schedule, sigma)
        masks = MaskSet(masks={t: tuple(rows)}, dim=6, threshold=None)
        denoiser = MaskedDenoiser(dataset, masks, schedule)
        x = np.sqrt(schedule.alpha_bar(t)) * dataset.images[1] + 0.5 * sigma * rng.standard_normal(6)
        analytic = analytic_jacobian_masked(dataset, masks, x, t, schedule)
        numeric = fd_jacobian(denoiser, x, t)
        assert _relative_error(analytic.rows, numeric.rows) < 1e-4
        # Row q is zero outside its mask.
        assert not analytic.rows[2, [0, 1, 3, 4, 5]].any()


def test_wiener_sensitivity_matches_finite_differences(schedule):
    model = fit(make_dataset(20, 2, 3, seed=4))
    denoiser = WienerDenoiser(model, schedule)
    x = np.random.default_rng(5).standard_normal(6)
    for sigma in SIGMAS:
        t = timestep_for_sigma(schedule, sigma)
        assert _relative_error(wiener_sensitivity(model, t, schedule).rows,
                               fd_richardson(denoiser, x, t).rows) < 1e-6


def test_optimal_jacobian_is_symmetric_psd(schedule):
    dataset = make_dataset(10, 3, 3, seed=6)
    t = timestep_for_sigma(schedule, 0.5)
    x = np.random.default_rng(6).standard_normal(9)
    rows = analytic_jacobian_optimal(dataset, x, t, schedule).rows
    np.testing.assert_allclose(rows, rows.T, atol=1e-12)
    assert np.linalg.eigvalsh((rows + rows.T) / 2).min() >= -1e-8


def test_selected_pixels_pick_rows(schedule, small_dataset):
    x = np.zeros(small_dataset.dim)
    full = analytic_jacobian_optimal(small_dataset, x, 500, schedule)
    part = analytic_jacobian_optimal(small_dataset, x, 500, schedule, pixels=[3, 7])
    np.testing.assert_allclose(part.rows, full.rows[[3, 7]])
    np.testing.assert_array_equal(part.row(7), part.rows[1])
    with pytest.raises(ConfigError):
        analytic_jacobian_optimal(small_dataset, x, 500, schedule, pixels=[99])


def test_eps_sensitivity_conversion(schedule, small_dataset):
    model = fit(small_dataset)
    field = wiener_sensitivity(model, 300, schedule, pixels=[0, 5])
    eps = eps_sensitivity(field, schedule)
    assert eps.kind == "eps"
    identity = np.eye(small_dataset.dim)[[0, 5]]
    expected = (identity - np.sqrt(schedule.alpha_bar(300)) * field.rows) / schedule.sigma(300)
    np.testing.assert_allclose(eps.rows, expected)
    with pytest.raises(ConfigError):
        eps_sensitivity(eps, schedule)


def test_render_modes():
    rows = np.array([[2.0, 0.0], [0.0, 4.0], [0.0, 0.0]])
    field = SensitivityField(rows=rows, pixels=(0, 1, 0), shape=(1, 2, 1), t=1)
    per_image = render_field(field, "per-image")
    np.testing.assert_array_equal(per_image[0], [[1.0, 0.0]])
    np.testing.assert_array_equal(per_image[1], [[0.0, 1.0]])
    np.testing.assert_array_equal(per_image[2], [[0.0, 0.0]])
    joint = render_field(field, "joint")
    np.testing.assert_array_equal(joint[0], [[0.5, 0.0]])
    np.testing.assert_array_equal(render_field(field, "raw")[1], [[0.0, 4.0]])
    with pytest.raises(ConfigError):
        render_field(field, "log")


def test_average_fields_takes_magnitudes():
    a = SensitivityField(rows=np.array([[1.0, -2.0]]), pixels=(0,), shape=(1, 2, 1), t=3)
    b = SensitivityField(rows=np.array([[-3.0, 0.0]]), pixels=(0,), shape=(1, 2, 1), t=3)
    np.testing.assert_array_equal(average_fields([a, b]).rows, [[2.0, 1.0]])
    c = SensitivityField(rows=np.array([[1.0, 0.0]]), pixels=(0,), shape=(1, 2, 1), t=4)
    with pytest.raises(ConfigError):
        average_fields([a, c])


def test_stencil_overlap_and_pixel_index():
    stencil = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert stencil_overlap(np.array([1.0, 0.0, 0.0, -1.0]), stencil, (2, 2, 1)) == pytest.approx(1.0)
    assert stencil_overlap(np.array([1.0, 1.0, 1.0, 1.0]), stencil, (2, 2, 1)) == pytest.approx(0.5)
    assert stencil_overlap(np.zeros(4), stencil, (2, 2, 1)) == 0.0
    assert pixel_index(1, 2, (3, 4, 3), channel=1) == 19
    with pytest.raises(ConfigError):
        pixel_index(3, 0, (3, 4, 1))


def test_centered_kernel_of_identity_is_a_delta():
    field = SensitivityField(rows=np.eye(9), pixels=tuple(range(9)), shape=(3, 3, 1), t=1)
    kernel = centered_kernel(field)
    assert kernel.shape == (5, 5)
    expected = np.zeros((5, 5))
    expected[2, 2] = 1.0
    np.testing.assert_allclose(kernel, expected)
    assert centered_kernel(field, radius=1).shape == (3, 3)


def test_injected_pattern_shows_up_only_below_its_scale():
    """A rank-one pattern of scale lambda_W dominates stencil-pixel sensitivity only when sigma << lambda_W."""
    h = w = 8
    stencil = np.zeros((h, w))
    stencil[[1, 2, 3, 4, 4, 3, 2, 1], [1, 2, 3, 4, 5, 6, 6, 6]] = 1.0
    s_hat = stencil_vector(stencil, 1) / np.sqrt(stencil.sum())
    u_hat = np.full(h * w, 1.0 / np.sqrt(h * w))
    lambda_w = 0.05
    cov = (1e-3 * np.eye(h * w) + lambda_w**2 * np.outer(s_hat, s_hat)
           + 100 * lambda_w**2 * np.outer(u_hat, u_hat))
    model = SpectralModel.from_covariance(np.zeros(h * w), cov, shape=(h, w, 1))

    sigmas = (0.001, 0.003, 0.005, 0.05, 0.5, 0.7, 0.9)
    sched = NoiseSchedule.from_alpha_bars([1.0 - s**2 for s in sigmas])
    q = pixel_index(3, 3, (h, w, 1))
    for t, sigma in enumerate(sigmas, start=1):
        row = wiener_sensitivity(model, t, sched, pixels=[q]).rows[0]
        overlap = stencil_overlap(row, stencil, (h, w, 1))
        if sigma <= lambda_w / 10:
            assert overlap >= 0.9
        elif sigma >= 10 * lambda_w:
            assert overlap < 0.5


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
