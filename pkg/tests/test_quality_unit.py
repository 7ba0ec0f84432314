"""Unit tests for SSIM and PSNR."""

import numpy as np
import pytest

from evanon.diffnet import Parameter, grad_check
from evanon.errors import ShapeMismatchError
from evanon.events import GrayImage, VoxelGrid
from evanon.quality import (
    PSNR_CAP_DB,
    SsimConfig,
    psnr,
    psnr_from_mse,
    ssim,
    ssim_loss_rec,
    ssim_loss_struct,
    ssim_per_sample,
)


class TestSsim:
    """Test SSIM values and gradients."""

    def test_identical_images(self):
        """Test ssim(x, x) = 1 with zero gradient."""
        rng = np.random.default_rng(0)
        x = rng.uniform(size=(16, 16))
        result = ssim(x, x)

        assert result.value == pytest.approx(1.0, abs=1e-12)
        assert np.abs(result.grad).max() < 1e-10

    def test_symmetry(self):
        """Test ssim(a, b) = ssim(b, a)."""
        rng = np.random.default_rng(1)
        a, b = rng.uniform(size=(2, 20, 24))
        assert abs(ssim(a, b).value - ssim(b, a).value) < 1e-12

    def test_monotone_in_noise_amplitude(self):
        """Test SSIM falls strictly as the same noise pattern is amplified."""
        rng = np.random.default_rng(5)
        yy, xx = np.mgrid[0:24, 0:24] / 23.0
        clean = 0.25 + 0.5 * xx * yy
        noise = rng.normal(size=clean.shape)
        values = [ssim(clean + amp * noise, clean).value for amp in (0.01, 0.03, 0.1, 0.3, 1.0)]
        assert values[0] < 1.0
        assert all(a > b for a, b in zip(values, values[1:]))

    def test_constant_black_vs_white(self):
        """Test constant 0 vs constant 1 gives C1 / (1 + C1)."""
        value = ssim(np.zeros((12, 12)), np.ones((12, 12))).value
        assert value == pytest.approx(1e-4 / 1.0001, abs=1e-9)

    def test_accepts_gray_images(self):
        """Test GrayImage arguments are unwrapped."""
        img = GrayImage(np.full((11, 11), 0.3))
        assert ssim(img, img).value == pytest.approx(1.0)

    def test_shape_mismatch(self):
        """Test different shapes raise ShapeMismatchError."""
        with pytest.raises(ShapeMismatchError):
            ssim(np.zeros((12, 12)), np.zeros((12, 13)))

    def test_window_larger_than_image(self):
        """Test a window bigger than the image raises ValueError."""
        with pytest.raises(ValueError, match="window"):
            ssim(np.zeros((5, 5)), np.zeros((5, 5)))

    def test_gradient_finite_differences(self):
        """Test the SSIM gradient w.r.t. the first input."""
        rng = np.random.default_rng(2)
        a = Parameter("a", rng.uniform(size=(2, 14, 14)))
        b = rng.uniform(size=(2, 14, 14))
        cfg = SsimConfig(window_size=7)

        def objective(with_grad):
            result = ssim(a.value, b, cfg)
            if with_grad:
                a.grad[...] = result.grad
            return result.value

        assert grad_check(objective, [a], max_entries=60).worst < 1e-3

    def test_per_sample_matches_single(self):
        """Test batched per-sample SSIM equals separate calls."""
        rng = np.random.default_rng(3)
        a = rng.uniform(size=(3, 1, 12, 12))
        b = rng.uniform(size=(3, 1, 12, 12))
        batched = ssim_per_sample(a, b)
        assert batched == pytest.approx([ssim(a[i, 0], b[i, 0]).value for i in range(3)])

    def test_invalid_config(self):
        """Test even windows and non-positive sigma are rejected."""
        with pytest.raises(ValueError, match="window size"):
            SsimConfig(window_size=10)
        with pytest.raises(ValueError, match="sigma"):
            SsimConfig(sigma=0.0)


class TestSsimLosses:
    """Test the clamped training losses."""

    def test_rec_loss_identical(self):
        """Test reconstruction loss of identical images is 1."""
        x = np.full((1, 1, 12, 12), 0.4) + np.eye(12) * 0.1
        assert ssim_loss_rec(x, x).value == pytest.approx(1.0)

    def test_rec_loss_clamps_negative(self):
        """Test negatively correlated images clamp to 0 with zero gradient."""
        x = np.tile(np.linspace(0, 1, 12), (12, 1))
        result = ssim_loss_rec(x, 1.0 - x)
        assert result.value == 0.0
        assert not result.grad.any()

    def test_struct_loss_identical(self):
        """Test structure loss of a grid with itself is 0."""
        rng = np.random.default_rng(4)
        grid = VoxelGrid(rng.uniform(-1, 1, size=(5, 12, 12)))
        result = ssim_loss_struct(grid, grid)
        assert result.value == pytest.approx(0.0, abs=1e-12)
        assert result.grad.shape == (5, 12, 12)

    def test_struct_loss_gradient(self):
        """Test the structure loss gradient on a batch."""
        rng = np.random.default_rng(5)
        x = Parameter("x", rng.uniform(-1, 1, size=(2, 3, 12, 12)))
        raw = np.clip(x.value + rng.normal(scale=0.3, size=x.shape), -1, 1)
        cfg = SsimConfig(window_size=7)

        def objective(with_grad):
            result = ssim_loss_struct(x.value, raw, cfg)
            if with_grad:
                x.grad[...] = result.grad
            return result.value

        assert grad_check(objective, [x], max_entries=60).worst < 1e-3


class TestPsnr:
    """Test PSNR."""

    def test_mse_001_is_20db(self):
        """Test PSNR at MSE 0.01 is exactly 20 dB."""
        assert psnr_from_mse(0.01) == 20.0

    def test_identical_images_capped(self):
        """Test identical images report the 100 dB cap."""
        x = np.full((4, 4), 0.5)
        assert psnr(x, x) == PSNR_CAP_DB

    def test_psnr_of_offset(self):
        """Test a uniform 0.1 offset gives 20 dB."""
        a = np.full((4, 4), 0.5)
        assert psnr(a, a + 0.1) == pytest.approx(20.0)
