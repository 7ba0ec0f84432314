"""
Event Anonymization - Image Quality Metrics

Differentiable SSIM (Gaussian window, valid-only borders) and PSNR. SSIM
doubles as the reconstruction and structure losses of joint training and
as the image-quality evaluator.

Classes:
- SsimConfig - Window size, Gaussian sigma, stabilizer constants, range

Functions:
- ssim() - Mean SSIM over channels plus gradient w.r.t. the first input
- ssim_per_sample() - Per-sample SSIM of batched arrays (no gradient)
- ssim_loss_rec() - clamp(SSIM(reconstruction, frame), 0, 1), batch mean
- ssim_loss_struct() - 1 - clamp(bin-averaged voxel SSIM, 0, 1), batch mean
- psnr() / psnr_from_mse() - Peak signal-to-noise ratio, capped at 100 dB
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .diffnet import LossResult, Tensor
from .errors import ShapeMismatchError
from .events import GrayImage, VoxelGrid

PSNR_CAP_DB = 100.0

ImageLike = Union[GrayImage, Tensor]
VoxelLike = Union[VoxelGrid, Tensor]


@dataclass(frozen=True)
class SsimConfig:
    window_size: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 1.0

    def __post_init__(self) -> None:
        if self.window_size < 1 or self.window_size % 2 == 0:
            raise ValueError(f"Invalid SSIM window size: {self.window_size}. Must be odd and >= 1.")
        if not self.sigma > 0:
            raise ValueError(f"Invalid SSIM sigma: {self.sigma}. Must be > 0.")
        if not (self.k1 > 0 and self.k2 > 0 and self.dynamic_range > 0):
            raise ValueError("SSIM constants k1, k2 and dynamic range must be > 0")

    @property
    def c1(self) -> float:
        return (self.k1 * self.dynamic_range) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.dynamic_range) ** 2


DEFAULT_SSIM = SsimConfig()


@lru_cache(maxsize=16)
def _gaussian(size: int, sigma: float) -> Tensor:
    offsets = np.arange(size, dtype=np.float64) - size // 2
    g = np.exp(-(offsets**2) / (2.0 * sigma**2))
    g /= g.sum()
    g.setflags(write=False)
    return g


def _filter(x: Tensor, g: Tensor) -> Tensor:
    """Valid separable Gaussian correlation over the last two axes."""
    k = g.shape[0]
    rows = sliding_window_view(x, k, axis=-1) @ g
    return sliding_window_view(rows, k, axis=-2) @ g


def _filter_adjoint(y: Tensor, g: Tensor) -> Tensor:
    k = g.shape[0]
    pad = [(0, 0)] * (y.ndim - 2) + [(k - 1, k - 1), (k - 1, k - 1)]
    return _filter(np.pad(y, pad), g[::-1])


def _ssim_terms(
    a: Tensor, b: Tensor, cfg: SsimConfig
) -> Tuple[Tensor, Callable[[Tensor], Tensor]]:
    """Per-image SSIM over the last two axes and its vector-Jacobian product.

    Returns (ssim, vjp) where ssim has shape a.shape[:-2] and vjp maps an
    upstream gradient of that shape to a gradient of a's shape.
    """
    if a.shape != b.shape:
        raise ShapeMismatchError("ssim inputs", a.shape, b.shape)
    h, w = a.shape[-2:]
    if cfg.window_size > min(h, w):
        raise ValueError(f"SSIM window {cfg.window_size} exceeds image size {h}x{w}")
    g = _gaussian(cfg.window_size, cfg.sigma)
    c1, c2 = cfg.c1, cfg.c2

    mu_a = _filter(a, g)
    mu_b = _filter(b, g)
    e_aa = _filter(a * a, g)
    e_bb = _filter(b * b, g)
    e_ab = _filter(a * b, g)

    a1 = 2 * mu_a * mu_b + c1
    a2 = 2 * (e_ab - mu_a * mu_b) + c2
    b1 = mu_a**2 + mu_b**2 + c1
    b2 = (e_aa - mu_a**2) + (e_bb - mu_b**2) + c2
    denom = b1 * b2
    ssim_map = (a1 * a2) / denom
    windows = ssim_map.shape[-2] * ssim_map.shape[-1]
    value = ssim_map.mean(axis=(-2, -1))

    def vjp(upstream: Tensor) -> Tensor:
        G = np.asarray(upstream, dtype=np.float64)[..., None, None] / windows
        d_mu = 2 * mu_b * (a2 - a1) / denom - ssim_map * (2 * mu_a / b1 - 2 * mu_a / b2)
        d_eab = 2 * a1 / denom
        d_eaa = -ssim_map / b2
        return (
            _filter_adjoint(G * d_mu, g)
            + 2 * a * _filter_adjoint(G * d_eaa, g)
            + b * _filter_adjoint(G * d_eab, g)
        )

    return value, vjp


def _image_array(x: ImageLike) -> Tensor:
    if isinstance(x, GrayImage):
        return x.pixels
    return np.asarray(x, dtype=np.float64)


def ssim(a: ImageLike, b: ImageLike, cfg: Optional[SsimConfig] = None) -> LossResult:
    """SSIM of two images (H x W) or channel stacks (C x H x W).

    Multi-channel inputs average the per-channel SSIM. The gradient is taken
    with respect to `a`.
    """
    cfg = cfg or DEFAULT_SSIM
    a_arr, b_arr = _image_array(a), _image_array(b)
    value, vjp = _ssim_terms(a_arr, b_arr, cfg)
    channels = value.size
    return LossResult(float(value.mean()), vjp(np.full(value.shape, 1.0 / channels)))


def ssim_per_sample(a: Tensor, b: Tensor, cfg: Optional[SsimConfig] = None) -> Tensor:
    """SSIM of N x C x H x W batches, averaged over channels per sample."""
    value, _ = _ssim_terms(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64), cfg or DEFAULT_SSIM)
    return value.mean(axis=-1)


def _image_batch(x: ImageLike) -> Tuple[Tensor, Tuple[int, ...]]:
    arr = _image_array(x)
    if arr.ndim == 2:
        return arr[None, None], arr.shape
    if arr.ndim == 3:
        return arr[:, None], arr.shape
    if arr.ndim == 4:
        return arr, arr.shape
    raise ShapeMismatchError("image batch", ("N", "C", "H", "W"), arr.shape)


def _voxel_batch(x: VoxelLike) -> Tuple[Tensor, Tuple[int, ...]]:
    arr = x.data if isinstance(x, VoxelGrid) else np.asarray(x, dtype=np.float64)
    if arr.ndim == 3:
        return arr[None], arr.shape
    if arr.ndim == 4:
        return arr, arr.shape
    raise ShapeMismatchError("voxel batch", ("N", "B", "H", "W"), arr.shape)


def _clamped_batch_ssim(
    a: Tensor, b: Tensor, cfg: SsimConfig
) -> Tuple[float, Tensor, Tensor]:
    """Batch mean of clamp(per-sample SSIM, 0, 1) and its gradient w.r.t. a."""
    value, vjp = _ssim_terms(a, b, cfg)
    n, channels = value.shape
    per_sample = value.mean(axis=1)
    clamped = np.clip(per_sample, 0.0, 1.0)
    inside = (per_sample > 0.0) & (per_sample < 1.0)
    upstream = np.where(inside, 1.0 / (n * channels), 0.0)[:, None] * np.ones((1, channels))
    return float(clamped.mean()), vjp(upstream), per_sample


def ssim_loss_rec(
    reconstruction: ImageLike, frame: ImageLike, cfg: Optional[SsimConfig] = None
) -> LossResult:
    """Reconstruction loss: clamp(SSIM(reconstruction, frame), 0, 1).

    Accepts single GrayImages or N x 1 x H x W batches (mean over the batch).
    """
    cfg = cfg or DEFAULT_SSIM
    a, shape = _image_batch(reconstruction)
    b, _ = _image_batch(frame)
    value, grad, _ = _clamped_batch_ssim(a, b, cfg)
    return LossResult(value, grad.reshape(shape))


def ssim_loss_struct(
    anonymized: VoxelLike, raw: VoxelLike, cfg: Optional[SsimConfig] = None
) -> LossResult:
    """Structure loss: 1 - clamp(per-bin-averaged SSIM, 0, 1).

    Voxel values are mapped from [-1, 1] to [0, 1] by (v + 1) / 2 before
    comparison; each temporal bin is one channel. Accepts single grids
    (B x H x W) or N x B x H x W batches.
    """
    cfg = cfg or DEFAULT_SSIM
    a, shape = _voxel_batch(anonymized)
    b, _ = _voxel_batch(raw)
    value, grad, _ = _clamped_batch_ssim((a + 1.0) / 2.0, (b + 1.0) / 2.0, cfg)
    return LossResult(1.0 - value, (-0.5 * grad).reshape(shape))


def psnr_from_mse(mse: float, max_value: float = 1.0) -> float:
    if mse <= 0.0:
        return PSNR_CAP_DB
    return float(min(PSNR_CAP_DB, 10.0 * np.log10(max_value**2 / mse)))


def psnr(a: ImageLike, b: ImageLike, max_value: float = 1.0) -> float:
    a_arr, b_arr = _image_array(a), _image_array(b)
    if a_arr.shape != b_arr.shape:
        raise ShapeMismatchError("psnr inputs", a_arr.shape, b_arr.shape)
    return psnr_from_mse(float(np.mean((a_arr - b_arr) ** 2)), max_value)
