"""Evaluation metrics on the BT.601 luminance plane with border shaving."""

from __future__ import annotations

import math

import numpy as np
from scipy.signal import convolve2d

from .imaging import ImageRGB, rgb_to_ycbcr_y
from .tensor import ShapeError

# Standard structural-similarity constants for dynamic range 255.
_SSIM_C1 = (0.01 * 255.0) ** 2
_SSIM_C2 = (0.03 * 255.0) ** 2
_SSIM_WIN = 11
_SSIM_SIGMA = 1.5


class MetricError(ValueError):
    """Inputs cannot support the requested metric."""


def _shaved_planes(sr: ImageRGB, hr: ImageRGB, shave: int):
    if (sr.height, sr.width) != (hr.height, hr.width):
        raise ShapeError(
            f"image sizes differ: {sr.width}x{sr.height} vs {hr.width}x{hr.height}")
    if shave < 0:
        raise MetricError(f"shave must be >= 0, got {shave}")
    y1 = rgb_to_ycbcr_y(sr)
    y2 = rgb_to_ycbcr_y(hr)
    if shave:
        if 2 * shave >= min(y1.shape):
            raise MetricError(f"shave {shave} leaves no pixels")
        y1 = y1[shave:-shave, shave:-shave]
        y2 = y2[shave:-shave, shave:-shave]
    return y1, y2


def psnr_y(sr: ImageRGB, hr: ImageRGB, shave: int = 0) -> float:
    """Peak signal-to-noise ratio in dB on the real-valued Y plane.

    Identical inputs return +inf as the sentinel for a zero-error match.
    """
    y1, y2 = _shaved_planes(sr, hr, shave)
    mse = float(np.mean((y1 - y2) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(255.0 ** 2 / mse)


def _ssim_window() -> np.ndarray:
    half = _SSIM_WIN // 2
    coords = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-(coords ** 2) / (2.0 * _SSIM_SIGMA ** 2))
    win = np.outer(g, g)
    return win / win.sum()


_WIN = _ssim_window()


def ssim_y(sr: ImageRGB, hr: ImageRGB, shave: int = 0) -> float:
    """Mean local structural similarity on the Y plane.

    Uses the 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03, dynamic
    range 255, and valid-window filtering so padded borders never enter the
    statistics.
    """
    y1, y2 = _shaved_planes(sr, hr, shave)
    if min(y1.shape) < _SSIM_WIN:
        raise MetricError(
            f"images must be at least {_SSIM_WIN}x{_SSIM_WIN} after shaving")
    mu1 = convolve2d(y1, _WIN, mode="valid")
    mu2 = convolve2d(y2, _WIN, mode="valid")
    mu1_sq = mu1 * mu1
    mu2_sq = mu2 * mu2
    mu12 = mu1 * mu2
    sigma1_sq = convolve2d(y1 * y1, _WIN, mode="valid") - mu1_sq
    sigma2_sq = convolve2d(y2 * y2, _WIN, mode="valid") - mu2_sq
    sigma12 = convolve2d(y1 * y2, _WIN, mode="valid") - mu12
    num = (2.0 * mu12 + _SSIM_C1) * (2.0 * sigma12 + _SSIM_C2)
    den = (mu1_sq + mu2_sq + _SSIM_C1) * (sigma1_sq + sigma2_sq + _SSIM_C2)
    return float(np.mean(num / den))
