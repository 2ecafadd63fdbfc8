"""PSNR and SSIM for [0, 1] images. Both clamp their inputs before scoring."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .tensor import Tensor

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass
class QualityScore:
    psnr_db: float
    ssim: float


def _as_array(image) -> np.ndarray:
    data = image.data if isinstance(image, Tensor) else np.asarray(image)
    return data.astype(np.float64)


def psnr(reference, test) -> float:
    """10 * log10(1 / MSE) with peak 1.0; identical images score +inf."""
    ref = np.clip(_as_array(reference), 0.0, 1.0)
    tst = np.clip(_as_array(test), 0.0, 1.0)
    if ref.shape != tst.shape:
        raise ShapeError(f"psnr: shapes differ, {ref.shape} vs {tst.shape}")
    mse = float(np.mean((ref - tst) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Normalized 2-D Gaussian weights."""
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords**2) / (2.0 * sigma**2))
    window = np.outer(g, g)
    return window / window.sum()


def _windowed_mean(plane: np.ndarray, window: np.ndarray) -> np.ndarray:
    """Valid-mode weighted local means via a sliding-window view."""
    k = window.shape[0]
    view = np.lib.stride_tricks.sliding_window_view(plane, (k, k))
    return np.tensordot(view, window, axes=([2, 3], [0, 1]))


def ssim(reference, test) -> float:
    """Mean local structural similarity with an 11x11 Gaussian window.

    Uses the canonical constants K1=0.01, K2=0.03 at dynamic range 1.0;
    channels are scored independently and averaged. Requires spatial dims
    of at least the window size.
    """
    ref = np.clip(_as_array(reference), 0.0, 1.0)
    tst = np.clip(_as_array(test), 0.0, 1.0)
    if ref.shape != tst.shape:
        raise ShapeError(f"ssim: shapes differ, {ref.shape} vs {tst.shape}")
    if ref.ndim != 4:
        raise ShapeError(f"ssim expects (n, c, h, w) images, got ndim={ref.ndim}")
    n, c, h, w = ref.shape
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ShapeError(
            f"ssim needs spatial dims >= {SSIM_WINDOW}, got ({h}, {w})"
        )
    window = gaussian_window()
    c1 = (SSIM_K1 * 1.0) ** 2
    c2 = (SSIM_K2 * 1.0) ** 2
    values = []
    for b in range(n):
        for ch in range(c):
            x = ref[b, ch]
            y = tst[b, ch]
            mu_x = _windowed_mean(x, window)
            mu_y = _windowed_mean(y, window)
            var_x = _windowed_mean(x * x, window) - mu_x**2
            var_y = _windowed_mean(y * y, window) - mu_y**2
            cov = _windowed_mean(x * y, window) - mu_x * mu_y
            num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
            den = (mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)
            values.append(np.mean(num / den))
    return float(np.mean(values))


def quality(reference, test) -> QualityScore:
    return QualityScore(psnr_db=psnr(reference, test), ssim=ssim(reference, test))
