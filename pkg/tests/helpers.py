"""Shared oracles and data generators for the test suite.

Everything here is deliberately independent of the package's fast paths:
the convolution and interpolation oracles are plain nested loops, and the
texture generator only uses numpy basics.
"""

from __future__ import annotations

import numpy as np


def naive_conv2d(x, w, b, stride=1, padding=0):
    """Reference convolution: explicit loops over every output element."""
    n, c_in, h, width = x.shape
    c_out, _, k, _ = w.shape
    h_out = (h + 2 * padding - k) // stride + 1
    w_out = (width + 2 * padding - k) // stride + 1
    xp = np.zeros((n, c_in, h + 2 * padding, width + 2 * padding), dtype=np.float64)
    xp[:, :, padding : padding + h, padding : padding + width] = x
    out = np.zeros((n, c_out, h_out, w_out), dtype=np.float64)
    for bi in range(n):
        for co in range(c_out):
            for oy in range(h_out):
                for ox in range(w_out):
                    acc = 0.0
                    for ci in range(c_in):
                        for ky in range(k):
                            for kx in range(k):
                                acc += (
                                    xp[bi, ci, oy * stride + ky, ox * stride + kx]
                                    * w[co, ci, ky, kx]
                                )
                    out[bi, co, oy, ox] = acc + b.reshape(-1)[co]
    return out


def naive_neighbor_average(img):
    """Reference 3x3 neighbor average, center excluded, per-pixel loop."""
    n, c, h, w = img.shape
    out = np.zeros_like(img, dtype=np.float64)
    for bi in range(n):
        for ci in range(c):
            for r in range(h):
                for col in range(w):
                    acc, cnt = 0.0, 0
                    for dr in (-1, 0, 1):
                        for dc in (-1, 0, 1):
                            if dr == 0 and dc == 0:
                                continue
                            rr, cc = r + dr, col + dc
                            if 0 <= rr < h and 0 <= cc < w:
                                acc += img[bi, ci, rr, cc]
                                cnt += 1
                    out[bi, ci, r, col] = acc / cnt
    return out


def numeric_gradient(fn, arr, step=1e-3):
    """Central finite differences of a scalar-valued fn over every entry."""
    arr = arr.astype(np.float64)
    grad = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + step
        plus = fn(arr)
        flat[i] = original - step
        minus = fn(arr)
        flat[i] = original
        gflat[i] = (plus - minus) / (2 * step)
    return grad


def make_texture(seed: int, size: int = 64) -> np.ndarray:
    """A smooth banded texture in (1, 1, size, size), values in [0.05, 0.95].

    Low-frequency sinusoid mixtures plus a soft radial blob: structured
    enough that denoising has something to recover, smooth enough that a
    tiny network can learn it quickly.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / float(size)
    img = np.zeros((size, size), dtype=np.float64)
    for _ in range(5):
        fx, fy = rng.uniform(0.5, 3.0, size=2)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        amp = rng.uniform(0.4, 1.0)
        img += amp * np.sin(2.0 * np.pi * (fx * xx + fy * yy) + phase)
    cx, cy = rng.uniform(0.2, 0.8, size=2)
    radius = rng.uniform(0.1, 0.35)
    img += 1.5 * np.exp(-(((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * radius**2)))
    lo, hi = img.min(), img.max()
    img = 0.05 + 0.9 * (img - lo) / (hi - lo)
    return img[None, None].astype(np.float32)
