"""Input validation helpers for the estimator-facing API."""

from __future__ import annotations

import numpy as np

from .errors import ShapeError


def check_image_batch(X, name: str = "X") -> np.ndarray:
    """Coerce input images to a float32 (N, C, H, W) stack.

    Accepts a 4-D array, a 3-D array (one image or a channelless stack is
    ambiguous, so 3-D is read as one (C, H, W) image), a 2-D array (one
    grayscale image), or a sequence of 2-D/3-D arrays of one shared shape.
    Values must be finite.
    """
    if isinstance(X, np.ndarray) and X.ndim in (2, 3, 4):
        if X.ndim == 2:
            batch = X[None, None]
        elif X.ndim == 3:
            batch = X[None]
        else:
            batch = X
    else:
        try:
            items = [np.asarray(item) for item in X]
        except TypeError:
            raise ShapeError(f"{name} must be an array or a sequence of arrays")
        if not items:
            raise ShapeError(f"{name} is empty")
        coerced = []
        for item in items:
            if item.ndim == 2:
                item = item[None]
            if item.ndim != 3:
                raise ShapeError(
                    f"{name} items must be (H, W) or (C, H, W) images, got ndim={item.ndim}"
                )
            coerced.append(item)
        shapes = {item.shape for item in coerced}
        if len(shapes) != 1:
            raise ShapeError(f"{name} items must share one shape, got {sorted(shapes)}")
        batch = np.stack(coerced, axis=0)
    batch = np.asarray(batch, dtype=np.float32)
    if not np.isfinite(batch).all():
        raise ShapeError(f"{name} contains NaN or Inf values")
    return batch


def check_spatial_divisibility(batch: np.ndarray, depth: int, name: str = "X") -> None:
    factor = 2**depth
    _, _, h, w = batch.shape
    if h % factor != 0 or w % factor != 0:
        raise ShapeError(
            f"{name} spatial dims ({h}, {w}) must divide by 2**depth = {factor}"
        )
