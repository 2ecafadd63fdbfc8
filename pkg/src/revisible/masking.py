"""Blind-spot masking: the global masked volume and the random-mask baseline.

A noisy image is covered by a grid of s x s cells. The *global* masker
builds s*s copies of the image; copy (i, j) blinds every pixel whose row
and column residues modulo s are (i, j), so the blind sets of the copies
partition the full pixel grid and every pixel is hidden in exactly one
copy. Blinded values are filled with a neighborhood average so the network
never sees the original value at a blind spot.

The *random* masker is the ablation baseline: one uniformly chosen blind
spot per cell, in a single masked copy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import Tensor


@dataclass(frozen=True)
class MaskGridSpec:
    """Cell side length for the masking grid."""

    s: int = 2

    def __post_init__(self):
        if self.s < 2:
            raise ConfigError(f"mask grid cell size must be >= 2, got {self.s}")

    @property
    def layers(self) -> int:
        return self.s * self.s


@dataclass
class MaskedVolume:
    """The s*s masked copies of one image, ordered row-major by offset.

    Layer index l corresponds to offset (i, j) = (l // s, l % s); its blind
    spots are all pixels (r, c) with r % s == i and c % s == j.
    """

    layers: list[Tensor]
    spec: MaskGridSpec
    origin_shape: tuple[int, int, int]

    def blind_mask(self, layer: int) -> np.ndarray:
        """Boolean (h, w) mask of the blind-spot positions of one layer."""
        _, h, w = self.origin_shape
        return blind_spot_masks(self.spec, h, w)[layer]

    def stacked(self) -> np.ndarray:
        """All layers concatenated along the batch axis, layer order kept."""
        return np.concatenate([layer.data for layer in self.layers], axis=0)


def layer_index_grid(spec: MaskGridSpec, h: int, w: int) -> np.ndarray:
    """(h, w) map of which layer holds each pixel's blind spot."""
    rows = np.arange(h) % spec.s
    cols = np.arange(w) % spec.s
    return rows[:, None] * spec.s + cols[None, :]


def blind_spot_masks(spec: MaskGridSpec, h: int, w: int) -> np.ndarray:
    """(s*s, h, w) boolean masks, one per layer, partitioning the grid."""
    grid = layer_index_grid(spec, h, w)
    return grid[None, :, :] == np.arange(spec.layers)[:, None, None]


def interpolate_neighbors(image: Tensor) -> Tensor:
    """Average of the in-bounds 3x3 neighbors of each pixel, center excluded.

    Weights are uniform over the neighbors that exist, so border and corner
    pixels are normalized by 5 and 3 instead of 8 and constant images map
    to themselves everywhere. By construction the output at a position
    never depends on the input at that same position.
    """
    n, c, h, w = image.data.shape
    if n != 1:
        raise ShapeError(f"interpolate_neighbors expects a single image (n=1), got n={n}")
    if h < 2 or w < 2:
        raise ShapeError(f"interpolate_neighbors needs spatial dims >= 2, got ({h}, {w})")
    return Tensor(_neighbor_average(image.data), dtype=image.data.dtype)


def _neighbor_average(data: np.ndarray) -> np.ndarray:
    n, c, h, w = data.shape
    acc = np.zeros((n, c, h, w), dtype=np.float64)
    counts = np.zeros((h, w), dtype=np.float64)
    padded = np.pad(data.astype(np.float64), ((0, 0), (0, 0), (1, 1), (1, 1)))
    ones = np.pad(np.ones((h, w)), ((1, 1), (1, 1)))
    for di in range(3):
        for dj in range(3):
            if di == 1 and dj == 1:
                continue
            acc += padded[:, :, di : di + h, dj : dj + w]
            counts += ones[di : di + h, dj : dj + w]
    return (acc / counts).astype(data.dtype)


def make_global_masked_volume(image: Tensor, spec: MaskGridSpec) -> MaskedVolume:
    """Build the s*s masked copies whose blind sets tile the whole image.

    Non-blind pixels pass through bit-exactly; blind pixels take the
    neighbor-interpolated value at their own position. Images whose sides
    are not multiples of s are allowed: residue classes still index blind
    sets over every pixel, so boundary cells may simply be partial.
    """
    n, c, h, w = image.data.shape
    if n != 1:
        raise ShapeError(f"global masker expects a single image (n=1), got n={n}")
    if h < spec.s or w < spec.s:
        raise ShapeError(
            f"image spatial dims ({h}, {w}) must be >= mask cell size {spec.s}"
        )
    filled = _neighbor_average(image.data)
    layers = []
    for i in range(spec.s):
        for j in range(spec.s):
            layer = image.data.copy()
            layer[:, :, i :: spec.s, j :: spec.s] = filled[:, :, i :: spec.s, j :: spec.s]
            layers.append(Tensor(layer, dtype=image.data.dtype))
    return MaskedVolume(layers=layers, spec=spec, origin_shape=(c, h, w))


def make_random_masked_image(
    image: Tensor, spec: MaskGridSpec, seed: int
) -> tuple[Tensor, np.ndarray]:
    """One masked copy with a uniformly chosen blind spot per s x s cell.

    Returns the masked image and the boolean (h, w) blind-position mask.
    Requires h and w divisible by s so every cell is complete.
    """
    n, c, h, w = image.data.shape
    if n != 1:
        raise ShapeError(f"random masker expects a single image (n=1), got n={n}")
    if h % spec.s != 0 or w % spec.s != 0:
        raise ShapeError(
            f"random masking needs spatial dims divisible by s={spec.s}, got ({h}, {w})"
        )
    rng = np.random.default_rng(seed)
    cells_h, cells_w = h // spec.s, w // spec.s
    choice = rng.integers(0, spec.layers, size=(cells_h, cells_w))
    cell_rows = np.arange(cells_h)[:, None] * spec.s
    cell_cols = np.arange(cells_w)[None, :] * spec.s
    blind_rows = (cell_rows + choice // spec.s).reshape(-1)
    blind_cols = (cell_cols + choice % spec.s).reshape(-1)
    mask = np.zeros((h, w), dtype=bool)
    mask[blind_rows, blind_cols] = True

    filled = _neighbor_average(image.data)
    masked = np.where(mask[None, None, :, :], filled, image.data)
    return Tensor(masked, dtype=image.data.dtype), mask
