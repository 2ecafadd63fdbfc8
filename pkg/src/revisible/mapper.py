"""Mask mapper: reassemble one image from a denoised masked volume.

Each pixel is blind in exactly one volume layer, so the mapper is a pure
gather: output pixel (r, c) is read from layer (r % s) * s + (c % s). The
adjoint (scatter of an output gradient back onto the layers, zero outside
each layer's blind set) is registered as the backward rule, which keeps
the gather exact and differentiable end to end.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ShapeError
from .masking import MaskGridSpec, blind_spot_masks, layer_index_grid
from .tensor import Tensor


@dataclass
class MappedImage:
    """A gathered image plus, per pixel, the index of the layer it came from."""

    image: Tensor
    provenance: np.ndarray


def map_blind_spots(volume_output: Sequence[Tensor], spec: MaskGridSpec) -> MappedImage:
    """Gather blind-spot pixels from s*s layers into one full image.

    ``volume_output`` must hold exactly s*s tensors of one common shape, in
    the masker's row-major offset order. Batched layers are fine: the
    gather applies per batch element and channel.
    """
    layers = list(volume_output)
    if len(layers) != spec.layers:
        raise ShapeError(
            f"mapper expects {spec.layers} layers for s={spec.s}, got {len(layers)}"
        )
    shape = layers[0].data.shape
    for idx, layer in enumerate(layers[1:], start=1):
        if layer.data.shape != shape:
            raise ShapeError(
                f"mapper layer {idx} shape {layer.data.shape} differs from layer 0 shape {shape}"
            )
    n, c, h, w = shape
    grid = layer_index_grid(spec, h, w)
    stacked = np.stack([layer.data for layer in layers], axis=0)
    index = np.broadcast_to(grid, (1, n, c, h, w))
    gathered = np.take_along_axis(stacked, index, axis=0)[0]
    masks = blind_spot_masks(spec, h, w)

    def backward_fn(g: np.ndarray):
        return tuple(np.where(masks[l], g, 0.0).astype(g.dtype) for l in range(spec.layers))

    image = Tensor._from_op(gathered, "map_blind_spots", tuple(layers), backward_fn)
    return MappedImage(image=image, provenance=grid.copy())


def mapper_backward_scatter(grad_out, spec: MaskGridSpec) -> list[np.ndarray]:
    """Adjoint of the gather: route a gradient image to each layer.

    Layer l receives the gradient exactly on its blind-spot positions and
    zeros elsewhere; summing the scattered layers recovers the input.
    """
    g = grad_out.data if isinstance(grad_out, Tensor) else np.asarray(grad_out)
    h, w = g.shape[-2], g.shape[-1]
    masks = blind_spot_masks(spec, h, w)
    return [np.where(masks[l], g, 0.0).astype(g.dtype) for l in range(spec.layers)]
