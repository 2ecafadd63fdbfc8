"""A small U-Net style convolutional denoiser.

Encoder: ``depth`` stages of two 3x3 convolutions with leaky-relu followed
by 2x average pooling, channel width doubling per stage from
``base_channels``. Decoder: per stage, nearest 2x upsampling, concat of
the matching encoder skip, and two 3x3 convolutions. A final 1x1
convolution maps back to the input channel count. Weights are fan-in
scaled uniform with the leaky-relu gain; biases start at zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import Tensor, avg_pool2d, concat_channels, conv2d, leaky_relu, nearest_upsample, no_grad


@dataclass(frozen=True)
class NetConfig:
    in_channels: int = 1
    base_channels: int = 16
    depth: int = 2
    leaky_slope: float = 0.1

    def __post_init__(self):
        if self.depth < 1:
            raise ConfigError(f"depth must be >= 1, got {self.depth}")
        if self.base_channels < 4:
            raise ConfigError(f"base_channels must be >= 4, got {self.base_channels}")
        if self.in_channels < 1:
            raise ConfigError(f"in_channels must be >= 1, got {self.in_channels}")
        if not 0.0 <= self.leaky_slope < 1.0:
            raise ConfigError(f"leaky_slope must be in [0, 1), got {self.leaky_slope}")


class NetworkParams:
    """Named map of parameter tensors for one network instance.

    Names follow stage.layer.kind, e.g. ``enc0.conv1.weight`` or
    ``out.conv.bias``; iteration order is the deterministic build order.
    """

    def __init__(self, config: NetConfig, tensors: dict[str, Tensor]):
        self.config = config
        self.tensors = tensors

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors)

    def items(self):
        return self.tensors.items()

    def count(self) -> int:
        return sum(t.data.size for t in self.tensors.values())


def _conv_plan(config: NetConfig) -> list[tuple[str, int, int, int]]:
    """(name, c_in, c_out, k) for every convolution, in forward order."""
    plan: list[tuple[str, int, int, int]] = []

    def width(stage: int) -> int:
        return config.base_channels * (2**stage)

    for d in range(config.depth):
        c_in = config.in_channels if d == 0 else width(d - 1)
        plan.append((f"enc{d}.conv0", c_in, width(d), 3))
        plan.append((f"enc{d}.conv1", width(d), width(d), 3))
    for d in reversed(range(config.depth)):
        up_channels = width(d) if d == config.depth - 1 else width(d + 1)
        plan.append((f"dec{d}.conv0", up_channels + width(d), width(d), 3))
        plan.append((f"dec{d}.conv1", width(d), width(d), 3))
    plan.append(("out.conv", config.base_channels, config.in_channels, 1))
    return plan


def build_unet(config: NetConfig, seed: int) -> NetworkParams:
    """Initialize all parameters from a seeded generator.

    Weight entries are uniform on [-b, b] with
    b = gain * sqrt(3 / fan_in) and gain = sqrt(2 / (1 + slope^2)), the
    stable choice for leaky-rectified convolutions.
    """
    rng = np.random.default_rng(seed)
    gain = math.sqrt(2.0 / (1.0 + config.leaky_slope**2))
    tensors: dict[str, Tensor] = {}
    for name, c_in, c_out, k in _conv_plan(config):
        fan_in = c_in * k * k
        bound = gain * math.sqrt(3.0 / fan_in)
        weight = rng.uniform(-bound, bound, size=(c_out, c_in, k, k)).astype(np.float32)
        tensors[f"{name}.weight"] = Tensor(weight, requires_grad=True)
        tensors[f"{name}.bias"] = Tensor(np.zeros((1, c_out, 1, 1), np.float32), requires_grad=True)
    return NetworkParams(config, tensors)


def _run(params: NetworkParams, x: Tensor) -> Tensor:
    cfg = params.config
    t = params.tensors

    def block(name: str, h: Tensor, k: int, act: bool) -> Tensor:
        out = conv2d(h, t[f"{name}.weight"], t[f"{name}.bias"], stride=1, padding=(k - 1) // 2)
        return leaky_relu(out, cfg.leaky_slope) if act else out

    skips: list[Tensor] = []
    h = x
    for d in range(cfg.depth):
        h = block(f"enc{d}.conv0", h, 3, True)
        h = block(f"enc{d}.conv1", h, 3, True)
        skips.append(h)
        h = avg_pool2d(h, 2)
    for d in reversed(range(cfg.depth)):
        h = nearest_upsample(h, 2)
        h = concat_channels(h, skips[d])
        h = block(f"dec{d}.conv0", h, 3, True)
        h = block(f"dec{d}.conv1", h, 3, True)
    return block("out.conv", h, 1, False)


def forward(params: NetworkParams, x: Tensor, track_gradients: bool = True) -> Tensor:
    """Denoise a batch. With track_gradients=False the output is detached.

    Output shape equals input shape. Spatial dims must divide by
    2**depth so the pooling/upsampling path round-trips exactly.
    """
    cfg = params.config
    n, c, h, w = x.data.shape
    if c != cfg.in_channels:
        raise ShapeError(f"network expects {cfg.in_channels} channel(s), input has {c}")
    factor = 2**cfg.depth
    if h % factor != 0 or w % factor != 0:
        raise ShapeError(
            f"input spatial dims ({h}, {w}) must be divisible by 2**depth = {factor}"
        )
    if track_gradients:
        return _run(params, x)
    with no_grad():
        return _run(params, x)
