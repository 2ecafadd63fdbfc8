"""Training objective: blind-path loss with a detached visible term.

The core quantity couples three images of one shape: ``blind`` (the
mapper-assembled output of the masked volume, the only tensor gradients
flow through), ``visible`` (the network's output on the raw noisy image,
detached so it acts as a constant), and ``target`` (the noisy image).

With d1 = blind - target and d2 = visible - target, the quadratic form
mean((|d1| + lam*|d2|)^2) splits per pixel by the sign of d1*d2 into two
exact cases:

  case A (d1*d2 >= 0):  (blind + lam*visible - (lam+1)*target)^2
  case B (d1*d2 <  0):  (visible - blind + (lam-1)*(visible - target))^2

Training uses case A as the re-visible term plus an extra blind-fit
regularizer scaled by eta:

  total = mean((blind + lam*visible - (lam+1)*target)^2)
        + eta * mean((blind - target)^2)

lam ramps linearly per epoch from lambda_s to lambda_f, shifting weight
from the blind transition path to the visible one as training proceeds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import Tensor, mean_all, scale, square, sub


@dataclass(frozen=True)
class LossConfig:
    eta: float = 1.0
    lambda_s: float = 2.0
    lambda_f: float = 20.0
    total_epochs: int = 100

    def __post_init__(self):
        if self.eta < 0:
            raise ConfigError(f"eta must be >= 0, got {self.eta}")
        if self.lambda_s <= 0:
            raise ConfigError(f"lambda_s must be > 0, got {self.lambda_s}")
        if self.lambda_f < self.lambda_s:
            raise ConfigError(
                f"lambda_f must be >= lambda_s, got {self.lambda_f} < {self.lambda_s}"
            )
        if self.total_epochs < 1:
            raise ConfigError(f"total_epochs must be >= 1, got {self.total_epochs}")


@dataclass
class LossBreakdown:
    """Scalar loss tensors for one step. total = rev + eta * reg."""

    total: Tensor
    rev: Tensor
    reg: Tensor
    lambda_used: float

    @property
    def total_value(self) -> float:
        return self.total.item()

    @property
    def rev_value(self) -> float:
        return self.rev.item()

    @property
    def reg_value(self) -> float:
        return self.reg.item()


def lambda_at(config: LossConfig, epoch: int) -> float:
    """Visible weight for an epoch: linear ramp from lambda_s to lambda_f.

    Exact at both endpoints and monotone non-decreasing in between. A
    single-epoch schedule stays at lambda_s.
    """
    if not 0 <= epoch < config.total_epochs:
        raise ConfigError(
            f"epoch {epoch} outside schedule range [0, {config.total_epochs})"
        )
    if config.total_epochs == 1:
        return config.lambda_s
    frac = epoch / (config.total_epochs - 1)
    return config.lambda_s + (config.lambda_f - config.lambda_s) * frac


def _check_triple(blind: Tensor, visible: Tensor, target: Tensor, op: str) -> None:
    if blind.data.shape != visible.data.shape or blind.data.shape != target.data.shape:
        raise ShapeError(
            f"{op}: shapes differ, blind {blind.data.shape}, "
            f"visible {visible.data.shape}, target {target.data.shape}"
        )


def revisible_loss(
    blind: Tensor, visible: Tensor, target: Tensor, lam: float, eta: float
) -> LossBreakdown:
    """Regularized re-visible loss; gradients flow only through ``blind``.

    ``visible`` must already be detached: a visible input still connected
    to the graph would leak identity-mapping gradients, so it is rejected.
    """
    _check_triple(blind, visible, target, "revisible_loss")
    if visible.requires_grad:
        raise ShapeError(
            "revisible_loss: the visible input carries a live gradient path; detach it"
        )
    rev = loss_case_a(blind, visible, target, lam)
    reg = mean_all(square(sub(blind, target)))
    total = rev + scale(reg, eta)
    return LossBreakdown(total=total, rev=rev, reg=reg, lambda_used=float(lam))


def loss_case_a(blind: Tensor, visible: Tensor, target: Tensor, lam: float) -> Tensor:
    """mean((blind + lam*visible - (lam+1)*target)^2), the same-sign case."""
    _check_triple(blind, visible, target, "loss_case_a")
    residual = blind + scale(visible, lam) + scale(target, -(lam + 1.0))
    return mean_all(square(residual))


def loss_case_b(blind: Tensor, visible: Tensor, target: Tensor, lam: float) -> Tensor:
    """mean((visible - blind + (lam-1)*(visible - target))^2), opposite signs.

    Here the blind path is pulled toward the visible output instead of the
    target, which suppresses the visible path's quality; kept for the
    ablation mode.
    """
    _check_triple(blind, visible, target, "loss_case_b")
    residual = sub(visible, blind) + scale(sub(visible, target), lam - 1.0)
    return mean_all(square(residual))


def casewise_expansion(blind: Tensor, visible: Tensor, target: Tensor, lam: float) -> float:
    """mean((|d1| + lam*|d2|)^2) with d1 = blind - target, d2 = visible - target.

    This is the quantity the two cases decompose: per pixel it equals the
    case-A form when d1*d2 >= 0 and the case-B form otherwise. It is an
    analysis value only, so it is computed on raw data and returned as a
    float.
    """
    _check_triple(blind, visible, target, "casewise_expansion")
    d1 = np.abs(blind.data.astype(np.float64) - target.data.astype(np.float64))
    d2 = np.abs(visible.data.astype(np.float64) - target.data.astype(np.float64))
    return float(np.mean((d1 + lam * d2) ** 2))


def weighted_combination(blind: Tensor, visible: Tensor, lam: float) -> Tensor:
    """Pixelwise convex mix (blind + lam*visible) / (lam + 1).

    Every output pixel lies between the two inputs; as lam grows the mix
    approaches the visible input.
    """
    if lam <= 0:
        raise ConfigError(f"weighted_combination requires lam > 0, got {lam}")
    if blind.data.shape != visible.data.shape:
        raise ShapeError(
            f"weighted_combination: shapes differ, {blind.data.shape} vs {visible.data.shape}"
        )
    return scale(blind + scale(visible, lam), 1.0 / (lam + 1.0))
