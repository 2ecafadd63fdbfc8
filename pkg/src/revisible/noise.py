"""Seeded synthetic corruption: Gaussian and Poisson, fixed or ranged.

Gaussian sigma is expressed in 8-bit units and applied as sigma/255 on the
[0, 1] intensity domain. Poisson uses the signal-dependent convention
y = PoissonSample(rate * x) / rate, so the per-pixel variance is x / rate.
Ranged kinds draw one parameter per image, uniformly over [lo, hi].
Outputs are never clipped; clamping happens only at image export.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import Tensor

GAUSSIAN_FIXED = "gaussian_fixed"
GAUSSIAN_RANGE = "gaussian_range"
POISSON_FIXED = "poisson_fixed"
POISSON_RANGE = "poisson_range"

_KINDS = (GAUSSIAN_FIXED, GAUSSIAN_RANGE, POISSON_FIXED, POISSON_RANGE)

# Above this expected count the exact inversion sampler gives way to a
# mean/variance matched normal approximation.
_POISSON_INVERSION_LIMIT = 30.0


@dataclass(frozen=True)
class NoiseSpec:
    """Corruption description: kind plus its parameter (value or range)."""

    kind: str
    sigma_8bit: float | tuple[float, float] | None = None
    poisson_rate: float | tuple[float, float] | None = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ConfigError(f"unknown noise kind {self.kind!r}, expected one of {_KINDS}")
        if self.kind == GAUSSIAN_FIXED:
            v = self._require_scalar(self.sigma_8bit, "sigma_8bit")
            if v < 0:
                raise ConfigError(f"gaussian sigma must be >= 0, got {v}")
        elif self.kind == GAUSSIAN_RANGE:
            lo, hi = self._require_range(self.sigma_8bit, "sigma_8bit")
            if lo < 0:
                raise ConfigError(f"gaussian sigma range must be >= 0, got lo={lo}")
        elif self.kind == POISSON_FIXED:
            v = self._require_scalar(self.poisson_rate, "poisson_rate")
            if v <= 0:
                raise ConfigError(f"poisson rate must be > 0, got {v}")
        else:
            lo, hi = self._require_range(self.poisson_rate, "poisson_rate")
            if lo <= 0:
                raise ConfigError(f"poisson rate range must be > 0, got lo={lo}")

    @staticmethod
    def _require_scalar(value, name: str) -> float:
        if value is None or isinstance(value, tuple):
            raise ConfigError(f"fixed noise kind needs a scalar {name}, got {value!r}")
        return float(value)

    @staticmethod
    def _require_range(value, name: str) -> tuple[float, float]:
        if not isinstance(value, tuple) or len(value) != 2:
            raise ConfigError(f"ranged noise kind needs a (lo, hi) {name}, got {value!r}")
        lo, hi = float(value[0]), float(value[1])
        if lo > hi:
            raise ConfigError(f"noise range must satisfy lo <= hi, got ({lo}, {hi})")
        return lo, hi

    def describe(self) -> str:
        if self.kind == GAUSSIAN_FIXED:
            return f"gauss{_fmt(self.sigma_8bit)}"
        if self.kind == GAUSSIAN_RANGE:
            return f"gauss{_fmt(self.sigma_8bit[0])}_{_fmt(self.sigma_8bit[1])}"
        if self.kind == POISSON_FIXED:
            return f"poisson{_fmt(self.poisson_rate)}"
        return f"poisson{_fmt(self.poisson_rate[0])}_{_fmt(self.poisson_rate[1])}"


def _fmt(v) -> str:
    v = float(v)
    return str(int(v)) if v == int(v) else str(v)


def parse_noise_spec(text: str) -> NoiseSpec:
    """Parse the CLI grammar: gauss25, gauss5_50, poisson30, poisson5_50.

    A single number after the prefix means a fixed parameter; two numbers
    separated by an underscore mean a uniform range.
    """
    text = text.strip()
    for prefix, fixed_kind, range_kind, field in (
        ("gauss", GAUSSIAN_FIXED, GAUSSIAN_RANGE, "sigma_8bit"),
        ("poisson", POISSON_FIXED, POISSON_RANGE, "poisson_rate"),
    ):
        if not text.startswith(prefix):
            continue
        body = text[len(prefix) :]
        parts = body.split("_")
        try:
            values = [float(p) for p in parts]
        except ValueError:
            values = []
        if len(values) == 1:
            return NoiseSpec(kind=fixed_kind, **{field: values[0]})
        if len(values) == 2:
            return NoiseSpec(kind=range_kind, **{field: (values[0], values[1])})
        break
    raise ConfigError(
        f"cannot parse noise spec {text!r}; expected gauss<v>, gauss<lo>_<hi>, "
        "poisson<v>, or poisson<lo>_<hi>"
    )


def _sample_poisson(lam: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Vectorized Poisson draw: CDF inversion below the limit, normal above."""
    flat = lam.reshape(-1)
    out = np.zeros(flat.shape, dtype=np.float64)
    small = flat < _POISSON_INVERSION_LIMIT
    if small.any():
        lam_s = flat[small]
        u = rng.uniform(size=lam_s.shape)
        k = np.zeros(lam_s.shape, dtype=np.float64)
        prob = np.exp(-lam_s)
        cdf = prob.copy()
        active = u > cdf
        # Hard cap: far beyond any realistic draw for lam < the limit, it
        # only guards against a CDF stalling just below a max-entropy u.
        for _ in range(512):
            if not active.any():
                break
            k[active] += 1.0
            prob[active] *= lam_s[active] / k[active]
            cdf[active] += prob[active]
            active = u > cdf
        out[small] = k
    large = ~small
    if large.any():
        lam_l = flat[large]
        z = rng.standard_normal(size=lam_l.shape)
        out[large] = lam_l + np.sqrt(lam_l) * z
    return out.reshape(lam.shape)


def corrupt(clean: Tensor, spec: NoiseSpec, seed: int) -> tuple[Tensor, float]:
    """Corrupt one clean [0, 1] image per the spec. Returns (noisy, parameter).

    The parameter (sigma in 8-bit units, or the Poisson rate) is drawn
    first from the seeded generator, then the noise field, so a fixed seed
    pins both. Output values are not clipped.
    """
    data = clean.data
    if data.min() < 0.0 or data.max() > 1.0:
        raise ShapeError(
            f"corrupt expects clean values in [0, 1], got range "
            f"[{float(data.min()):.4f}, {float(data.max()):.4f}]"
        )
    rng = np.random.default_rng(seed)
    if spec.kind in (GAUSSIAN_FIXED, GAUSSIAN_RANGE):
        if spec.kind == GAUSSIAN_FIXED:
            sigma = float(spec.sigma_8bit)
        else:
            lo, hi = spec.sigma_8bit
            sigma = float(rng.uniform(lo, hi))
        noisy = data.astype(np.float64) + rng.standard_normal(data.shape) * (sigma / 255.0)
        return Tensor(noisy.astype(np.float32)), sigma
    if spec.kind == POISSON_FIXED:
        rate = float(spec.poisson_rate)
    else:
        lo, hi = spec.poisson_rate
        rate = float(rng.uniform(lo, hi))
    counts = _sample_poisson(data.astype(np.float64) * rate, rng)
    return Tensor((counts / rate).astype(np.float32)), rate
