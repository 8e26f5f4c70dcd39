from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from ..netgraph.layers import ConfigError

MIN_BITS, MAX_BITS = 3, 8


class Granularity(str, enum.Enum):
    PER_LAYER = "PerLayer"
    PER_FILTER = "PerFilter"


@dataclass(frozen=True)
class QuantParams:
    """Affine quantization parameters.

    ``scale`` and ``zero_point`` are 0-d arrays for per-layer parameters and
    1-d arrays (one entry per filter, axis 0 of the tensor) for per-filter ones.
    """

    scale: np.ndarray
    zero_point: np.ndarray
    bits: int
    granularity: Granularity = Granularity.PER_LAYER

    def __post_init__(self):
        object.__setattr__(self, "scale", np.asarray(self.scale, dtype=np.float64))
        object.__setattr__(self, "zero_point", np.asarray(self.zero_point, dtype=np.int64))
        object.__setattr__(self, "granularity", Granularity(self.granularity))
        if not MIN_BITS <= self.bits <= MAX_BITS:
            raise ConfigError(f"bit-width must be in [{MIN_BITS}, {MAX_BITS}], got {self.bits}")
        if np.any(self.scale <= 0):
            raise ValueError("scale must be positive")
        if np.any((self.zero_point < 0) | (self.zero_point > self.qmax)):
            raise ValueError("zero point outside code range")

    @property
    def qmax(self) -> int:
        return (1 << self.bits) - 1

    def broadcast(self, ndim: int):
        """Scale and zero point shaped to broadcast against an ``ndim`` tensor."""
        if self.granularity is Granularity.PER_LAYER or self.scale.ndim == 0:
            return self.scale, self.zero_point
        shape = (-1,) + (1,) * (ndim - 1)
        return self.scale.reshape(shape), self.zero_point.reshape(shape)

    def take(self, index) -> "QuantParams":
        """Per-filter parameters restricted to ``index``."""
        if self.scale.ndim == 0:
            return self
        return QuantParams(self.scale[index], self.zero_point[index], self.bits, self.granularity)


def _reduce_range(samples, granularity):
    if isinstance(samples, np.ndarray):
        samples = [samples]
    mins, maxs = [], []
    for s in samples:
        s = np.asarray(s, dtype=np.float64)
        if s.size == 0:
            continue
        if granularity is Granularity.PER_FILTER:
            flat = s.reshape(s.shape[0], -1)
            mins.append(flat.min(axis=1))
            maxs.append(flat.max(axis=1))
        else:
            mins.append(s.min())
            maxs.append(s.max())
    if not mins:
        raise ValueError("calibration needs at least one non-empty sample")
    return np.min(np.stack(mins), axis=0), np.max(np.stack(maxs), axis=0)


def affine_from_range(mn, mx, bits):
    """Scale and zero point from a min/max range; constant ranges get S = 1."""
    mn = np.asarray(mn, dtype=np.float64)
    mx = np.asarray(mx, dtype=np.float64)
    qmax = (1 << bits) - 1
    with np.errstate(under="ignore"):
        step = (mx - mn) / qmax
    flat = step == 0  # includes ranges so narrow the step underflows
    scale = np.where(flat, 1.0, step)
    zero = np.where(flat, np.rint(-mn), np.rint(-mn / np.where(flat, 1.0, scale)))
    return scale, np.clip(zero, 0, qmax).astype(np.int64)


def calibrate_affine(samples, bits: int, granularity=Granularity.PER_LAYER) -> QuantParams:
    """Min/max calibration over pooled samples.

    ``samples`` is one array or an iterable of arrays. For per-filter
    granularity axis 0 of every sample indexes filters.
    """
    granularity = Granularity(granularity)
    if not MIN_BITS <= bits <= MAX_BITS:
        raise ConfigError(f"bit-width must be in [{MIN_BITS}, {MAX_BITS}], got {bits}")
    mn, mx = _reduce_range(samples, granularity)
    scale, zero = affine_from_range(mn, mx, bits)
    return QuantParams(scale, zero, bits, granularity)


def quantize_uniform(x, params: QuantParams):
    """Integer codes ``clip(round(x / S) + Z, 0, 2^b - 1)``; ties round to even."""
    x = np.asarray(x, dtype=np.float64)
    s, z = params.broadcast(x.ndim)
    return np.clip(np.rint(x / s) + z, 0, params.qmax).astype(np.int64)


def dequantize_uniform(q, params: QuantParams):
    q = np.asarray(q, dtype=np.int64)
    s, z = params.broadcast(q.ndim)
    return (q - z) * s
