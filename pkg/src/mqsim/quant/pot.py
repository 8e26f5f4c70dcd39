"""Power-of-two (PoT) and additive power-of-two (APoT) weight quantizers.

APoT layout: a weight is ``s * S * (2**p1 + 2**p2)`` with ``p1`` from
``APOT_P1`` and ``p2`` from the disjoint range ``APOT_P2``, or an explicit zero.
Stored codes pack ``zero | sign | p1 index | p2 index`` into 6 bits.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

APOT_P1 = np.array([0, -1, -2, -3], dtype=np.int64)
APOT_P2 = np.array([-4, -5, -6, -7], dtype=np.int64)
APOT_P_MIN = int(APOT_P2.min())
APOT_CODE_BITS = 6
APOT_TOP = 1.0 + 2.0 ** APOT_P2.max()


class DegenerateFilterError(ValueError):
    pass


@dataclass(frozen=True)
class PoTCodes:
    sign: np.ndarray
    exponent: np.ndarray
    scale: np.ndarray
    bits: int

    def dequantize(self):
        return self.sign * self.scale * np.exp2(self.exponent)


def pot_exponent_range(bits: int):
    return -(1 << bits) + 1, 0


def quantize_pot(w, bits: int, scale=None) -> PoTCodes:
    """PoT codes with ``p = clip(round(log2|w/S|), -2^b + 1, 0)``.

    ``S`` defaults to ``max(w) - min(w)`` over the whole array; pass a
    broadcastable ``scale`` to quantize several filters at once. Exact zeros
    map to ``(+1, -2^b + 1)``.
    """
    w = np.asarray(w, dtype=np.float64)
    if scale is None:
        scale = w.max() - w.min() if w.size else 0.0
    scale = np.asarray(scale, dtype=np.float64)
    if np.any(scale <= 0):
        raise DegenerateFilterError("PoT scale needs a non-constant filter")
    lo, hi = pot_exponent_range(bits)
    mag = np.abs(w) / scale
    with np.errstate(divide="ignore"):
        p = np.rint(np.log2(mag))
    p = np.where(mag == 0, lo, np.clip(p, lo, hi)).astype(np.int64)
    sign = np.where(w < 0, -1, 1).astype(np.int64)
    return PoTCodes(sign, p, np.broadcast_to(scale, w.shape).copy(), bits)


def pot_codebook(bits: int, scale: float = 1.0):
    lo, hi = pot_exponent_range(bits)
    mags = scale * np.exp2(np.arange(lo, hi + 1, dtype=np.float64))
    return np.concatenate([-mags[::-1], mags])


@dataclass(frozen=True)
class APoTCodes:
    sign: np.ndarray
    p1: np.ndarray
    p2: np.ndarray
    zero: np.ndarray
    scale: np.ndarray

    def dequantize(self):
        mag = np.exp2(self.p1.astype(np.float64)) + np.exp2(self.p2.astype(np.float64))
        return np.where(self.zero, 0.0, self.sign * self.scale * mag)

    def pack(self):
        """6-bit codes as uint8: bit5 zero, bit4 sign, bits3-2 p1 index, bits1-0 p2 index."""
        i1 = -self.p1
        i2 = -self.p2 - 4
        neg = (self.sign < 0) & ~self.zero
        return ((self.zero.astype(np.uint8) << 5) | (neg.astype(np.uint8) << 4) | (i1 << 2) | i2).astype(np.uint8)

    @classmethod
    def unpack(cls, packed, scale):
        packed = np.asarray(packed, dtype=np.uint8).astype(np.int64)
        zero = (packed >> 5) & 1 == 1
        sign = np.where((packed >> 4) & 1 == 1, -1, 1)
        p1 = -((packed >> 2) & 3)
        p2 = -(packed & 3) - 4
        return cls(sign, p1, p2, zero, np.broadcast_to(np.asarray(scale, dtype=np.float64), packed.shape).copy())


def _apot_table():
    p1, p2 = np.meshgrid(APOT_P1, APOT_P2, indexing="ij")
    p1, p2 = p1.ravel(), p2.ravel()
    mag = np.exp2(p1.astype(np.float64)) + np.exp2(p2.astype(np.float64))
    order = np.argsort(mag, kind="stable")
    return mag[order], p1[order], p2[order]


_APOT_MAG, _APOT_E1, _APOT_E2 = _apot_table()


def apot_magnitudes():
    """Sorted unit-scale non-zero magnitudes ``2**p1 + 2**p2``."""
    return _APOT_MAG.copy()


def apot_codebook(scale: float = 1.0):
    """Every representable value at ``scale``: 16 negative, zero, 16 positive."""
    m = scale * _APOT_MAG
    return np.concatenate([-m[::-1], [0.0], m])


def apot_scale(w, axis=None):
    """Scale mapping the largest magnitude onto the top codeword (1.0 if all zero)."""
    top = np.abs(np.asarray(w, dtype=np.float64)).max(axis=axis, keepdims=axis is not None)
    return np.where(top > 0, top / APOT_TOP, 1.0)


def quantize_apot(w, scale=None) -> APoTCodes:
    """Nearest-codeword APoT quantization; ties go to the smaller magnitude."""
    w = np.asarray(w, dtype=np.float64)
    if scale is None:
        scale = apot_scale(w)
    scale = np.asarray(scale, dtype=np.float64)
    mag = np.abs(w) / scale
    levels = np.concatenate([[0.0], _APOT_MAG])
    hi = np.clip(np.searchsorted(levels, mag, side="left"), 1, len(levels) - 1)
    lo = hi - 1
    pick = np.where(levels[hi] - mag < mag - levels[lo], hi, lo)
    zero = pick == 0
    idx = np.maximum(pick - 1, 0)
    sign = np.where(w < 0, -1, 1).astype(np.int64)
    sign = np.where(zero, 1, sign)
    return APoTCodes(sign, _APOT_E1[idx], _APOT_E2[idx], zero, np.broadcast_to(scale, w.shape).copy())
