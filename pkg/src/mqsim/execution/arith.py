"""Integer tensors, wide accumulators and the shift-add multiply."""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from ..quant.pot import APOT_P_MIN, APoTCodes, PoTCodes
from ..quant.uniform import QuantParams, dequantize_uniform

ACC_BITS = 32
ACC_LIMIT = 1 << (ACC_BITS - 1)


class AccumulatorOverflowError(ArithmeticError):
    pass


@dataclass(frozen=True)
class IntTensor:
    codes: np.ndarray
    params: QuantParams

    def __post_init__(self):
        codes = np.asarray(self.codes, dtype=np.int64)
        if codes.size and (codes.min() < 0 or codes.max() > self.params.qmax):
            raise ValueError("codes outside the quantizer range")
        object.__setattr__(self, "codes", codes)

    @property
    def shape(self) -> tuple:
        return self.codes.shape

    def signed(self):
        """Codes with the zero point removed."""
        return self.codes - self.params.zero_point

    def dequantize(self):
        return dequantize_uniform(self.codes, self.params)


@dataclass(frozen=True)
class WideAccumulator:
    """Integer partial sums; the represented value is ``value * 2**fixed_point_shift``."""

    value: np.ndarray
    fixed_point_shift: int = 0

    def exact(self):
        """Exact rational values (object array of ``Fraction``)."""
        f = Fraction(2) ** self.fixed_point_shift
        v = np.asarray(self.value)
        return np.vectorize(lambda x: Fraction(int(x)) * f, otypes=[object])(v) if v.ndim else Fraction(int(v)) * f

    def to_float(self):
        return np.ldexp(np.asarray(self.value, dtype=np.float64), self.fixed_point_shift)


def shift_multiply(a, code, p_min: int = APOT_P_MIN) -> WideAccumulator:
    """Multiply signed activation codes by APoT (or single-term PoT) codes with shifts only.

    Returns ``s * ((a << (p1 - p_min)) + (a << (p2 - p_min)))`` with
    ``fixed_point_shift = p_min``; zero codes give 0. The scale ``S`` of the
    code is not applied.
    """
    a = np.asarray(a, dtype=np.int64)
    if isinstance(code, APoTCodes):
        sh1 = np.asarray(code.p1, dtype=np.int64) - p_min
        sh2 = np.asarray(code.p2, dtype=np.int64) - p_min
        if np.any(sh1 < 0) or np.any(sh2 < 0):
            raise ValueError("exponent below p_min")
        mag = np.left_shift(a, sh1) + np.left_shift(a, sh2)
        value = np.where(code.zero, 0, np.asarray(code.sign) * mag)
    elif isinstance(code, PoTCodes):
        sh = np.asarray(code.exponent, dtype=np.int64) - p_min
        if np.any(sh < 0) or np.any(sh > 62 - 9):
            raise ValueError("PoT exponent outside the shift range for this p_min")
        value = np.asarray(code.sign) * np.left_shift(a, sh)
    else:
        raise TypeError(f"unsupported code type {type(code).__name__}")
    return WideAccumulator(np.asarray(value, dtype=np.int64), p_min)


def accumulator_bound(fan_in: int, a_max: int, w_max: int) -> int:
    """Worst-case |partial sum| for ``fan_in`` products of magnitudes a_max, w_max."""
    return int(fan_in) * int(a_max) * int(w_max)


def check_accumulator(bound: int, where: str = "") -> None:
    if bound >= ACC_LIMIT:
        raise AccumulatorOverflowError(f"{where}: worst-case partial sum {bound} exceeds the {ACC_BITS}-bit accumulator")
