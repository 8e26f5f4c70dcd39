from __future__ import annotations

import enum

import numpy as np

from .pot import apot_scale, quantize_apot
from .uniform import Granularity, calibrate_affine, dequantize_uniform, quantize_uniform

UNIFORM_BITS = 8


class SchemeChoice(str, enum.Enum):
    UNIFORM8 = "Uniform8"
    APOT = "APoT"


def _as_filters(w):
    w = np.asarray(w, dtype=np.float64)
    return w.reshape(w.shape[0], -1)


def uniform_roundtrip(w, bits=UNIFORM_BITS):
    """Per-filter uniform quantize/dequantize of ``w`` (axis 0 = filters)."""
    params = calibrate_affine(w, bits, Granularity.PER_FILTER)
    return dequantize_uniform(quantize_uniform(w, params), params)


def apot_roundtrip(w):
    w = np.asarray(w, dtype=np.float64)
    flat = _as_filters(w)
    return quantize_apot(flat, apot_scale(flat, axis=1)).dequantize().reshape(w.shape)


def scheme_errors(w, bits=UNIFORM_BITS):
    """Per-filter MSE under uniform and APoT quantization, as two arrays."""
    flat = _as_filters(w)
    mse_u = np.mean((flat - uniform_roundtrip(flat, bits)) ** 2, axis=1)
    mse_a = np.mean((flat - apot_roundtrip(flat)) ** 2, axis=1)
    return mse_u, mse_a


def select_schemes(w, bits=UNIFORM_BITS):
    """Minimum-MSE scheme per filter; ties keep uniform."""
    mse_u, mse_a = scheme_errors(w, bits)
    # built element-wise: numpy coerces str-valued enum members to truncated strings
    out = np.empty(mse_u.shape, dtype=object)
    for i, apot in enumerate((mse_a < mse_u).tolist()):
        out[i] = SchemeChoice.APOT if apot else SchemeChoice.UNIFORM8
    return out


def select_scheme(filt, bits=UNIFORM_BITS) -> SchemeChoice:
    """Scheme with the smaller quantization MSE for one filter."""
    filt = np.asarray(filt, dtype=np.float64).reshape(1, -1)
    return SchemeChoice(select_schemes(filt, bits)[0])
