"""Integer accumulation kernels for the quantized functional path.

Every kernel exists twice: a numba loop nest and a numpy formulation. Both
return identical int64 arrays; ``MQSIM_DISABLE_NUMBA`` selects which one the
public names point at (``matmul_uniform`` always uses the numpy one, which
is faster). The numpy variants stay importable as ``*_numpy`` so
tests and the benchmark can compare the two paths directly.
"""
import numpy as np

from ._jit import HAVE_NUMBA, njit

# float64 holds every integer below 2**53 exactly
_EXACT_FLOAT_LIMIT = 2**53
_CHUNK_ELEMS = 1 << 22


def matmul_uniform_numpy(a, w):
    """Integer ``w @ a`` for activations ``a`` (C, P) and weights ``w`` (F, C)."""
    a = np.asarray(a, dtype=np.int64)
    w = np.asarray(w, dtype=np.int64)
    bound = int(np.abs(a).max(initial=0)) * int(np.abs(w).max(initial=0)) * a.shape[0]
    if bound < _EXACT_FLOAT_LIMIT:
        out = w.astype(np.float64) @ a.astype(np.float64)
        return np.rint(out).astype(np.int64)
    return w @ a


def matmul_shift_numpy(a, sign, e1, e2, zero):
    """Shift-add product of activations with two-term power-of-two weights.

    ``a`` is (C, P); ``sign``, ``e1``, ``e2`` and ``zero`` are (F, C). Each
    weight contributes ``sign * ((a << e1) + (a << e2))`` unless ``zero``.
    """
    a = np.asarray(a, dtype=np.int64)
    sign = np.asarray(sign, dtype=np.int64)
    e1 = np.asarray(e1, dtype=np.int64)
    e2 = np.asarray(e2, dtype=np.int64)
    zero = np.asarray(zero, dtype=bool)
    f, c = sign.shape
    p = a.shape[1]
    out = np.empty((f, p), dtype=np.int64)
    step = max(1, _CHUNK_ELEMS // max(1, c * p))
    for lo in range(0, f, step):
        hi = min(f, lo + step)
        terms = np.left_shift(a[None, :, :], e1[lo:hi, :, None])
        terms += np.left_shift(a[None, :, :], e2[lo:hi, :, None])
        terms *= np.where(zero[lo:hi], 0, sign[lo:hi])[:, :, None]
        out[lo:hi] = terms.sum(axis=1)
    return out


def dwconv_numpy(a, w, stride):
    """Depthwise integer convolution over an already padded input.

    ``a`` is (C, Hp, Wp), ``w`` is (C, kh, kw); output is (C, Ho, Wo).
    """
    a = np.asarray(a, dtype=np.int64)
    w = np.asarray(w, dtype=np.int64)
    kh, kw = w.shape[1:]
    win = np.lib.stride_tricks.sliding_window_view(a, (kh, kw), axis=(1, 2))
    win = win[:, ::stride, ::stride]
    return np.einsum("chwij,cij->chw", win, w, dtype=np.int64, optimize=False)


@njit(cache=True)
def _matmul_uniform_jit(a, w):
    c, p = a.shape
    f = w.shape[0]
    out = np.zeros((f, p), dtype=np.int64)
    for i in range(f):
        for k in range(c):
            wk = w[i, k]
            if wk == 0:
                continue
            for j in range(p):
                out[i, j] += wk * a[k, j]
    return out


@njit(cache=True)
def _matmul_shift_jit(a, sign, e1, e2, zero):
    c, p = a.shape
    f = sign.shape[0]
    out = np.zeros((f, p), dtype=np.int64)
    for i in range(f):
        for k in range(c):
            if zero[i, k]:
                continue
            s1 = e1[i, k]
            s2 = e2[i, k]
            if sign[i, k] > 0:
                for j in range(p):
                    out[i, j] += (a[k, j] << s1) + (a[k, j] << s2)
            else:
                for j in range(p):
                    out[i, j] -= (a[k, j] << s1) + (a[k, j] << s2)
    return out


@njit(cache=True)
def _dwconv_jit(a, w, stride):
    c, hp, wp = a.shape
    kh, kw = w.shape[1], w.shape[2]
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    out = np.zeros((c, ho, wo), dtype=np.int64)
    for ch in range(c):
        for y in range(ho):
            for x in range(wo):
                acc = 0
                for i in range(kh):
                    for j in range(kw):
                        acc += a[ch, y * stride + i, x * stride + j] * w[ch, i, j]
                out[ch, y, x] = acc
    return out


def matmul_uniform_jit(a, w):
    return _matmul_uniform_jit(np.ascontiguousarray(a, dtype=np.int64), np.ascontiguousarray(w, dtype=np.int64))


def matmul_shift_jit(a, sign, e1, e2, zero):
    return _matmul_shift_jit(
        np.ascontiguousarray(a, dtype=np.int64),
        np.ascontiguousarray(sign, dtype=np.int64),
        np.ascontiguousarray(e1, dtype=np.int64),
        np.ascontiguousarray(e2, dtype=np.int64),
        np.ascontiguousarray(zero, dtype=np.bool_),
    )


def dwconv_jit(a, w, stride):
    return _dwconv_jit(np.ascontiguousarray(a, dtype=np.int64), np.ascontiguousarray(w, dtype=np.int64), int(stride))


# the exact float64 BLAS product beats the loop nest, so it serves both backends
matmul_uniform = matmul_uniform_numpy
if HAVE_NUMBA:
    matmul_shift = matmul_shift_jit
    dwconv = dwconv_jit
else:
    matmul_shift = matmul_shift_numpy
    dwconv = dwconv_numpy
