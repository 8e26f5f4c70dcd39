"""Time the numba kernels against their numpy fallbacks on B1-sized operands.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import timeit

import numpy as np

from mqsim import _jit, kernels


def cases(rng):
    # shapes of a mid-network B1 layer: 128 channels, 14x14 tokens
    a = rng.integers(-128, 128, size=(128, 196))
    w = rng.integers(-255, 256, size=(128, 128))
    sign = rng.choice([-1, 1], size=(128, 128))
    e1, e2 = rng.integers(4, 8, size=(128, 128)), rng.integers(0, 4, size=(128, 128))
    zero = rng.random((128, 128)) < 0.1
    img = rng.integers(-128, 128, size=(256, 30, 30))
    k = rng.integers(-8, 8, size=(256, 3, 3))
    return {
        "matmul_uniform": (kernels.matmul_uniform_numpy, kernels.matmul_uniform_jit, (a, w)),
        "matmul_shift": (kernels.matmul_shift_numpy, kernels.matmul_shift_jit, (a, sign, e1, e2, zero)),
        "dwconv": (kernels.dwconv_numpy, kernels.dwconv_jit, (img, k, 1)),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    print(f"backend: {_jit.backend()}")
    print(f"{'kernel':<16} {'numpy_ms':>10} {'jit_ms':>10} {'speedup':>8}")
    for name, (np_fn, jit_fn, argv) in cases(np.random.default_rng(0)).items():
        assert np.array_equal(np_fn(*argv), jit_fn(*argv))  # also warms the jit
        t_np = min(timeit.repeat(lambda: np_fn(*argv), number=1, repeat=args.repeat)) * 1e3
        t_jit = min(timeit.repeat(lambda: jit_fn(*argv), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<16} {t_np:>10.3f} {t_jit:>10.3f} {t_np / t_jit:>8.2f}")


if __name__ == "__main__":
    main()
