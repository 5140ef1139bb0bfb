"""Benchmark the compiled matmul kernel against the numpy fallback.

Both backends accumulate over the shared dimension in the same order, so
their outputs must be bit-identical — this script asserts that on every
size before timing. Run from the repo root after installing the package:

    python3 benchmarks/bench_matmul.py
    python3 benchmarks/bench_matmul.py --sizes 32,128,512 --repeats 7
"""

import argparse
import timeit

import numpy as np

from egmf.kernels import BACKEND, python_matmul
from egmf.rng import RngState


def compiled_matmul():
    try:
        from egmf.kernels._matmulx import matmul_f64
    except ImportError:
        return None
    return lambda a, b: matmul_f64(
        np.ascontiguousarray(a), np.ascontiguousarray(b)
    )


def best_of(fn, repeats):
    return min(timeit.repeat(fn, number=1, repeat=repeats))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="16,64,128,256",
                    help="comma-separated square matrix sizes")
    ap.add_argument("--repeats", type=int, default=5,
                    help="timing repeats per size (best is reported)")
    args = ap.parse_args()
    sizes = [int(s) for s in args.sizes.split(",")]

    cython = compiled_matmul()
    print(f"backend selected at import: {BACKEND}")
    if cython is None:
        print("compiled kernel unavailable; nothing to compare "
              "(build it with: pip install -e . --no-build-isolation)")
        return

    rng = RngState(0)
    print(f"{'n':>6} {'cython':>12} {'python':>12} {'speedup':>9}  identical")
    for n in sizes:
        a = rng.normal((n, n))
        b = rng.normal((n, n))
        c_fast = cython(a, b)
        c_slow = python_matmul(a, b)
        same = c_fast.tobytes() == c_slow.tobytes()
        assert same, f"backends disagree at n={n}"
        t_fast = best_of(lambda: cython(a, b), args.repeats)
        t_slow = best_of(lambda: python_matmul(a, b), args.repeats)
        print(f"{n:>6} {t_fast * 1e3:>10.3f}ms {t_slow * 1e3:>10.3f}ms "
              f"{t_slow / t_fast:>8.1f}x  {same}")


if __name__ == "__main__":
    main()
