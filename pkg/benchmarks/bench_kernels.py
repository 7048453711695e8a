"""Compare the compiled and pure-numpy kernel backends.

Usage: python3 benchmarks/bench_kernels.py [--repeat 5]

Times full correlation-matrix assembly (values only, and values with the
seven-parameter gradient) on a 32-element ULA over 2 and 7 frames, and
checks that both backends agree.
"""

import argparse
import timeit

import numpy as np

from stempredict import _backend
from stempredict.stem_kernel import AntennaArray, StemHyper, correlation_matrix, correlation_matrix_grad


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if _backend.compiled_impl is None:
        raise SystemExit("compiled extension not built; run 'pip install -e . --no-build-isolation'")

    h = StemHyper(1.0, [3.0, 0.0, 12.0], [2.0, 0.0, 9.0])
    array = AntennaArray.ula(32)
    print(f"{'case':<26}{'python ms':>12}{'cython ms':>12}{'speedup':>10}{'max diff':>12}")
    for frames in (2, 7):
        P = array.coords(np.arange(frames) * 0.625e-3)
        cases = (
            ("matrix", lambda b: (correlation_matrix(P, P, h, backend=b),)),
            ("matrix+grad", lambda b: correlation_matrix_grad(P, h, backend=b)),
        )
        for label, run in cases:
            ms = {b: min(timeit.repeat(lambda: run(b), number=1, repeat=args.repeat)) * 1e3
                  for b in ("python", "cython")}
            diff = max(float(np.max(np.abs(x - y))) for x, y in zip(run("python"), run("cython")))
            case = f"{label} N={len(P)}"
            print(f"{case:<26}{ms['python']:>12.2f}{ms['cython']:>12.2f}"
                  f"{ms['python'] / ms['cython']:>10.1f}{diff:>12.1e}")

if __name__ == "__main__":
    main()
