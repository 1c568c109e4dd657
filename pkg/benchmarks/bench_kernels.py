"""Compare the compiled pair kernel with its numpy twin.

Usage: python benchmarks/bench_kernels.py [--points 300] [--f 12] [--repeat 3]
"""
import argparse
import time

import numpy as np

from cfslab import _kernels_py, pairs
from cfslab.operators import random_operator

try:
    from cfslab import _kernels
except ImportError:
    _kernels = None


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--points", type=int, default=300)
    ap.add_argument("--f", type=int, default=12)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print("%-4s %-8s %12s %12s %8s" % ("n", "pairs", "numpy [s]", "compiled [s]", "speedup"))
    for n in (1, 2, 3):
        pts = [random_operator(rng, args.f, n) for _ in range(args.points)]
        fa, la, _ = pairs.stack(pts)
        g = np.ascontiguousarray(fa.conj().T @ fa)
        tp = best_of(lambda: _kernels_py.chain_spectra(g, la, la), args.repeat)
        if _kernels is None:
            print("%-4d %-8d %12.4f %12s %8s" % (n, args.points ** 2, tp, "n/a", "n/a"))
            continue
        tc = best_of(lambda: _kernels.chain_spectra(g, la, la), args.repeat)
        print("%-4d %-8d %12.4f %12.4f %8.1f" % (n, args.points ** 2, tp, tc, tp / tc))


if __name__ == "__main__":
    main()
