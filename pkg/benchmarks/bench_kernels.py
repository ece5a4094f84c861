"""Time the product-kernel sums under both backends.

    python benchmarks/bench_kernels.py [--n 2000] [--m 4000] [--repeat 5]

The numba twin is compiled once before timing.  Both backends must agree to
1e-12 relative error; the script exits non-zero otherwise.
"""

import argparse
import sys
import time

import numpy as np

from empgateaux import _kernels
from empgateaux._accel import HAVE_NUMBA


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=2000, help="kernel centers")
    ap.add_argument("--m", type=int, default=4000, help="query points")
    ap.add_argument("--d", type=int, default=1)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(0)
    centers = rng.uniform(size=(args.n, args.d))
    points = rng.uniform(size=(args.m, args.d))
    weights = rng.uniform(size=(args.n, 3))

    status = 0
    for name, code in (("uniform", _kernels.UNIFORM), ("gaussian", _kernels.GAUSSIAN)):
        t_np, ref = best_of(lambda: _kernels.kde_sums(points, centers, weights, 0.05, code, backend="numpy"), args.repeat)
        line = f"{name:9s} numpy {t_np * 1e3:9.2f} ms"
        if HAVE_NUMBA:
            _kernels.kde_sums(points[:2], centers, weights, 0.05, code, backend="numba")
            t_nb, out = best_of(lambda: _kernels.kde_sums(points, centers, weights, 0.05, code, backend="numba"), args.repeat)
            err = float(np.max(np.abs(out - ref)) / max(np.max(np.abs(ref)), 1e-300))
            line += f" | numba {t_nb * 1e3:9.2f} ms | speedup {t_np / t_nb:6.1f}x | rel err {err:.1e}"
            if err > 1e-12:
                status = 1
        else:
            line += " | numba unavailable"
        print(line)
    return status


if __name__ == "__main__":
    sys.exit(main())
