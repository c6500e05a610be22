"""Time the numba and numpy paths of the inner loops on representative sizes.

Run ``python benchmarks/bench_kernels.py``; set ``RS_KERNELS_THREADS`` to
cap the numba thread pool.
"""

import argparse
import timeit

import numpy as np

from rs_kernels import _kernels


def cases(n, rank, points, replicas, window):
    rng = np.random.default_rng(0)
    U = [rng.standard_normal((n, rank)) for _ in range(3)]
    w = rng.standard_normal(rank)
    idx = rng.integers(0, n, size=(points, 3))
    block = rng.standard_normal((window,) * 3)
    corners = rng.integers(-window // 2, n - window // 2, size=(replicas, 3))
    coeffs = rng.choice([-1.0, 1.0], replicas)
    f = rng.standard_normal((n, n, n))
    kern = rng.standard_normal(window)
    return {
        "cp_gather": lambda nb: _kernels.cp_gather(*U, w, idx, use_numba=nb),
        "scatter_blocks": lambda nb: _kernels.scatter_blocks(np.zeros((n, n, n)), block, corners, coeffs,
                                                             use_numba=nb),
        "conv1d_axis": lambda nb: _kernels.conv1d_axis(f, kern, 1, use_numba=nb),
        "replica_gather": lambda nb: _kernels.replica_gather(block, corners, coeffs, idx, use_numba=nb),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=129)
    ap.add_argument("--rank", type=int, default=64)
    ap.add_argument("--points", type=int, default=200_000)
    ap.add_argument("--replicas", type=int, default=400)
    ap.add_argument("--window", type=int, default=15)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    print(f"backend default: {_kernels.backend()}  (numba available: {_kernels.HAVE_NUMBA})")
    print(f"{'kernel':<16}{'numpy [ms]':>12}{'numba [ms]':>12}{'speedup':>10}{'max diff':>12}")
    for name, fn in cases(args.n, args.rank, args.points, args.replicas, args.window).items():
        t_np = min(timeit.repeat(lambda: fn(False), number=1, repeat=args.repeat))
        if _kernels.HAVE_NUMBA:
            fn(True)  # compile outside the timing
            t_nb = min(timeit.repeat(lambda: fn(True), number=1, repeat=args.repeat))
            diff = float(np.max(np.abs(fn(True) - fn(False))))
            print(f"{name:<16}{1e3 * t_np:>12.2f}{1e3 * t_nb:>12.2f}{t_np / t_nb:>10.1f}{diff:>12.1e}")
        else:
            print(f"{name:<16}{1e3 * t_np:>12.2f}{'-':>12}{'-':>10}{'-':>12}")


if __name__ == "__main__":
    main()
