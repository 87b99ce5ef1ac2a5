"""Time the trajectory and product kernels, numba against numpy.

    python3 benchmarks/bench_walk.py --trajectories 200 --delta 0.05
"""
import argparse
import time

import numpy as np

from contmeas import _kernels
from contmeas.dynamics import ClosedFormSchedule
from contmeas.matcore import random_unitary
from contmeas.walk import grid_size, step_table


def run_walks(kernel, plus, minus, n_half, psi0, count, seed):
    rng = np.random.default_rng(seed)
    total = 0
    for _ in range(count):
        psi = psi0.copy()
        pos, h, status = 0, np.uint64(_kernels.FNV_OFFSET), _kernels.RUNNING
        while status == _kernels.RUNNING:
            pos, steps, h, status = kernel(plus, minus, n_half, pos, psi, rng.random(4096), np.uint64(h), 1e-9)
            total += steps
    return total


def timed(fn, *args, repeat=3):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--dim", type=int, default=4)
    ap.add_argument("--delta", type=float, default=0.05)
    ap.add_argument("--x-max", type=float, default=2.0)
    ap.add_argument("--trajectories", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    if not _kernels.HAVE_NUMBA:
        raise SystemExit("numba is not installed")

    rng = np.random.default_rng(args.seed)
    sch = ClosedFormSchedule.from_centers(rng.uniform(-1, 1, args.dim), frame=random_unitary(args.dim, rng), x_max=2 * args.x_max)
    n_half = grid_size(args.x_max, args.delta)
    plus, minus = step_table(sch, args.delta, n_half)
    psi0 = np.zeros(args.dim, dtype=complex)
    psi0[0] = 1.0

    # warm up the jit so compile time is not counted
    run_walks(_kernels.trajectory_chunk_numba, plus, minus, n_half, psi0, 1, args.seed)
    _kernels.ordered_product_numba(plus[:2])

    print(f"dim={args.dim} delta={args.delta} X={args.x_max} N={n_half} trajectories={args.trajectories}")
    rows = []
    for name, kernel in (("numpy", _kernels.trajectory_chunk_numpy), ("numba", _kernels.trajectory_chunk_numba)):
        t, steps = timed(run_walks, kernel, plus, minus, n_half, psi0, args.trajectories, args.seed)
        rows.append((name, t, steps))
        print(f"  trajectory  {name:5s} {t:8.4f}s  {steps / t:12.0f} steps/s")
    assert rows[0][2] == rows[1][2], "backends took different paths"
    print(f"  trajectory speedup {rows[0][1] / rows[1][1]:.1f}x")

    mats = np.ascontiguousarray(np.sqrt(2) * plus)
    tp, a = timed(_kernels.ordered_product_numpy, mats)
    tn, b = timed(_kernels.ordered_product_numba, mats)
    print(f"  product     numpy {tp:8.4f}s  numba {tn:8.4f}s  speedup {tp / tn:.1f}x  max diff {np.max(np.abs(a - b)):.1e}")


if __name__ == "__main__":
    main()
