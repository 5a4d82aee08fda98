#!/usr/bin/env python3
"""Time the compiled kernels against their numpy fallbacks.

Run ``python3 benchmarks/bench_kernels.py [--repeat N] [--scale S]``.  Each
kernel is called once per backend to warm up (numba compiles or loads its
cache then), timed over ``--repeat`` calls, and the outputs are compared.
"""

import argparse
import os
import time

import numpy as np

from fracbdsde import _backend, kernels
from fracbdsde.anticipating import DRIFTS
from fracbdsde.girsanov import GammaSpec, build_frame, log_epsilon_transformed
from fracbdsde.grid import Hurst, TimeGrid
from fracbdsde.paths import sample_ensemble


def cases(scale: int):
    g = TimeGrid(1.0, 64)
    h = Hurst(0.3)
    ens = sample_ensemble(g, h, 1, 2000 * scale, 1)
    frame = build_frame(GammaSpec.pieces(g, [0.0, 0.5], [0.5, -0.25]), h)
    le = log_epsilon_transformed(ens, frame)
    xi = np.tile(ens.B[:, 32:33], (1, g.n_steps + 1))
    params = DRIFTS["mixed"].params
    fine = TimeGrid(1.0, 1024 * scale)
    values = np.sin(2 * fine.nodes) + fine.nodes
    rows = np.arange(20_000 * scale)
    return {
        "standard_normals": lambda: kernels.standard_normals(42, 0, rows, 64),
        "right_integral_sum": lambda: kernels.right_integral_sum(values, fine.dt, 0.3, fine.nodes),
        "right_marchaud_sum": lambda: kernels.right_marchaud_sum(values, fine.dt, 0.3, fine.nodes),
        "zeta_trajectory": lambda: kernels.zeta_trajectory(le, ens.B, 0.7, g.dt, 4, params=params),
        "anticipating_sweep": lambda: kernels.anticipating_sweep(le, ens.B, frame.cross, frame.b_offset, xi,
                                                                 g.dt, 1, params=params),
    }


def timed(fn, repeat):
    fn()
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=3)
    parser.add_argument("--scale", type=int, default=1)
    args = parser.parse_args()
    if not _backend.HAVE_NUMBA:
        raise SystemExit("numba is not importable; nothing to compare")
    print(f"workers: {_backend.configure_workers()}")
    print(f"{'kernel':<22}{'numpy [ms]':>12}{'numba [ms]':>12}{'speed-up':>10}{'max |diff|':>12}")
    for name, fn in cases(args.scale).items():
        os.environ[_backend.BACKEND_ENV] = "numpy"
        slow, ref = timed(fn, args.repeat)
        os.environ[_backend.BACKEND_ENV] = "numba"
        fast, out = timed(fn, args.repeat)
        diff = np.nanmax(np.abs(out - ref))
        print(f"{name:<22}{1e3 * slow:>12.2f}{1e3 * fast:>12.2f}{slow / fast:>10.1f}{diff:>12.2e}")


if __name__ == "__main__":
    main()
