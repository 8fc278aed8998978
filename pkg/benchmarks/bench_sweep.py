"""Compare the compiled and pure-Python drift sweeps.

Usage: python benchmarks/bench_sweep.py [--n 26 51] [--repeat 5]

Prints one line per (grid, mode, backend) with the best wall time and the
largest difference from the compiled result.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from mfgc.drift import Kernel, _inverse_Z, drift_gradient, kernel_table
from mfgc.grid import SpaceTimeGrid
from mfgc.numham import HamiltonianParams
from mfgc.sweep import get_backend


def _inputs(n: int, seed: int = 0):
    grid = SpaceTimeGrid(n, n, 2, (-0.5, -0.5), (0.5, 0.5), 1.0)
    table = kernel_table(grid, Kernel("radial", 0.2))
    rng = np.random.default_rng(seed)
    m = rng.uniform(0.1, 1.0, grid.shape).ravel()
    u = rng.normal(size=grid.shape)
    ham = HamiltonianParams(0.9, 1.0)
    w = np.ascontiguousarray(drift_gradient(u, grid, ham).reshape(-1, 2))
    inv = _inverse_Z(m, table, 1e-12)
    v_old = rng.normal(size=(grid.n_nodes, 2))
    return grid, table, m, inv, w, v_old, ham.lt


def _best(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, nargs="+", default=[26, 51])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    try:
        backends = {"compiled": get_backend("compiled")}
    except ImportError:
        backends = {}
        print("compiled extension not built; timing the fallback only")
    backends["python"] = get_backend("python")
    print(f"{'grid':>8} {'mode':>13} {'backend':>9} {'nnz':>9} {'seconds':>10} {'max diff':>10}")
    for n in args.n:
        grid, table, m, inv, w, v_old, lt = _inputs(n)
        indptr, indices, data = table.arrays
        for gs in (False, True):
            ref = None
            for name, mod in backends.items():
                out = np.empty_like(v_old)

                def run():
                    mod.drift_sweep(indptr, indices, data, m, inv, w, v_old, out, lt, gs)

                t = _best(run, args.repeat)
                if ref is None:
                    ref = out.copy()
                diff = float(np.max(np.abs(out - ref)))
                mode = "gauss-seidel" if gs else "jacobi"
                print(f"{n:>4}x{n:<3} {mode:>13} {name:>9} {table.nnz:>9} {t:>10.2e} {diff:>10.1e}")


if __name__ == "__main__":
    main()
