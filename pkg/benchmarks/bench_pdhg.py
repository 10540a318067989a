"""Time the primal-dual inner loop with the compiled and the numpy backend.

Usage::

    python3 benchmarks/bench_pdhg.py [--sizes 16,32,64] [--iters 500] [--repeat 3]

For each grid size and nonlinearity the same fixed number of iterations is
run from the same state with both backends; the script reports the best
wall time, the speed-up and the largest difference between the iterates.
"""

import argparse
import time

import numpy as np

from minflow import _kernels
from minflow import nonlinearity as nl
from minflow.grid import boundary_data, build_grid
from minflow.saddle import ProblemData, norm_estimate_K

CASES = {
    "quadratic": (nl.quadratic(), nl.quadratic_cost()),
    "pme(m=2)": (nl.pme(2.0), nl.quadratic_cost()),
    "pme(m=3.5), p=3": (nl.pme(3.5), nl.ppower_cost(3.0)),
    "stefan": (nl.stefan(0.5, 0.3), nl.quadratic_cost()),
    "heleshaw": (nl.heleshaw(), nl.quadratic_cost()),
}


def problem(n, beta, cost, seed=0):
    rng = np.random.default_rng(seed)
    grid = build_grid(2, (n, n), (1.0, 1.0), {"left": "dirichlet", "right": "neumann",
                                              "bottom": "dirichlet", "top": "neumann"})
    pd = ProblemData(grid=grid, bd=boundary_data(grid, g=0.1, pi=0.2), mu=rng.uniform(0, 0.5, grid.ncells),
                     chi=np.zeros(grid.nfaces), alpha=1, tau_scale=0.01, beta=beta, cost=cost)
    kp = _kernels.KernelProblem(G=pd.G, Df=pd.Df, wc=np.ascontiguousarray(grid.wc), wf=pd.wf_free,
                                b=np.ascontiguousarray(pd.b), gs=pd.gs_free, c_cells=pd.c_cells,
                                k_free=pd.k_free, beta=beta, cost=cost, alpha=1.0, tau_s=0.01, theta=1.0)
    return pd, kp, 1.0 / norm_estimate_K(pd)


def time_backend(pd, kp, step, backend, iters, repeat):
    best, state = np.inf, None
    for _ in range(repeat):
        st = _kernels.KernelState(rho=np.zeros(pd.grid.ncells), phi=np.zeros(pd.free.size),
                                  eta=np.zeros(pd.grid.ncells), tau=step, sigma=step)
        t0 = time.perf_counter()
        _kernels.run_chunk(kp, st, iters, backend=backend)
        best = min(best, time.perf_counter() - t0)
        state = st
    return best, state


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="16,32,64", help="comma separated n for n x n grids")
    ap.add_argument("--iters", type=int, default=500)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    if not _kernels.HAVE_COMPILED:
        print("compiled kernel not available; build with `pip install -e . --no-build-isolation`")
        return 1
    sizes = [int(s) for s in args.sizes.split(",")]
    print(f"{'case':<18s} {'grid':>7s} {'python ms':>10s} {'compiled ms':>12s} {'speed-up':>9s} {'max diff':>10s}")
    for name, (beta, cost) in CASES.items():
        for n in sizes:
            pd, kp, step = problem(n, beta, cost)
            tp, sp_ = time_backend(pd, kp, step, "python", args.iters, args.repeat)
            tc, sc_ = time_backend(pd, kp, step, "compiled", args.iters, args.repeat)
            diff = max(float(np.max(np.abs(getattr(sp_, k) - getattr(sc_, k)))) for k in ("rho", "phi", "eta"))
            print(f"{name:<18s} {f'{n}x{n}':>7s} {1e3 * tp:10.1f} {1e3 * tc:12.1f} {tp / tc:8.1f}x {diff:10.1e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
