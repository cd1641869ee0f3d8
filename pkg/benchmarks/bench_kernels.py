"""Compiled kernels vs the numpy fallback.

Times the two hot kernels on full-size inputs and a full boundary-field
synthesis for each backend, and checks that the backends agree.

    python3 benchmarks/bench_kernels.py [--scenario point3] [--repeat 3]
"""

import argparse
import time

import numpy as np

from rgfwave import forward, kernels
from rgfwave.grid import build_grid
from rgfwave.scenario import builtin_scenarios


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--scenario", default="point3")
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--threads", type=int, default=1)
    args = p.parse_args()

    try:
        cy = kernels.get_backend("cython")[1]
    except ImportError:
        raise SystemExit("compiled extension not built; reinstall with Cython available")
    py = kernels.get_backend("python")[1]
    scn = builtin_scenarios()[args.scenario]
    grid = build_grid(scn.R, scn.J, scn.K)
    rows = []

    # history convolution at the last step of a full-length march
    op = forward.build_operator(grid, scn.c, scn.dt)
    prof = np.ascontiguousarray(op.profiles)
    row = np.ascontiguousarray(op.degree_of)
    hist = np.random.default_rng(0).normal(size=(scn.n_steps + 1, len(row)))
    step = scn.n_steps
    tp, a = best_of(lambda: py.history_sum(prof, row, hist, step), args.repeat)
    tc, b = best_of(lambda: cy.history_sum(prof, row, hist, step, args.threads), args.repeat)
    rows.append(("history_sum (one step)", tp, tc, np.max(np.abs(a - b))))

    # retarded-time solve for one source over every node and 100 time rows
    spec = scn.sources[0]
    codes, consts, off = forward.source_program(spec)
    t = np.repeat(np.linspace(10.0, 60.0, 100), grid.n_nodes)
    r = np.tile(grid.points, (100, 1))
    dip = int(spec.kind == "dipole")
    tp, a = best_of(lambda: py.retarded_eval(codes, consts, off, dip, t, r, scn.c, 1e-12, 100, 1), args.repeat)
    tc, b = best_of(lambda: cy.retarded_eval(codes, consts, off, dip, t, r, scn.c, 1e-12, 100, args.threads), args.repeat)
    rows.append(("retarded_eval (64800 points)", tp, tc, np.max(np.abs(a[0] - b[0]))))

    # full synthesis of the boundary field
    tp, fa = best_of(lambda: forward.march_boundary_field(scn, grid, backend="python"), 1)
    tc, fb = best_of(lambda: forward.march_boundary_field(scn, grid, args.threads, backend="cython"), 1)
    rows.append((f"march_boundary_field ({args.scenario})", tp, tc, np.max(np.abs(fa.phi - fb.phi))))

    print(f"{'kernel':34s} {'python [s]':>11s} {'cython [s]':>11s} {'speedup':>8s} {'max |diff|':>11s}")
    for name, tp, tc, diff in rows:
        print(f"{name:34s} {tp:11.4f} {tc:11.4f} {tp / tc:8.1f} {diff:11.2e}")


if __name__ == "__main__":
    main()
