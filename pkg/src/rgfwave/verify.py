"""Self-check suites run by ``rgfwave verify``.

Each suite returns ``(passed, message)``; :func:`run_all` prints one line per
suite and returns whether all passed.
"""

import time

import numpy as np
from scipy.special import gamma

from . import forward
from .expr import eta_prime
from .grid import build_grid, surface_integral
from .inversion import (
    InversionConfig,
    confluent_vandermonde,
    count_sources,
    det_formula,
    hankel_dets,
    reconstruct_frame,
)
from .oracles import moments, radial_boundary_field, random_nodes, random_sources, synthetic_slice
from .scenario import builtin_scenarios, eval_source, scenario_from_dict


def sphere_monomial(a, b, c, R=1.0):
    """Exact ``int x^a y^b z^c dS`` over the sphere of radius ``R``."""
    if a % 2 or b % 2 or c % 2:
        return 0.0
    g = gamma((a + 1) / 2) * gamma((b + 1) / 2) * gamma((c + 1) / 2) / gamma((a + b + c + 3) / 2)
    return 2.0 * g * R ** (a + b + c + 2)


def check_quadrature(J=8, K=16, R=2.0):
    """Monomials of degree ``< min(2J, K)`` integrate exactly."""
    grid = build_grid(R, J, K)
    worst = 0.0
    deg = min(2 * J, K) - 1
    for a in range(deg + 1):
        for b in range(deg + 1 - a):
            for c in range(deg + 1 - a - b):
                f = grid.x**a * grid.y**b * grid.z**c
                exact = sphere_monomial(a, b, c, R)
                worst = max(worst, abs(surface_integral(grid, f) - exact) / max(1.0, abs(exact)))
    return worst <= 1e-10, f"max relative error {worst:.1e} up to degree {deg}"


def bisection_retarded_time(spec, t, r, c, tol=1e-14):
    """Solve ``t = s + |r - p(s)|/c`` for one evaluation point by bisection."""

    def f(s):
        p, _ = eval_source(spec, s)
        return t - s - np.linalg.norm(r - p) / c

    lo, hi = t - 10.0, t
    while f(lo) < 0:
        lo -= 10.0
    while hi - lo > tol * max(1.0, abs(t)):
        mid = 0.5 * (lo + hi)
        if f(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def check_retarded_time(n=40, seed=0):
    """Production (Newton) retarded times agree with bisection on the built-in sources."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for scn in builtin_scenarios().values():
        for spec in scn.sources:
            for _ in range(n):
                t = rng.uniform(5.0, scn.T)
                d = rng.normal(size=3)
                r = scn.R * d / np.linalg.norm(d)
                s = forward.retarded_time(spec, t, r, scn.c)
                worst = max(worst, abs(float(s) - bisection_retarded_time(spec, t, r, scn.c)))
    return worst <= 1e-9, f"max |Newton - bisection| {worst:.1e}"


def check_radial(J=6, K=12, T=30.0, dt=0.1, tol=1e-2):
    """Marched field of a ramped source at the centre vs the image-series trace."""
    errs = []
    for step in (dt, dt / 2):
        d = dict(T=T, dt=step, grid=dict(R=2.0, J=J, K=K),
                 sources=[dict(kind="point", px="0", py="0", pz="0", q="eta((t-1)/4)")])
        scn = scenario_from_dict(d)
        f = forward.march_boundary_field(scn)
        exact = radial_boundary_field(lambda s: eta_prime((s - 1.0) / 4.0) / 4.0, f.times, scn.R, scn.c)
        ref = exact[:, None] * np.ones_like(f.phi)
        errs.append(np.linalg.norm(f.phi - ref) / np.linalg.norm(ref))
    ok = errs[0] <= tol and errs[1] < errs[0]
    return ok, f"relative L2 error {errs[0]:.2e} (dt={dt}), {errs[1]:.2e} (dt={dt / 2})"


def check_synthetic(n=50, seed=1, tol=1e-6):
    """Frames recover exact parameters from synthetic moment slices."""
    rng = np.random.default_rng(seed)
    cfg = InversionConfig(counter="rank")
    worst, bad = 0.0, 0
    for kind in ("point", "dipole"):
        for _ in range(n):
            K = int(rng.integers(1, 4))
            srcs = random_sources(rng, K, kind)
            slc, truth = synthetic_slice(srcs, kind, 5.0, 2 * cfg.K_M + 1)
            fr = reconstruct_frame(slc, kind, cfg)
            if fr.K_hat != K or fr.stage != "complete":
                bad += 1
                continue
            for tr in truth:
                p = tr["position"]
                j = int(np.argmin(np.abs(fr.pxy - (p[0] + 1j * p[1]))))
                err = max(np.max(np.abs(fr.positions[j] - p)), abs(fr.strength[j] - tr["strength"]))
                worst = max(worst, err)
    return bad == 0 and worst <= tol, f"{bad} failed frames, max parameter error {worst:.1e}"


def check_determinant(n=1000, seed=2, tol=1e-10, min_sep=0.3):
    """LU determinant of the confluent Vandermonde matrix vs the closed form.

    Nodes lie in the unit disk with pairwise separation ``>= min_sep``: the
    double-precision LU determinant loses about ``cond`` ulps, and the
    condition number grows like ``gap**-4`` as two nodes approach.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        K = int(rng.integers(1, 6))
        P, _ = random_nodes(rng, K, radius=1.0, min_sep=min_sep)
        ref = det_formula(P)
        worst = max(worst, abs(np.linalg.det(confluent_vandermonde(P)) - ref) / abs(ref))
    return worst <= tol, f"max relative error {worst:.1e}"


def check_counting(n=500, seed=0, K_M=5, eps0=1e-4, epsG=2.5e-2, min_rate=0.99):
    """Source-count rule on exact moments of random node sets.

    The ratio test can undercount a genuinely present weak source whose
    determinant ratio falls below ``epsG``; the suite passes when at least
    ``min_rate`` of the configurations are counted exactly.
    """
    rng = np.random.default_rng(seed)
    hits = 0
    for _ in range(n):
        K = int(rng.integers(1, 5))
        P, w = random_nodes(rng, K)
        m = moments(w, P, 2 * K_M + 2)
        dets, zero = hankel_dets(m, K_M + 1)
        hits += count_sources(dets, eps0 * np.max(np.abs(m)), epsG, K_M, zero) == K
    rate = hits / n
    return rate >= min_rate, f"{hits}/{n} counted exactly"


SUITES = [
    ("quadrature exactness", check_quadrature, {}),
    ("retarded time vs bisection", check_retarded_time, {"n": 10}),
    ("radial forward oracle", check_radial, {"T": 16.0}),
    ("synthetic end-to-end", check_synthetic, {"n": 20}),
    ("determinant identity", check_determinant, {"n": 200}),
    ("source counting", check_counting, {}),
]


def run_all(quick=False, out=print):
    """Run every suite (``quick`` shrinks the problem sizes); True if all pass."""
    ok = True
    for name, fn, small in SUITES:
        t0 = time.perf_counter()
        try:
            passed, msg = fn(**(small if quick else {}))
        except Exception as exc:  # a crashing suite is a failure, not an abort
            passed, msg = False, f"{type(exc).__name__}: {exc}"
        ok &= passed
        out(f"{'PASS' if passed else 'FAIL'}  {name}: {msg} ({time.perf_counter() - t0:.1f}s)")
    return ok
