"""Forward synthesis of the boundary observation ``phi = d_nu u``.

The free field of moving sources is given in closed form through retarded
times; the bounded-domain field is obtained by marching the time-domain
boundary integral equation on the sphere.
"""

import time
from functools import lru_cache
from dataclasses import dataclass, field

import numpy as np
from scipy.special import eval_legendre, gammaln, lpmv

from .expr import compile_program
from .grid import SphereGrid, build_grid, surface_integral
from .kernels import get_backend
from .scenario import eval_source, velocity


class ForwardError(RuntimeError):
    pass


@dataclass(frozen=True)
class RetardedSolve:
    tolerance: float = 1e-12
    max_iter: int = 100


@dataclass
class BoundaryField:
    """Sampled ``phi[l, node]`` at ``t_l = l * dt`` on the grid nodes."""

    grid: SphereGrid
    dt: float
    phi: np.ndarray
    c: float = 1.0
    noise_level: float = 0.0
    seed: int = 0
    scenario_hash: str = ""
    info: dict = field(default_factory=dict)

    @property
    def n_steps(self):
        return self.phi.shape[0] - 1

    @property
    def T(self):
        return self.n_steps * self.dt

    @property
    def times(self):
        return self.dt * np.arange(self.phi.shape[0])


def retarded_time(spec, t, r, c, cfg=RetardedSolve()):
    """Solve ``t = s + |r - p(s)|/c`` for ``s`` by Newton iteration.

    ``t`` and ``r`` broadcast (``r`` has a trailing axis of 3).
    """
    t = np.asarray(t, dtype=float)
    r = np.asarray(r, dtype=float)
    t_b = np.broadcast_to(t, np.broadcast_shapes(t.shape, r.shape[:-1]))
    p, _ = eval_source(spec, t_b)
    s = t_b - np.linalg.norm(r - p, axis=-1) / c
    for _ in range(cfg.max_iter):
        p, _ = eval_source(spec, s)
        diff = r - p
        d = np.linalg.norm(diff, axis=-1)
        res = t_b - s - d / c
        if np.all(np.abs(res) <= cfg.tolerance):
            return s
        v = velocity(spec, s)
        h = 1.0 - np.sum(v * diff, axis=-1) / (c * np.maximum(d, 1e-300))
        s = s + res / h
    raise ForwardError("retarded-time Newton iteration did not converge (speed bound violated?)")


@lru_cache(maxsize=64)
def source_program(spec):
    """Concatenated postfix programs of a source, with offsets for the kernels."""
    parts = [compile_program(e) for e in spec.position + spec.strength]
    codes = np.concatenate([p[0] for p in parts])
    consts = np.concatenate([p[1] for p in parts])
    off = np.zeros(6, dtype=np.int64)
    off[1 : len(parts) + 1] = np.cumsum([len(p[0]) for p in parts])
    off[len(parts) + 1 :] = off[len(parts)]
    return codes, consts, off


_STATUS = {1: "retarded-time iteration did not converge (speed bound violated?)",
           2: "evaluation point lies on a source trajectory",
           3: "division by near-zero value in a source expression"}


def _quotients(spec, t, r, c, threads=1, backend=None):
    t = np.asarray(t, dtype=float)
    r = np.asarray(r, dtype=float)
    shape = np.broadcast_shapes(t.shape, r.shape[:-1])
    tt = np.ascontiguousarray(np.broadcast_to(t, shape).ravel())
    rr = np.ascontiguousarray(np.broadcast_to(r, shape + (3,)).reshape(-1, 3))
    codes, consts, off = source_program(spec)
    _, kern = get_backend(backend)
    out1, out2, status = kern.retarded_eval(
        codes, consts, off, int(spec.kind == "dipole"), tt, rr, float(c), 1e-12, 100, int(threads)
    )
    bad = status[status != 0]
    if len(bad):
        raise ForwardError(_STATUS[int(bad[0])])
    return out1.reshape(shape), out2.reshape(shape)


def free_field_point(sources, t, r, c, threads=1, backend=None):
    """Sum of ``q(s)/(4 pi |r - p(s)| h)`` over point sources."""
    r = np.asarray(r, dtype=float)
    out = np.zeros(np.broadcast_shapes(np.shape(t), r.shape[:-1]))
    for spec in sources:
        out = out + _quotients(spec, t, r, c, threads, backend)[0]
    return out


def free_field_dipole(sources, t, r, c, h_t=1e-5, threads=1, backend=None):
    """Dipole free field; the time-derivative term uses central differences."""
    t = np.asarray(t, dtype=float)
    r = np.asarray(r, dtype=float)
    out = np.zeros(np.broadcast_shapes(t.shape, r.shape[:-1]))
    for spec in sources:
        first, _ = _quotients(spec, t, r, c, threads, backend)
        _, q_plus = _quotients(spec, t + h_t, r, c, threads, backend)
        _, q_minus = _quotients(spec, t - h_t, r, c, threads, backend)
        out = out + first + (q_plus - q_minus) / (2.0 * h_t) / (4.0 * np.pi * c)
    return out


def free_field(sources, kind, t, r, c, threads=1, backend=None):
    if kind == "point":
        return free_field_point(sources, t, r, c, threads=threads, backend=backend)
    if kind == "dipole":
        return free_field_dipole(sources, t, r, c, threads=threads, backend=backend)
    raise ValueError(f"unknown source kind {kind!r}")


def normal_derivative_free_field(sources, kind, t, r, nu, c, h_s=None, threads=1, backend=None):
    """``nu . grad u_N`` by central differences along ``nu``."""
    r = np.asarray(r, dtype=float)
    nu = np.asarray(nu, dtype=float)
    if h_s is None:
        h_s = 1e-5 * float(np.max(np.linalg.norm(r.reshape(-1, 3), axis=-1)))
    if not sources:
        return np.zeros(np.broadcast_shapes(np.shape(t), r.shape[:-1]))
    u_plus = free_field(sources, kind, t, r + h_s * nu, c, threads, backend)
    u_minus = free_field(sources, kind, t, r - h_s * nu, c, threads, backend)
    return (u_plus - u_minus) / (2.0 * h_s)


def lagrange_weights(delay, dt):
    """Four-point Lagrange weights for ``phi(t - delay)`` on a grid of step ``dt``.

    Returns ``(base_lag, w, dw)``: the value is ``sum_a w[..., a] * phi[l - base_lag - a]``
    and the time derivative uses ``dw`` the same way.  The stencil is centred
    (lags m-1..m+2 for ``delay`` in [m, m+1) dt) except for delays below one
    step, where it shifts to lags 0..3 so no future sample is touched.
    """
    x = np.asarray(delay, dtype=float) / dt
    m = np.floor(x + 1e-12).astype(np.int64)
    base = np.maximum(m - 1, 0)
    u = x - base
    w = np.stack(
        [
            -(u - 1) * (u - 2) * (u - 3) / 6.0,
            u * (u - 2) * (u - 3) / 2.0,
            -u * (u - 1) * (u - 3) / 2.0,
            u * (u - 1) * (u - 2) / 6.0,
        ],
        axis=-1,
    )
    dw_du = np.stack(
        [
            -(3 * u**2 - 12 * u + 11) / 6.0,
            (3 * u**2 - 10 * u + 6) / 2.0,
            -(3 * u**2 - 8 * u + 3) / 2.0,
            (3 * u**2 - 6 * u + 2) / 6.0,
        ],
        axis=-1,
    )
    # u grows towards the past, so d/dt = -(d/du) / dt
    return base, w, -dw_du / dt


def sh_basis(grid, degree=None):
    """Real spherical harmonics sampled on the grid nodes.

    Returns ``(B, deg)`` with ``B`` of shape ``(n_nodes, M)``, orthonormal
    under the grid quadrature (``B.T @ (W[:, None] * B) = I``), and the
    degree of every column.  The default ``degree`` is the largest one the
    grid integrates exactly: ``min(J - 1, ceil(K/2) - 1)``.
    """
    J, K = grid.n_polar, grid.n_azimuth
    if degree is None:
        degree = min(J - 1, (K + 1) // 2 - 1)
    mu = np.repeat(grid.mu, K)
    az = np.tile(grid.phi, J)
    cols, deg = [], []
    for ell in range(degree + 1):
        for m in range(ell + 1):
            norm = np.sqrt((2 * ell + 1) / (4 * np.pi) * np.exp(gammaln(ell - m + 1) - gammaln(ell + m + 1)))
            plm = norm * lpmv(m, ell, mu)
            if m == 0:
                cols.append(plm)
                deg.append(ell)
            else:
                cols.append(np.sqrt(2.0) * plm * np.cos(m * az))
                cols.append(np.sqrt(2.0) * plm * np.sin(m * az))
                deg += [ell, ell]
    B = np.array(cols).T / grid.radius
    return B, np.array(deg, dtype=np.int64)


def mode_profiles(R, c, dt, degree, n_gauss=8):
    """Lag coefficients of the boundary integral operator for each harmonic degree.

    On the sphere both kernels depend on the chord length ``s`` only
    (``K1 = 1/(2Rs)``, ``K2 = 1/(2R)``), so every spherical harmonic of
    degree ``l`` is an eigenfunction and the retarded integrals reduce to

        -(1/(4R)) int_0^{2R} P_l(1 - s^2/(2R^2)) [a(t - s/c) + (s/c) a'(t - s/c)] ds.

    The ``s`` integral is done by Gauss-Legendre on every ``c*dt`` panel and
    the retarded values come from 4-point Lagrange interpolation, giving
    ``prof[l, lag]`` with the value at ``t_l`` equal to ``sum prof[l, lag] a[l - lag]``.
    """
    n_int = max(int(np.ceil(2 * R / (c * dt) - 1e-9)), 1)
    xg, wg = np.polynomial.legendre.leggauss(n_gauss)
    edges = np.linspace(0.0, 2 * R, n_int + 1)
    mid = 0.5 * (edges[1:] + edges[:-1])
    half = 0.5 * (edges[1:] - edges[:-1])
    s = (mid[:, None] + half[:, None] * xg[None, :]).ravel()
    ws = (half[:, None] * wg[None, :]).ravel()
    base, w, dw = lagrange_weights(s / c, dt)
    lags = base[:, None] + np.arange(4)[None, :]
    x = 1.0 - s**2 / (2 * R**2)
    prof = np.zeros((degree + 1, int(lags.max()) + 1))
    for ell in range(degree + 1):
        p = eval_legendre(ell, x) * ws
        coef = -(1 / (4 * R)) * (p[:, None] * w + (p * s / c)[:, None] * dw)
        np.add.at(prof[ell], lags.ravel(), coef.ravel())
    return prof


@dataclass
class MarchingOperator:
    """Spectral (spherical-harmonic) discretization of the boundary integral equation."""

    basis: np.ndarray
    degree_of: np.ndarray
    weights: np.ndarray
    profiles: np.ndarray

    def analyze(self, values):
        """Node values ``(..., n_nodes)`` to harmonic coefficients."""
        return (values * self.weights) @ self.basis

    def synthesize(self, coeffs):
        return coeffs @ self.basis.T


def build_operator(grid, c, dt, degree=None):
    basis, deg = sh_basis(grid, degree)
    prof = mode_profiles(grid.radius, c, dt, int(deg.max()))
    return MarchingOperator(basis, deg, grid.weights, prof)


def boundary_source_term(scn, grid, threads=1, backend=None):
    """``d_nu u_N`` at every step and node, shape ``(L+1, n)``."""
    t = scn.dt * np.arange(scn.n_steps + 1)
    return normal_derivative_free_field(
        list(scn.sources), scn.kind, t[:, None], grid.points[None, :, :], grid.normals[None, :, :], scn.c,
        threads=threads, backend=backend,
    )


def march(op, g, threads=1, backend=None):
    """March harmonic coefficients for the node source term ``g[l, node]``.

    Each mode obeys ``(1/2 - prof[0]) a[l] = g[l] + sum_{lag>=1} prof[lag] a[l - lag]``;
    the current-step coupling is diagonal, so no iteration is needed.
    Returns node values ``phi[l, node]``.
    """
    _, kern = get_backend(backend)
    gm = op.analyze(g)
    n_t, n_modes = gm.shape
    prof = np.ascontiguousarray(op.profiles)
    row = np.ascontiguousarray(op.degree_of)
    lhs = 0.5 - prof[row, 0]
    a = np.zeros((n_t, n_modes))
    for ell in range(1, n_t):
        a[ell] = (gm[ell] + kern.history_sum(prof, row, a, ell, threads)) / lhs
    return op.synthesize(a), a


def march_boundary_field(scn, grid=None, threads=1, backend=None, degree=None):
    """Synthesize the noiseless boundary field of a scenario."""
    if grid is None:
        grid = build_grid(scn.R, scn.J, scn.K)
    t0 = time.perf_counter()
    g = boundary_source_term(scn, grid, threads, backend)
    t1 = time.perf_counter()
    op = build_operator(grid, scn.c, scn.dt, degree)
    t2 = time.perf_counter()
    phi, _ = march(op, g, threads=threads, backend=backend)
    t3 = time.perf_counter()
    info = {
        "time_source": t1 - t0,
        "time_assemble": t2 - t1,
        "time_march": t3 - t2,
        "degree": int(op.degree_of.max()),
    }
    return BoundaryField(grid, scn.dt, phi, scn.c, 0.0, scn.rng_seed, scn.digest(), info)


def l2_norms(grid, phi):
    """``sqrt(int |phi|^2 dS)`` for every time row."""
    return np.sqrt(np.maximum(surface_integral(grid, phi**2), 0.0))


def add_noise(field, level, seed):
    """Add Gaussian noise whose relative L2(Gamma) size equals ``level`` at every step."""
    if level < 0:
        raise ValueError("noise level must be non-negative")
    if level == 0:
        return BoundaryField(field.grid, field.dt, field.phi.copy(), field.c, 0.0, seed, field.scenario_hash, dict(field.info))
    phi = field.phi.copy()
    norms = l2_norms(field.grid, field.phi)
    for ell in range(phi.shape[0]):
        if norms[ell] == 0.0:
            continue
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), ell]))
        e = rng.standard_normal(phi.shape[1])
        e *= level * norms[ell] / l2_norms(field.grid, e[None, :])[0]
        phi[ell] += e
    return BoundaryField(field.grid, field.dt, phi, field.c, float(level), int(seed), field.scenario_hash, dict(field.info))


def noise_ratio(grid, noisy, clean):
    """Per-step relative L2(Gamma) size of ``noisy - clean``."""
    num = l2_norms(grid, noisy - clean)
    den = l2_norms(grid, clean)
    return np.divide(num, den, out=np.zeros_like(num), where=den > 0)


_HEADER_KEYS = ("R", "J", "K", "dt", "L", "c", "noise_level", "seed", "scenario_hash")


def save_field(field, path):
    """Write the field CSV: one metadata line, a column header, then one row per sample."""
    g = field.grid
    meta = dict(
        R=repr(g.radius), J=g.n_polar, K=g.n_azimuth, dt=repr(field.dt), L=field.n_steps,
        c=repr(field.c), noise_level=repr(field.noise_level), seed=field.seed, scenario_hash=field.scenario_hash,
    )
    n_t, n = field.phi.shape
    ell = np.repeat(np.arange(n_t), n)
    node = np.tile(np.arange(n), n_t)
    j, k = node // g.n_azimuth, node % g.n_azimuth
    t = field.dt * ell
    pts = g.points[node]
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("# " + ",".join(f"{k}={v}" for k, v in meta.items()) + "\n")
        fh.write("l,j,k,t,x,y,z,phi\n")
        cols = np.column_stack([t, pts, field.phi.ravel()])
        body = np.column_stack([ell, j, k])
        lines = []
        for a, b in zip(body, cols):
            lines.append("%d,%d,%d," % tuple(a) + ",".join("%.17g" % v for v in b))
        fh.write("\n".join(lines))
        fh.write("\n")


def load_field(path):
    with open(path, encoding="ascii") as fh:
        first = fh.readline()
        if not first.startswith("#"):
            raise ValueError(f"{path}: missing metadata line")
        meta = dict(item.split("=", 1) for item in first[1:].strip().split(","))
        missing = [k for k in _HEADER_KEYS if k not in meta]
        if missing:
            raise ValueError(f"{path}: metadata lacks {missing}")
        header = fh.readline().strip()
        if header != "l,j,k,t,x,y,z,phi":
            raise ValueError(f"{path}: unexpected column header {header!r}")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    grid = build_grid(float(meta["R"]), int(meta["J"]), int(meta["K"]))
    n_t, n = int(meta["L"]) + 1, grid.n_nodes
    if data.shape != (n_t * n, 8):
        raise ValueError(f"{path}: expected {n_t * n} rows of 8 columns, got {data.shape}")
    phi = data[:, 7].reshape(n_t, n)
    return BoundaryField(
        grid, float(meta["dt"]), phi, float(meta["c"]), float(meta["noise_level"]), int(meta["seed"]), meta["scenario_hash"]
    )
