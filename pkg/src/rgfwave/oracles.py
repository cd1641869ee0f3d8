"""Independent oracles: synthetic moment slices built from prescribed trajectories.

Each source follows analytic sinusoid-plus-linear trajectories with exact
derivatives in emission time ``t``.  The emission time ``t(tau)`` is found by
bisection and all ``tau``-derivatives come from truncated Taylor jets, so the
moment sequences are evaluated directly from their defining relations
(no closed-form correction terms are used).
"""

from dataclasses import dataclass

import numpy as np

from .rgf import RgfSlice


@dataclass(frozen=True)
class Wave:
    """``f(t) = a + b t + amp sin(omega t + phase)`` with derivatives up to order 3."""

    a: float
    b: float = 0.0
    amp: float = 0.0
    omega: float = 0.0
    phase: float = 0.0

    def derivs(self, t):
        s = self.amp * np.sin(self.omega * t + self.phase)
        co = self.amp * np.cos(self.omega * t + self.phase)
        w = self.omega
        return np.array([self.a + self.b * t + s, self.b + w * co, -(w**2) * s, -(w**3) * co])


@dataclass(frozen=True)
class SyntheticSource:
    """Trajectory ``(x, y, z)`` and strength (``q`` or ``(m_x, m_y)``)."""

    x: Wave
    y: Wave
    z: Wave
    strength: tuple

    def position(self, t):
        return np.array([self.x.derivs(t)[0], self.y.derivs(t)[0], self.z.derivs(t)[0]])


def emission_time(src, tau, c, tol=1e-15):
    """Bisection for ``t + z(t)/c = tau`` (``|dz/dt| < c`` keeps it monotone)."""
    g = lambda t: t + src.z.derivs(t)[0] / c - tau
    lo, hi = tau - 1.0, tau + 1.0
    while g(lo) > 0:
        lo -= 2 * (tau - lo)
    while g(hi) < 0:
        hi += 2 * (hi - tau)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if g(mid) > 0:
            hi = mid
        else:
            lo = mid
        if hi - lo < tol * max(1.0, abs(tau)):
            break
    return 0.5 * (lo + hi)


def _jmul(a, b):
    return np.array([a[0] * b[0], a[1] * b[0] + a[0] * b[1], a[2] * b[0] + 2 * a[1] * b[1] + a[0] * b[2]])


def _jpow(a, n):
    out = np.array([1.0 + 0j, 0, 0])
    for _ in range(n):
        out = _jmul(out, a)
    return out


def _compose(f, tj):
    """Jet of ``f(t(tau))`` to order 2 from ``f``'s t-derivatives and ``t``'s tau-derivatives."""
    return np.array([f[0], f[1] * tj[1], f[2] * tj[1] ** 2 + f[1] * tj[2]])


def source_jets(src, tau, c):
    """Order-2 tau-jets of ``P = x + iy``, ``Z``, weight ``strength * xi`` and the truth values."""
    t = emission_time(src, tau, c)
    z = src.z.derivs(t)
    t1 = 1.0 / (1.0 + z[1] / c)
    t2 = -(t1**3) * z[2] / c
    t3 = -t1 * (3 * t1 * t2 * z[2] + t1**3 * z[3]) / c
    tj = np.array([t, t1, t2])
    xi = np.array([t1, t2, t3], dtype=complex)
    P = _compose(src.x.derivs(t) + 1j * src.y.derivs(t), tj)
    Z = _compose(z, tj).astype(complex)
    sw = [np.asarray(s.derivs(t)) for s in src.strength]
    s = sw[0] + 1j * sw[1] if len(sw) == 2 else sw[0].astype(complex)
    W = _jmul(_compose(s, tj), xi)
    truth = {
        "t_emit": t,
        "position": src.position(t),
        "strength": s[0] if len(sw) == 2 else s[0].real,
        "xi": t1,
        "dz": Z[1].real,
    }
    return P, Z, W, truth


def synthetic_slice(sources, kind, tau, n_max, c=1.0):
    """Exact moment slice at ``tau`` and the per-source ground truth."""
    Rf, Rg, Ri = (np.zeros(n_max + 1, complex) for _ in range(3))
    Rh = np.zeros(n_max + 1, complex)
    Rj = np.zeros(n_max + 1, complex)
    truths = []
    for src in sources:
        P, Z, W, truth = source_jets(src, tau, c)
        truths.append(truth)
        Pc = np.conj(P)
        Wc = np.conj(W)
        for n in range(n_max + 1):
            if kind == "point":
                base = _jmul(W, _jpow(P, n))
                hv = (2 * n * _jmul(W, _jmul(Z, _jpow(P, n - 1))) if n >= 1 else np.zeros(3, complex))
                g2 = _jmul(W, _jmul(Pc, _jpow(P, n)))
                Rh[n] += hv[0] + g2[1] / c
                Rj[n] += hv[1] + g2[2] / c
            else:
                base = n * _jmul(W, _jpow(P, n - 1)) if n >= 1 else np.zeros(3, complex)
                hv = (2 * n * (n - 1) * _jmul(W, _jmul(Z, _jpow(P, n - 2))) if n >= 2 else np.zeros(3, complex))
                g2 = _jmul(Wc, _jpow(P, n))
                g3 = n * _jmul(W, _jmul(Pc, _jpow(P, n - 1))) if n >= 1 else np.zeros(3, complex)
                Rh[n] += hv[0] + (g2[1] + g3[1]) / c
                Rj[n] += hv[1] + (g2[2] + g3[2]) / c
            Rf[n] += base[0]
            Rg[n] += base[1]
            Ri[n] += base[2]
    Rh[0] = np.nan
    Rj[0] = np.nan
    return RgfSlice(float(tau), n_max, Rf, Rg, Rh, Ri, Rj), truths


def random_sources(rng, K, kind, tau=5.0, c=1.0, min_sep=0.3, xi_range=(0.6, 1.4), radius=1.2, max_radius=1.8, max_tries=1000):
    """Random smooth sources whose states at ``t_k(tau)`` meet the separation,
    Doppler-factor and ``|p| < max_radius`` constraints (rejection sampling)."""
    for _ in range(max_tries):
        srcs = []
        for _k in range(K):
            waves = []
            for axis in range(3):
                amp = rng.uniform(0.0, 0.3)
                waves.append(
                    Wave(
                        rng.uniform(-radius, radius) * (0.5 if axis == 2 else 0.7),
                        rng.uniform(-0.3, 0.3) * c,
                        amp,
                        rng.uniform(0.2, 1.5),
                        rng.uniform(0, 2 * np.pi),
                    )
                )
            n_s = 1 if kind == "point" else 2
            mags = []
            for _ in range(n_s):
                sign = rng.choice([-1.0, 1.0])
                mags.append(Wave(sign * rng.uniform(0.5, 2.0), 0.0, rng.uniform(0, 0.3), rng.uniform(0.2, 1.5), rng.uniform(0, 2 * np.pi)))
            srcs.append(SyntheticSource(*waves, tuple(mags)))
        truths = [source_jets(s, tau, c)[3] for s in srcs]
        P = np.array([t["position"][0] + 1j * t["position"][1] for t in truths])
        xi = np.array([t["xi"] for t in truths])
        if K > 1 and np.min(np.abs(P[:, None] - P[None, :]) + np.eye(K) * 1e9) < min_sep:
            continue
        if np.any(xi < xi_range[0]) or np.any(xi > xi_range[1]):
            continue
        if max(np.linalg.norm(t["position"]) for t in truths) >= max_radius:
            continue
        return srcs
    raise RuntimeError("could not sample a configuration meeting the constraints")


def random_nodes(rng, K, radius=1.6, min_sep=0.3, weight_range=(0.1, 2.0)):
    """Planar nodes uniform in a disk with pairwise separation ``>= min_sep`` and
    complex weights with magnitudes uniform in ``weight_range``."""
    while True:
        P = np.sqrt(rng.uniform(0.0, 1.0, K)) * radius * np.exp(2j * np.pi * rng.uniform(size=K))
        gaps = np.abs(P[:, None] - P[None, :])[~np.eye(K, dtype=bool)]
        if K == 1 or gaps.min() >= min_sep:
            break
    w = rng.uniform(*weight_range, K) * np.exp(2j * np.pi * rng.uniform(size=K))
    return P, w


def moments(weights, nodes, n_max):
    """Brute-force power sums ``sum_k weights_k nodes_k^n``, ``n = 0..n_max``."""
    weights = np.asarray(weights, dtype=complex)
    nodes = np.asarray(nodes, dtype=complex)
    return np.array([np.sum(weights * nodes**n) for n in range(n_max + 1)])


def radial_boundary_field(dq, t, R, c=1.0):
    """Boundary trace for a stationary point source at the centre of the ball.

    With the quiescent zero-Neumann interior problem the field on the sphere
    is ``-(2/(cR)) sum_{m>=0} F'(t - (2m+1) R/c)``, ``F = q/(4 pi)``: the
    outgoing wave and its successive reflections.  ``dq`` is ``dq/dt`` and
    must vanish for negative arguments.
    """
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    m = 0
    while True:
        s = t - (2 * m + 1) * R / c
        if np.all(s < 0):
            break
        out += dq(s) / (4 * np.pi)
        m += 1
    return -2.0 / (c * R) * out
