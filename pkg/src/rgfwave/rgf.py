"""Reciprocity-gap moment sequences from the boundary field.

For a weight ``w`` on the sphere the retarded trace is
``-int_Gamma w(r) phi(tau - z/c, r) dS``; the five sequences at ``tau`` are

* ``Rf[n]`` with ``w = (x+iy)^n``,
* ``Rh[n]`` with ``w = 2n z (x+iy)^(n-1)`` plus ``(1/c) d/dtau`` of the trace of ``(x-iy)(x+iy)^n``,
* ``Rg = d Rf``, ``Ri = d^2 Rf``, ``Rj = d Rh`` by central differences in ``tau``.
"""

from dataclasses import dataclass

import numpy as np

from .grid import surface_integral


class InsufficientDataError(ValueError):
    pass


@dataclass(frozen=True)
class RgfSlice:
    """The five moment sequences at one ``tau`` (``Rh[0]``, ``Rj[0]`` are undefined, stored as nan)."""

    tau: float
    n_max: int
    Rf: np.ndarray
    Rg: np.ndarray
    Rh: np.ndarray
    Ri: np.ndarray
    Rj: np.ndarray


def interp_weights(times, dt, n_steps):
    """Centred 4-point Lagrange stencil for sampling at ``times``.

    Returns ``(idx, w)`` with ``idx`` of shape ``times.shape + (4,)``.
    Indices below 0 refer to the quiescent past (value 0); at the end of the
    record the stencil is shifted left so it never reads past ``n_steps``.
    """
    times = np.asarray(times, dtype=float)
    if np.any(times > n_steps * dt * (1 + 1e-12) + 1e-12):
        raise InsufficientDataError(f"retarded time beyond the record end T={n_steps * dt}")
    x = times / dt
    i0 = np.floor(x).astype(np.int64) - 1
    i0 = np.minimum(i0, n_steps - 3)
    u = x - i0
    w = np.stack(
        [
            -(u - 1) * (u - 2) * (u - 3) / 6.0,
            u * (u - 2) * (u - 3) / 2.0,
            -u * (u - 1) * (u - 3) / 2.0,
            u * (u - 1) * (u - 2) / 6.0,
        ],
        axis=-1,
    )
    return i0[..., None] + np.arange(4), w


def sample_field(field, times):
    """``phi`` at per-node times; ``times`` has shape ``(..., n_nodes)``."""
    idx, w = interp_weights(times, field.dt, field.n_steps)
    node = np.arange(field.phi.shape[1])
    node = np.broadcast_to(node[..., None], idx.shape)
    vals = field.phi[np.clip(idx, 0, None), node]
    vals = np.where(idx < 0, 0.0, vals)
    return np.sum(w * vals, axis=-1)


def retarded_trace(field, tau, weight):
    """``-int weight(r) phi(tau - z/c, r) dS`` for scalar or array ``tau``."""
    tau = np.asarray(tau, dtype=float)
    z = field.grid.z
    vals = sample_field(field, tau[..., None] - z / field.c)
    return -surface_integral(field.grid, np.asarray(weight) * vals)


def trace_weights(grid, n_max):
    """Weights for the three base traces, shapes ``(n_max+1, n_nodes)``.

    ``f[n] = (x+iy)^n``, ``a[n] = 2n z (x+iy)^(n-1)`` and ``b[n] = (x-iy)(x+iy)^n``.
    """
    w = grid.x + 1j * grid.y
    n = np.arange(n_max + 1)[:, None]
    f = w[None, :] ** n
    a = np.zeros_like(f)
    a[1:] = 2 * n[1:] * grid.z[None, :] * f[:-1]
    b = np.conj(w)[None, :] * f
    return f, a, b


def admissible_range(field, dtau):
    """Largest ``tau`` whose full stencil stays inside the record."""
    zmin = float(np.min(field.grid.z))
    return field.T - 2 * dtau + zmin / field.c


def rgf_table(field, taus, n_max, dtau):
    """Moment sequences at every ``tau`` in ``taus`` (vectorized).

    Returns a dict of complex arrays of shape ``(len(taus), n_max+1)``.
    """
    taus = np.atleast_1d(np.asarray(taus, dtype=float))
    if np.any(taus > admissible_range(field, dtau) + 1e-9):
        raise InsufficientDataError("tau too close to the end of the record for the derivative stencil")
    f, a, b = trace_weights(field.grid, n_max)
    shifts = dtau * np.arange(-2, 3)
    tt = taus[:, None] + shifts[None, :]
    vals = sample_field(field, tt[..., None] - field.grid.z / field.c)
    wq = field.grid.weights
    # base traces at tau + k dtau, k = -2..2: shape (n_tau, 5, n_max+1)
    F = -np.einsum("tkj,nj->tkn", vals * wq, f)
    A = -np.einsum("tkj,nj->tkn", vals * wq, a)
    Bt = -np.einsum("tkj,nj->tkn", vals * wq, b)
    c = field.c
    # Rh at tau + k dtau for k = -1, 0, 1
    Rh3 = A[:, 1:4] + (Bt[:, 2:5] - Bt[:, 0:3]) / (2 * dtau) / c
    Rf = F[:, 2]
    Rg = (F[:, 3] - F[:, 1]) / (2 * dtau)
    Ri = (F[:, 3] - 2 * F[:, 2] + F[:, 1]) / dtau**2
    Rh = Rh3[:, 1]
    Rj = (Rh3[:, 2] - Rh3[:, 0]) / (2 * dtau)
    Rh[:, 0] = np.nan
    Rj[:, 0] = np.nan
    return {"tau": taus, "Rf": Rf, "Rg": Rg, "Rh": Rh, "Ri": Ri, "Rj": Rj}


def table_slice(table, i, n_max=None):
    n = table["Rf"].shape[1] - 1 if n_max is None else n_max
    return RgfSlice(
        float(table["tau"][i]), n,
        table["Rf"][i, : n + 1].copy(), table["Rg"][i, : n + 1].copy(), table["Rh"][i, : n + 1].copy(),
        table["Ri"][i, : n + 1].copy(), table["Rj"][i, : n + 1].copy(),
    )


def rgf_slice(field, tau, n_max, dtau):
    """The five moment sequences at one ``tau``."""
    return table_slice(rgf_table(field, [tau], n_max, dtau), 0)


def save_table(table, path):
    """Debug dump: ``tau, n`` then real/imaginary parts of the five sequences."""
    names = ("Rf", "Rg", "Rh", "Ri", "Rj")
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("tau,n," + ",".join(f"{k}_re,{k}_im" for k in names) + "\n")
        for i, tau in enumerate(table["tau"]):
            for n in range(table["Rf"].shape[1]):
                vals = []
                for k in names:
                    v = table[k][i, n]
                    vals += ["%.17g" % v.real, "%.17g" % v.imag]
                fh.write("%.17g,%d," % (tau, n) + ",".join(vals) + "\n")
