"""Per-slice algebraic inversion: count, planar nodes, depths, velocities, strengths.

Notation: ``P = p_x + i p_y`` (complex planar node), ``Z = p_z``, primes are
``d/dtau``.  For point sources the weight is ``zeta = q * xi``; for dipoles it
is ``mu = (m_x + i m_y) * xi``.  ``xi = 1 - Z'/c`` undoes the Doppler-like
compression of the emission time.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla


class InversionError(RuntimeError):
    pass


@dataclass(frozen=True)
class InversionConfig:
    K_M: int = 4
    eps0: float = 1e-4
    epsG: float = 2.5e-2
    step4_mode: str = "algebraic"
    counter: str = "ratio"
    c: float = 1.0
    R: float = 2.0
    max_cond: float = 1e12
    min_weight: float = 1e-8
    min_xi: float = 0.05
    ghost_level: float = 0.01
    max_imag: float = 0.05


@dataclass
class Frame:
    """Reconstruction at one slice; per-source arrays have length ``K_hat``.

    ``stage`` is ``"complete"`` or the name of the step that failed, in which
    case only the quantities computed before it are filled (others are nan).
    """

    tau: float
    K_hat: int
    dets: np.ndarray
    pxy: np.ndarray = field(default_factory=lambda: np.zeros(0, complex))
    pz: np.ndarray = field(default_factory=lambda: np.zeros(0))
    dz: np.ndarray = field(default_factory=lambda: np.zeros(0))
    xi: np.ndarray = field(default_factory=lambda: np.zeros(0))
    strength: np.ndarray = field(default_factory=lambda: np.zeros(0, complex))
    t_emit: np.ndarray = field(default_factory=lambda: np.zeros(0))
    flags: list = field(default_factory=list)
    stage: str = "complete"
    weight: np.ndarray = field(default_factory=lambda: np.zeros(0, complex))
    diagnostics: dict = field(default_factory=dict)
    track_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))

    @property
    def positions(self):
        return np.column_stack([self.pxy.real, self.pxy.imag, self.pz])


def hankel(moments, L, mu=0):
    """``L x L`` Hankel matrix with entry ``(a, b) = moments[mu + a + b]``."""
    moments = np.asarray(moments)
    if len(moments) < mu + 2 * L - 1:
        raise ValueError(f"need {mu + 2 * L - 1} moments for L={L}, mu={mu}; got {len(moments)}")
    idx = mu + np.arange(L)[:, None] + np.arange(L)[None, :]
    return moments[idx]


def _numerically_zero(H, det, rel=1e-12):
    bound = np.prod(np.linalg.norm(H, axis=1))
    return bound == 0 or abs(det) <= rel * bound


def hankel_dets(moments, L_max):
    """``|det H_{L,0}|`` for ``L = 1..L_max`` and flags for numerical zeros."""
    dets = np.zeros(L_max)
    zero = np.zeros(L_max, dtype=bool)
    for L in range(1, L_max + 1):
        H = hankel(moments, L)
        d = np.linalg.det(H)
        dets[L - 1] = abs(d)
        zero[L - 1] = _numerically_zero(H, d)
    return dets, zero


def count_sources(dets, eps0, epsG, K_M=None, zero=None):
    """Determinant-ratio source count on ``dets[L-1] = |det H_L|``, ``L = 1..len(dets)``.

    Step 1: 0 if ``|det H_1| < eps0`` and ``|det H_1| > |det H_2|``.
    Step 2: the largest ``k`` with ``|det H_k| / |det H_{k-1}| > epsG``
    (``|det H_0| = 1``).  A ratio whose numerator or denominator is a
    numerical zero (``zero`` flags) counts as 0.  Capped at ``K_M``.
    """
    dets = np.asarray(dets, dtype=float)
    if zero is None:
        zero = np.zeros(len(dets), dtype=bool)
    K_M = len(dets) - 1 if K_M is None else K_M
    if len(dets) >= 2 and dets[0] < eps0 and dets[0] > dets[1]:
        return 0
    d = np.concatenate([[1.0], dets])
    z = np.concatenate([[False], zero])
    K = 0
    for k in range(1, len(d)):
        if z[k] or z[k - 1] or d[k - 1] == 0:
            continue
        if d[k] / d[k - 1] > epsG:
            K = k
    return min(K, K_M)


def count_sources_rank(zero, K_M):
    """Exact-data rule: the largest ``L`` with ``det H_L`` not (numerically) zero."""
    nonzero = np.nonzero(~np.asarray(zero))[0]
    return 0 if len(nonzero) == 0 else min(int(nonzero[-1]) + 1, K_M)


def xy_locations(H0, H1, max_cond=1e12):
    """Eigenvalues of ``H0^{-1} H1`` (generalized pencil, QZ)."""
    H0 = np.atleast_2d(H0)
    H1 = np.atleast_2d(H1)
    if np.linalg.cond(H0) > max_cond:
        raise InversionError("singular Hankel matrix (coalesced sources or overestimated count)")
    lam = sla.eigvals(H1, H0)
    if not np.all(np.isfinite(lam)):
        raise InversionError("non-finite eigenvalue")
    scale = np.linalg.norm(H1)
    for x in lam:
        s_min = np.linalg.svd(H1 - x * H0, compute_uv=False)[-1]
        if s_min > 1e-8 * max(scale, np.linalg.norm(H0) * abs(x)):
            raise InversionError("eigenpair residual too large")
    return np.sort_complex(lam)


def _check_nodes(nodes):
    nodes = np.asarray(nodes, dtype=complex)
    if len(nodes) > 1:
        d = np.abs(nodes[:, None] - nodes[None, :])
        gap = np.min(d[~np.eye(len(nodes), dtype=bool)])
        if gap <= 1e-10:
            raise InversionError(f"coalesced nodes (gap {gap:.3g})")
    return nodes


def vandermonde(nodes, rows):
    """``V[n, k] = nodes[k]**n`` for ``n = 0..rows-1``."""
    return np.asarray(nodes, dtype=complex)[None, :] ** np.arange(rows)[:, None]


def solve_nodes_system(nodes, rhs):
    """Weights ``w`` with ``sum_k w_k nodes_k^n = rhs[n]``, ``n = 0..K-1``."""
    nodes = _check_nodes(nodes)
    rhs = np.asarray(rhs, dtype=complex)
    V = vandermonde(nodes, len(nodes))
    w = np.linalg.solve(V, rhs)
    if not np.all(np.isfinite(w)):
        raise InversionError("non-finite Vandermonde solution")
    if np.linalg.norm(V @ w - rhs) > 1e-10 * max(np.linalg.norm(rhs), 1e-300):
        raise InversionError("Vandermonde residual too large")
    return w


def confluent_vandermonde(nodes):
    """``2K x 2K`` matrix with columns ``(psi_1..psi_K, psi'_1..psi'_K)``,
    ``psi_k = (1, p, .., p^{2K-1})`` and ``psi'_k`` its derivative in ``p``."""
    nodes = np.asarray(nodes, dtype=complex)
    K = len(nodes)
    n = np.arange(2 * K)[:, None]
    V = nodes[None, :] ** n
    D = np.zeros_like(V)
    D[1:] = n[1:] * nodes[None, :] ** (n[1:] - 1)
    return np.hstack([V, D])


def det_formula(nodes):
    """Closed form ``(-1)^{K(K-1)/2} prod_{j>k} (p_j - p_k)^4``."""
    nodes = np.asarray(nodes, dtype=complex)
    K = len(nodes)
    out = complex((-1) ** (K * (K - 1) // 2))
    for j in range(K):
        for k in range(j):
            out *= (nodes[j] - nodes[k]) ** 4
    return out


def solve_derivative_system(nodes, rhs, max_cond=1e12):
    """Solve the confluent system; returns ``(a, b)`` with
    ``rhs[n] = sum_k a_k p_k^n + n b_k p_k^{n-1}``."""
    nodes = _check_nodes(nodes)
    rhs = np.asarray(rhs, dtype=complex)
    K = len(nodes)
    Vt = confluent_vandermonde(nodes)
    if np.linalg.cond(Vt) > max_cond:
        raise InversionError("confluent Vandermonde system too ill-conditioned")
    x = np.linalg.solve(Vt, rhs)
    if not np.all(np.isfinite(x)):
        raise InversionError("non-finite confluent Vandermonde solution")
    if np.linalg.norm(Vt @ x - rhs) > 1e-9 * max(np.linalg.norm(rhs), 1e-300):
        raise InversionError("confluent Vandermonde residual too large")
    return x[:K], x[K:]


def _pw(P, e):
    """``P**e`` for ``e >= 0``; terms with negative powers carry a zero factor and vanish."""
    return P**e if e >= 0 else np.zeros_like(P)


_RHAT_NEEDS = {
    ("point", "h"): ("P", "w", "dw", "dP"),
    ("point", "i"): ("P", "w", "dw", "dP"),
    ("point", "j"): ("P", "w", "dw", "dP", "d2w", "d2P", "Z"),
    ("dipole", "h"): ("P", "w", "dw", "dP"),
    ("dipole", "i"): ("P", "w", "dw", "dP"),
    ("dipole", "j"): ("P", "w", "dw", "dP", "d2w", "d2P", "Z"),
}


def rhat_terms(kind, which, state, n, c=1.0):
    """Correction term for sequence ``which`` (``"h"``, ``"i"``, ``"j"``) at order ``n``.

    ``state`` maps ``P`` (nodes), ``w`` (zeta or mu), ``dw``, ``d2w`` and
    ``dP``, ``d2P`` (node derivatives) and ``Z`` to per-source arrays.
    """
    need = _RHAT_NEEDS[(kind, which)]
    missing = [k for k in need if k not in state]
    if missing:
        raise KeyError(f"state lacks {missing}")
    P = np.asarray(state["P"], dtype=complex)
    Pc = np.conj(P)
    w, dw, dP = (np.asarray(state[k], dtype=complex) for k in ("w", "dw", "dP"))
    dPc = np.conj(dP)
    if kind == "point":
        if which == "h":
            t = (dw * Pc + w * dPc) * _pw(P, n) / c + n / c * w * dP * Pc * _pw(P, n - 1)
        elif which == "i":
            t = 2 * n * dw * dP * _pw(P, n - 1) + n * (n - 1) * w * dP**2 * _pw(P, n - 2)
        else:
            d2w, d2P, Z = (np.asarray(state[k], dtype=complex) for k in ("d2w", "d2P", "Z"))
            d2Pc = np.conj(d2P)
            t = (
                2 * n * dw * Z * _pw(P, n - 1)
                + 2 * n * (n - 1) * w * dP * Z * _pw(P, n - 2)
                + d2w * Pc * _pw(P, n) / c
                + (2 * dw * dPc + w * d2Pc) * _pw(P, n) / c
                + n / c * (2 * dw * dP + w * d2P) * Pc * _pw(P, n - 1)
                + 2 * n / c * w * dP * dPc * _pw(P, n - 1)
                + n * (n - 1) / c * w * dP**2 * Pc * _pw(P, n - 2)
            )
        return complex(np.sum(t))
    wc, dwc = np.conj(w), np.conj(dw)
    if which == "h":
        t = (
            dwc * _pw(P, n) / c
            + n / c * (dw * Pc + wc * dP + w * dPc) * _pw(P, n - 1)
            + n * (n - 1) / c * w * dP * Pc * _pw(P, n - 2)
        )
    elif which == "i":
        t = 2 * n * (n - 1) * dw * dP * _pw(P, n - 2) + n * (n - 1) * (n - 2) * w * dP**2 * _pw(P, n - 3)
    else:
        d2w, d2P, Z = (np.asarray(state[k], dtype=complex) for k in ("d2w", "d2P", "Z"))
        d2wc, d2Pc = np.conj(d2w), np.conj(d2P)
        t = (
            2 * n * (n - 1) * dw * Z * _pw(P, n - 2)
            + 2 * n * (n - 1) * (n - 2) * w * dP * Z * _pw(P, n - 3)
            + d2wc * _pw(P, n) / c
            + n / c * d2w * Pc * _pw(P, n - 1)
            + n / c * (2 * dwc * dP + wc * d2P) * _pw(P, n - 1)
            + n / c * (2 * dw * dPc + w * d2Pc) * _pw(P, n - 1)
            + n * (n - 1) / c * wc * dP**2 * _pw(P, n - 2)
            + n * (n - 1) / c * (2 * dw * dP + w * d2P) * Pc * _pw(P, n - 2)
            + 2 * n * (n - 1) / c * w * dPc * dP * _pw(P, n - 2)
            + n * (n - 1) * (n - 2) / c * w * Pc * dP**2 * _pw(P, n - 3)
        )
    return complex(np.sum(t))


def _sequences(slc, kind):
    """Normalized sequences so both kinds share one machinery.

    Point: ``m[j] = Rf[j]``.  Dipole: ``m[j] = Rf[j+1]/(j+1)`` (likewise for
    ``Rg``, ``Ri``), i.e. the dipole relations divided by ``n``.
    """
    if kind == "point":
        return slc.Rf, slc.Rg, slc.Ri
    n = np.arange(1, slc.n_max + 1)
    return slc.Rf[1:] / n, slc.Rg[1:] / n, slc.Ri[1:] / n


def _depth_system(slc, kind, K, seq, rhat, P):
    """Solve ``sum_k (w_k X_k) P_k^{j} = rhs_j``, ``j = 0..K-1``, for ``w X``.

    Point: ``rhs_j = (R[j+1] - rhat(j+1)) / (2(j+1))``; dipole:
    ``rhs_j = (R[j+2] - rhat(j+2)) / (2(j+2)(j+1))``.
    """
    if kind == "point":
        n = np.arange(1, K + 1)
        rhs = np.array([(seq[m] - rhat(m)) / (2 * m) for m in n])
    else:
        n = np.arange(2, K + 2)
        rhs = np.array([(seq[m] - rhat(m)) / (2 * m * (m - 1)) for m in n])
    return solve_nodes_system(P, rhs)


def reconstruct_frame(slc, kind, cfg=InversionConfig()):
    """Steps 1-5 at one slice; never raises for numerical failures.

    Nodes from Step 2 with a vanishing weight or lying outside the ball in the
    plane cannot be sources; they are kept in the frame flagged ``ghost`` and
    the remaining steps run on the other nodes.
    """
    if kind not in ("point", "dipole"):
        raise ValueError(f"unknown source kind {kind!r}")
    need = 2 * cfg.K_M + (1 if kind == "dipole" else 0)
    if slc.n_max < need:
        raise ValueError(f"slice order {slc.n_max} < {need} required for K_M={cfg.K_M}")
    m, g, i2 = _sequences(slc, kind)
    dets, zero = hankel_dets(m, cfg.K_M + 1)
    if cfg.counter == "rank":
        K = count_sources_rank(zero, cfg.K_M)
    else:
        K = count_sources(dets, cfg.eps0, cfg.epsG, cfg.K_M, zero)
    frame = Frame(float(slc.tau), K, dets)
    if K == 0:
        return frame
    frame.pxy = np.full(K, np.nan + 0j)
    frame.pz, frame.dz, frame.xi, frame.t_emit = (np.full(K, np.nan) for _ in range(4))
    frame.strength = np.full(K, np.nan + 0j)
    frame.weight = np.full(K, np.nan + 0j)
    frame.flags = [[] for _ in range(K)]
    stage = "step2"
    try:
        P = xy_locations(hankel(m, K, 0), hankel(m, K, 1), cfg.max_cond)
        frame.pxy = P
        w = solve_nodes_system(P, m[:K])
        frame.weight = w.copy()
        keep = (np.abs(w) >= cfg.min_weight) & (np.abs(P) < cfg.R)
        for k in np.nonzero(~keep)[0]:
            frame.flags[k].append("ghost")
        if not keep.any():
            raise InversionError("no admissible node")
        sel = np.nonzero(keep)[0]
        if len(sel) < K:
            P = P[sel]
            w = solve_nodes_system(P, m[: len(sel)])
            frame.weight[sel] = w
        frame.diagnostics["active"] = sel
        res = _solve_steps(slc, kind, cfg, P, w, g, i2)
        stage = res.pop("failed", None)
        for key in ("pz", "t_emit"):
            getattr(frame, key)[sel] = res[key]
        frame.diagnostics["pz_imag"] = np.full(K, np.nan)
        frame.diagnostics["pz_imag"][sel] = res["pz_imag"]
        if stage is not None:
            raise InversionError(res["error"])
        if "dz_imag" in res:
            frame.diagnostics["dz_imag"] = np.full(K, np.nan)
            frame.diagnostics["dz_imag"][sel] = res["dz_imag"]
        _geometry_flags(frame, sel, cfg)
        if cfg.step4_mode != "algebraic":
            frame.stage = "step4_pending"
            return frame
        dz = np.full(K, np.nan)
        dz[sel] = res["dz"]
        _finish(frame, dz, kind, cfg)
    except (InversionError, np.linalg.LinAlgError, FloatingPointError, ValueError) as exc:
        frame.stage = stage or "step2"
        frame.diagnostics["error"] = str(exc)
    return frame


def _solve_steps(slc, kind, cfg, P, w, g, i2):
    """Steps 3-4 for admissible nodes; returns per-node arrays (and ``failed`` on error)."""
    c = cfg.c
    K = len(P)
    out = {"pz": np.full(K, np.nan), "t_emit": np.full(K, np.nan), "pz_imag": np.full(K, np.nan)}
    stage = "step3"
    try:
        dw, w_dP = solve_derivative_system(P, g[: 2 * K], cfg.max_cond)
        dP = w_dP / w
        state = {"P": P, "w": w, "dw": dw, "dP": dP}
        wZ = _depth_system(slc, kind, K, slc.Rh, lambda n: rhat_terms(kind, "h", state, n, c), P)
        Z = wZ / w
        out.update(pz=Z.real, t_emit=slc.tau - Z.real / c, pz_imag=Z.imag)
        # Step 4 also runs in finite-difference mode: its imaginary residue is
        # the consistency diagnostic, and a failure there is then not fatal.
        stage = "step4" if cfg.step4_mode == "algebraic" else None
        nn = np.arange(2 * K)
        if kind == "point":
            corr = np.array([rhat_terms(kind, "i", state, int(j), c) for j in nn])
        else:
            corr = np.array([rhat_terms(kind, "i", state, int(j) + 1, c) / (j + 1) for j in nn])
        d2w, w_d2P = solve_derivative_system(P, i2[: 2 * K] - corr, cfg.max_cond)
        state.update(d2w=d2w, d2P=w_d2P / w, Z=Z.real)
        wdZ = _depth_system(slc, kind, K, slc.Rj, lambda n: rhat_terms(kind, "j", state, n, c), P)
        dZ = wdZ / w
        out.update(dz=dZ.real, dz_imag=dZ.imag)
    except (InversionError, np.linalg.LinAlgError, FloatingPointError, ValueError) as exc:
        if stage is not None:
            out.update(failed=stage, error=str(exc))
    return out


def _finish(frame, dz, kind, cfg):
    """Step 5: Doppler factor and strengths for sources with a finite ``dz``.

    ``dz`` has one entry per frame source (nan where unavailable).  A source
    whose Doppler factor is below ``cfg.min_xi`` is flagged ``xi_small`` and
    left without a strength; the other sources are unaffected.  In algebraic
    mode a depth velocity whose imaginary residue exceeds ``cfg.max_imag``
    (exact data gives a real value), and in either mode one at or above the
    wave speed (sources are subsonic), is flagged ``doppler_inconsistent`` and
    the strength is withheld, since it would be divided by an unreliable factor.
    """
    dz = np.asarray(dz, dtype=float)
    dz_imag = frame.diagnostics.get("dz_imag", np.zeros(frame.K_hat))
    sel = frame.diagnostics.get("active", np.arange(frame.K_hat))
    frame.stage = "complete"
    for k in sel:
        if not np.isfinite(dz[k]):
            frame.flags[k].append("no_stencil")
            continue
        xi = 1.0 - dz[k] / cfg.c
        frame.dz[k] = dz[k]
        frame.xi[k] = xi
        residue = abs(dz_imag[k]) / cfg.c if cfg.step4_mode == "algebraic" else 0.0
        if residue > cfg.max_imag or abs(dz[k]) >= cfg.c:
            frame.flags[k].append("doppler_inconsistent")
            continue
        if abs(xi) < cfg.min_xi:
            frame.flags[k].append("xi_small")
            continue
        s = frame.weight[k] / xi
        if kind == "point":
            frame.diagnostics.setdefault("strength_imag", np.full(frame.K_hat, np.nan))[k] = s.imag
            s = complex(s.real)
        frame.strength[k] = s
        if abs(s) < cfg.ghost_level and "ghost" not in frame.flags[k]:
            frame.flags[k].append("ghost")


def _geometry_flags(frame, sel, cfg):
    """``outside`` for ``|p| >= R``; ``inconsistent`` when the recovered depth
    carries an imaginary residue above ``cfg.max_imag`` (exact data gives a
    real value; a large residue signals a source model mismatch, e.g. an
    undetected source)."""
    pz_im = np.abs(frame.diagnostics.get("pz_imag", np.zeros(frame.K_hat)))
    for k in sel:
        if np.hypot(abs(frame.pxy[k]), frame.pz[k]) >= cfg.R:
            frame.flags[k].append("outside")
        if pz_im[k] > cfg.max_imag:
            frame.flags[k].append("inconsistent")


def step4_finite_difference(frame, z_prev, z_next, h_prev, h_next, kind, cfg=InversionConfig()):
    """Step 4': ``dz = (z_next - z_prev) / (h_prev + h_next)`` per source, then Step 5.

    ``z_prev[k]`` is source ``k``'s depth at ``tau - h_prev[k]`` and ``z_next[k]``
    at ``tau + h_next[k]`` (the central difference when both steps equal
    ``dtau``; a zero step with the frame's own depth gives a one-sided
    difference).  Entries that are nan mark an unmatched source, which is
    flagged ``no_stencil``.  Updates ``frame`` in place and returns ``dz``.
    """
    if frame.stage != "step4_pending":
        raise ValueError(f"frame at tau={frame.tau} is not awaiting step 4' (stage {frame.stage!r})")
    z_prev, z_next = np.asarray(z_prev, float), np.asarray(z_next, float)
    h = np.asarray(h_prev, float) + np.asarray(h_next, float)
    with np.errstate(invalid="ignore", divide="ignore"):
        dz = np.where(h > 0, (z_next - z_prev) / np.where(h > 0, h, 1.0), np.nan)
    _finish(frame, dz, kind, cfg)
    return dz
