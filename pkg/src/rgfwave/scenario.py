"""Scenario configuration: scripted source trajectories and run parameters."""

import hashlib
import json
from dataclasses import dataclass, field, replace
from importlib import resources

import numpy as np

from .expr import evaluate, parse_expr, to_text

STEP4_MODES = ("algebraic", "finite_difference")


@dataclass(frozen=True)
class SourceSpec:
    """One moving point or dipole source.

    ``strength`` holds the tree for ``q`` (point) or the pair ``(m_x, m_y)``
    (dipole); the z-component of a dipole moment is always zero.
    """

    kind: str
    position: tuple
    strength: tuple

    @classmethod
    def from_dict(cls, d):
        kind = d.get("kind", "point")
        pos = tuple(parse_expr(str(d[k])) for k in ("px", "py", "pz"))
        if kind == "point":
            strength = (parse_expr(str(d["q"])),)
        elif kind == "dipole":
            if "mz" in d and str(d["mz"]).strip() not in ("0", "0.0"):
                raise ValueError("dipole sources must have m_z = 0")
            strength = (parse_expr(str(d["mx"])), parse_expr(str(d["my"])))
        else:
            raise ValueError(f"unknown source kind {kind!r}")
        return cls(kind, pos, strength)

    def to_dict(self):
        d = {"kind": self.kind}
        for key, e in zip(("px", "py", "pz"), self.position):
            d[key] = to_text(e)
        keys = ("q",) if self.kind == "point" else ("mx", "my")
        for key, e in zip(keys, self.strength):
            d[key] = to_text(e)
        return d


def eval_source(spec, t):
    """Position ``(..., 3)`` and strength at time(s) ``t``.

    Strength is ``q`` with the shape of ``t`` for point sources and
    ``(..., 2)`` moments ``(m_x, m_y)`` for dipoles.
    """
    t = np.asarray(t, dtype=float)
    pos = np.stack([evaluate(e, t) for e in spec.position], axis=-1)
    if spec.kind == "point":
        return pos, evaluate(spec.strength[0], t)
    return pos, np.stack([evaluate(e, t) for e in spec.strength], axis=-1)


def fd_step(t):
    return 1e-5 * np.maximum(1.0, np.abs(t))


def velocity(spec, t):
    """Central-difference time derivative of the position."""
    t = np.asarray(t, dtype=float)
    h = fd_step(t)
    p_plus, _ = eval_source(spec, t + h)
    p_minus, _ = eval_source(spec, t - h)
    return (p_plus - p_minus) / (2.0 * h)[..., None]


@dataclass(frozen=True)
class ReconConfig:
    dtau: float = 0.1
    K_M: int = 4
    eps0: float = 1e-4
    epsG: float = 2.5e-2
    step4_mode: str = "algebraic"
    t_end: float = None
    intervals: tuple = None


@dataclass(frozen=True)
class Scenario:
    """Wave speed, horizon, grid, noise and sources of one experiment."""

    c: float
    T: float
    dt: float
    R: float
    J: int
    K: int
    sources: tuple
    noise_level: float = 0.0
    rng_seed: int = 0
    recon: ReconConfig = field(default_factory=ReconConfig)
    name: str = ""

    @property
    def kind(self):
        return self.sources[0].kind if self.sources else "point"

    @property
    def n_steps(self):
        return int(round(self.T / self.dt))

    def to_dict(self):
        rc = self.recon
        recon = {"dtau": rc.dtau, "K_M": rc.K_M, "eps0": rc.eps0, "epsG": rc.epsG, "step4_mode": rc.step4_mode}
        if rc.t_end is not None:
            recon["t_end"] = rc.t_end
        if rc.intervals is not None:
            recon["intervals"] = [list(iv) for iv in rc.intervals]
        return {
            "name": self.name,
            "c": self.c,
            "T": self.T,
            "dt": self.dt,
            "grid": {"R": self.R, "J": self.J, "K": self.K},
            "noise_level": self.noise_level,
            "rng_seed": self.rng_seed,
            "sources": [s.to_dict() for s in self.sources],
            "recon": recon,
        }

    def digest(self):
        """Short content hash used to tag derived files."""
        text = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def with_overrides(self, **kw):
        """Copy with top-level or recon fields replaced; ``None`` values are ignored."""
        kw = {k: v for k, v in kw.items() if v is not None}
        recon_keys = set(ReconConfig.__dataclass_fields__)
        recon = {k: kw.pop(k) for k in list(kw) if k in recon_keys}
        out = replace(self, recon=replace(self.recon, **recon), **kw)
        validate(out)
        return out


def scenario_from_dict(d):
    g = d.get("grid", {})
    r = d.get("recon", {})
    intervals = r.get("intervals")
    recon = ReconConfig(
        dtau=float(r.get("dtau", 0.1)),
        K_M=int(r.get("K_M", 4)),
        eps0=float(r.get("eps0", 1e-4)),
        epsG=float(r.get("epsG", 2.5e-2)),
        step4_mode=str(r.get("step4_mode", "algebraic")),
        t_end=None if r.get("t_end") is None else float(r["t_end"]),
        intervals=None if intervals is None else tuple(tuple(float(v) for v in iv) for iv in intervals),
    )
    scn = Scenario(
        c=float(d.get("c", 1.0)),
        T=float(d["T"]),
        dt=float(d.get("dt", 0.1)),
        R=float(g.get("R", 2.0)),
        J=int(g.get("J", 18)),
        K=int(g.get("K", 36)),
        sources=tuple(SourceSpec.from_dict(s) for s in d.get("sources", [])),
        noise_level=float(d.get("noise_level", 0.0)),
        rng_seed=int(d.get("rng_seed", 0)),
        recon=recon,
        name=str(d.get("name", "")),
    )
    validate(scn)
    return scn


def load_scenario(path):
    with open(path, encoding="utf-8") as fh:
        return scenario_from_dict(json.load(fh))


def save_scenario(scn, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scn.to_dict(), fh, indent=2)
        fh.write("\n")


def builtin_scenarios():
    """The two shipped experiments: ``point3`` and ``dipole3``."""
    out = {}
    for name in ("point3", "dipole3"):
        text = resources.files("rgfwave").joinpath("data", f"{name}.json").read_text(encoding="utf-8")
        out[name] = scenario_from_dict(json.loads(text))
    return out


def max_speed(spec, T, step=1e-2):
    t = np.arange(0.0, T + 0.5 * step, step)
    return float(np.max(np.linalg.norm(velocity(spec, t), axis=-1)))


def max_radius(spec, T, step=1e-2):
    t = np.arange(0.0, T + 0.5 * step, step)
    pos, _ = eval_source(spec, t)
    return float(np.max(np.linalg.norm(pos, axis=-1)))


def validate(scn, step=1e-2):
    """Raise ``ValueError`` if a scenario invariant is violated."""
    if not (scn.c > 0 and scn.dt > 0 and scn.R > 0):
        raise ValueError("c, dt and R must be positive")
    if scn.J < 1 or scn.K < 1:
        raise ValueError("grid sizes must be positive")
    if not scn.T > 4.0 * scn.R / scn.c:
        raise ValueError(f"horizon T={scn.T} must exceed twice the diameter over c ({4 * scn.R / scn.c})")
    if abs(scn.n_steps * scn.dt - scn.T) > 1e-9 * scn.T:
        raise ValueError("T must be an integer multiple of dt")
    if scn.noise_level < 0:
        raise ValueError("noise level must be non-negative")
    rc = scn.recon
    if rc.step4_mode not in STEP4_MODES:
        raise ValueError(f"step4_mode must be one of {STEP4_MODES}")
    if rc.dtau <= 0 or rc.K_M < 1 or rc.eps0 <= 0 or rc.epsG <= 0:
        raise ValueError("dtau, K_M, eps0, epsG must be positive")
    if len({s.kind for s in scn.sources}) > 1:
        raise ValueError("mixing point and dipole sources is not supported")
    for i, s in enumerate(scn.sources):
        if max_speed(s, scn.T, step) >= scn.c:
            raise ValueError(f"source {i} moves at or above the wave speed")
        if max_radius(s, scn.T, step) >= scn.R:
            raise ValueError(f"source {i} leaves the ball of radius {scn.R}")


def retarded_emission_time(spec, tau, c, tol=1e-13):
    """Bisection solve of ``t - tau + p_z(t)/c = 0`` (one root since |dp_z/dt| < c)."""
    tau = np.asarray(tau, dtype=float)
    zfun = spec.position[2]

    def f(t):
        return t - tau + evaluate(zfun, t) / c

    bound = np.ones_like(tau)
    for _ in range(60):
        bad = (f(tau - bound) > 0) | (f(tau + bound) < 0)
        if not np.any(bad):
            break
        bound = np.where(bad, 2.0 * bound, bound)
    lo, hi = tau - bound, tau + bound
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        neg = f(mid) < 0
        lo = np.where(neg, mid, lo)
        hi = np.where(neg, hi, mid)
        if np.all(hi - lo <= tol * np.maximum(1.0, np.abs(tau))):
            break
    return 0.5 * (lo + hi)


def true_count(scn, tau):
    """Number of sources with nonzero strength at their emission time ``t_k(tau)``."""
    tau = np.asarray(tau, dtype=float)
    n = np.zeros(tau.shape, dtype=int)
    for s in scn.sources:
        tk = retarded_emission_time(s, tau, scn.c)
        _, st = eval_source(s, tk)
        mag = np.abs(st) if s.kind == "point" else np.linalg.norm(st, axis=-1)
        n += mag > 0
    return n
