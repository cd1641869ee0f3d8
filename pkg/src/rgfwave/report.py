"""Error tables against scenario ground truth and plot-ready CSV output."""

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from .scenario import eval_source, retarded_emission_time, true_count


@dataclass
class ErrorTable:
    """Per-source, per-interval average errors (nan where a source is inactive)."""

    intervals: list
    kind: str
    loc: np.ndarray
    strength: np.ndarray
    coverage: np.ndarray
    assignment: dict = field(default_factory=dict)

    def text(self, fmt="{:.1E}"):
        return format_table(self, fmt)


def ground_truth(scn, taus):
    """Per source: ``t_emit`` (n,), positions (n, 3), complex strengths (n,) and activity mask."""
    taus = np.asarray(taus, dtype=float)
    out = []
    for s in scn.sources:
        tk = retarded_emission_time(s, taus, scn.c)
        p, st = eval_source(s, tk)
        p = np.broadcast_to(p, taus.shape + (3,)).copy()
        if s.kind == "point":
            st = np.broadcast_to(st, taus.shape).astype(complex)
        else:
            st = np.broadcast_to(st, taus.shape + (2,))
            st = st[..., 0] + 1j * st[..., 1]
        out.append({"t_emit": tk, "position": p, "strength": st, "active": np.abs(st) > 0})
    return out


def count_intervals(scn, taus):
    """Maximal runs of constant ``K(tau)`` over the grid ``taus`` as ``(lo, hi, K)``;
    ``hi`` is the next grid point (half-open)."""
    taus = np.asarray(taus, dtype=float)
    k = true_count(scn, taus)
    out = []
    start = 0
    for i in range(1, len(taus) + 1):
        if i == len(taus) or k[i] != k[start]:
            hi = taus[i] if i < len(taus) else taus[-1] + (taus[1] - taus[0] if len(taus) > 1 else 0.0)
            if k[start] > 0:
                out.append((float(taus[start]), float(hi), int(k[start])))
            start = i
    return out


def fixed_intervals(scn, bounds):
    """``(lo, hi)`` pairs annotated with the true count at each midpoint."""
    out = []
    for lo, hi in bounds:
        k = int(true_count(scn, np.array([0.5 * (lo + hi)]))[0])
        out.append((float(lo), float(hi), k))
    return out


def _interval_mask(taus, lo, hi):
    eps = 1e-9
    return (taus >= lo - eps) & (taus < hi - eps)


# A strength withheld by the reconstruction's own consistency check counts as
# not estimated (like an undetected source), not as a failure.
WITHHELD_FLAGS = ("doppler_inconsistent",)


def _estimates(track, taus, with_presence=False):
    pos = np.full((len(taus), 3), np.nan)
    st = np.full(len(taus), np.nan + 0j)
    present = np.zeros((len(taus), 2), dtype=bool)
    lookup = {round(s.tau, 9): s for s in track.samples}
    for i, t in enumerate(taus):
        s = lookup.get(round(float(t), 9))
        if s is not None:
            pos[i] = s.position
            st[i] = s.strength
            present[i] = True, not any(f in WITHHELD_FLAGS for f in s.flags)
    return (pos, st, present) if with_presence else (pos, st)


def assign_tracks(tracks, truth, taus, gate=0.5):
    """Map each track to the ground-truth source with the smallest mean distance
    over the track's lifetime (run-level, so the correspondence never flips
    frame to frame).  Tracks with no overlap with any active source, or whose
    best mean distance exceeds ``gate``, map to -1."""
    out = {}
    for ti, tr in enumerate(tracks):
        pos, _ = _estimates(tr, taus)
        best, arg = np.inf, -1
        for si, t in enumerate(truth):
            ok = t["active"] & np.isfinite(pos).all(axis=1)
            if not ok.any():
                continue
            d = float(np.mean(np.linalg.norm(pos[ok] - t["position"][ok], axis=1)))
            if d < best:
                best, arg = d, si
        out[ti] = arg if best <= gate else -1
    return out


def source_estimates(tracks, assignment, n_sources, taus):
    """Per source, ``(positions, strengths, present)`` on ``taus`` merged from its tracks.

    ``present[:, 0]`` marks samples where an assigned track has a sample,
    whether or not its estimates are finite; ``present[:, 1]`` additionally
    requires that the strength was not withheld (``WITHHELD_FLAGS``).  Where several assigned tracks overlap, the
    longest track with a finite value wins (ties: lower id).
    """
    est = []
    order = sorted(range(len(tracks)), key=lambda i: (-len(tracks[i].samples), tracks[i].id))
    for si in range(n_sources):
        pos = np.full((len(taus), 3), np.nan)
        st = np.full(len(taus), np.nan + 0j)
        present = np.zeros((len(taus), 2), dtype=bool)
        for ti in order:
            if assignment.get(ti) != si:
                continue
            p, q, pr = _estimates(tracks[ti], taus, with_presence=True)
            present |= pr
            fill = ~np.isfinite(pos).all(axis=1) & np.isfinite(p).all(axis=1)
            pos[fill] = p[fill]
            fill = ~np.isfinite(st) & np.isfinite(q)
            st[fill] = q[fill]
        est.append((pos, st, present))
    return est


def average_errors(tracks, scn, intervals, taus, frames_ok=None, exclude_near_zero=False, near_zero=0.05,
                   missed="skip", min_active=0.5):
    """RMS location and strength errors per source and interval.

    Tracks are tied to ground-truth sources once for the whole run
    (:func:`assign_tracks`).  A source is reported in an interval when it is
    active on at least ``min_active`` of the interval's samples; the mean runs
    over the samples where it is active.  ``taus`` is the reconstruction grid
    and ``frames_ok[i]`` marks frames that completed.  A missing estimate
    contributes the ground-truth magnitude as its error (conservative) when the
    frame failed or when the source was tracked there but a later step could
    not produce the value.  A source that is active but not detected (or not
    tracked) in a completed frame is skipped (``missed="skip"``, reported as
    reduced coverage) or penalised the same way (``missed="penalize"``).
    """
    if missed not in ("skip", "penalize"):
        raise ValueError("missed must be 'skip' or 'penalize'")
    taus = np.asarray(taus, dtype=float)
    if frames_ok is None:
        frames_ok = np.ones(len(taus), dtype=bool)
    truth = ground_truth(scn, taus)
    assignment = assign_tracks(tracks, truth, taus)
    est = source_estimates(tracks, assignment, len(truth), taus)
    nS, nI = len(truth), len(intervals)
    loc = np.full((nS, nI), np.nan)
    mag = np.full((nS, nI), np.nan)
    cov = np.full((nS, nI), np.nan)
    for j, (lo, hi, _k) in enumerate(intervals):
        mask = _interval_mask(taus, lo, hi)
        if not mask.any():
            raise ValueError(f"empty interval [{lo}, {hi})")
        for si, tr in enumerate(truth):
            act = mask & tr["active"]
            if act.sum() < min_active * mask.sum():
                continue
            if exclude_near_zero:
                act &= np.abs(tr["strength"]) >= near_zero
            if not act.any():
                continue
            pos, st, present = est[si]
            idx = np.nonzero(act)[0]
            true_p = tr["position"][idx]
            true_s = tr["strength"][idx]
            results = []
            for q, (have, err, worst) in enumerate((
                (np.isfinite(pos[idx]).all(axis=1), np.linalg.norm(pos[idx] - true_p, axis=1), np.linalg.norm(true_p, axis=1)),
                (np.isfinite(st[idx]), np.abs(st[idx] - true_s), np.abs(true_s)),
            )):
                failed = ~frames_ok[idx] | present[idx, q]
                conservative = failed & ~have
                if missed == "penalize":
                    conservative |= ~have
                err = np.where(conservative, worst, err)
                use = have | conservative
                results.append(np.sqrt(np.mean(err[use] ** 2)) if use.any() else np.nan)
                if q == 0:
                    cov[si, j] = np.mean(have)
            loc[si, j], mag[si, j] = results
    kind = scn.sources[0].kind if scn.sources else "point"
    return ErrorTable(list(intervals), kind, loc, mag, cov, assignment)


def format_table(table, fmt="{:.1E}"):
    """Aligned text: one row per source location and strength, one column per interval."""
    sname = "q" if table.kind == "point" else "m"
    head = [""] + [f"{lo:g}<=tau<{hi:g} (K={k})" for lo, hi, k in table.intervals]
    rows = [head]
    for name, arr in (("p", table.loc), (sname, table.strength)):
        for s in range(arr.shape[0]):
            rows.append([f"{name}{s + 1}"] + ["-" if np.isnan(v) else fmt.format(v) for v in arr[s]])
    widths = [max(len(r[c]) for r in rows) for c in range(len(head))]
    return "\n".join("  ".join(r[c].rjust(widths[c]) for c in range(len(r))) for r in rows)


def write_table_csv(table, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["quantity", "source", "tau_lo", "tau_hi", "K_true", "error", "coverage"])
        for name, arr in (("location", table.loc), ("strength", table.strength)):
            for s in range(arr.shape[0]):
                for j, (lo, hi, k) in enumerate(table.intervals):
                    if np.isnan(arr[s, j]):
                        continue
                    w.writerow([name, s + 1, f"{lo:.17g}", f"{hi:.17g}", k, f"{arr[s, j]:.17g}", f"{table.coverage[s, j]:.17g}"])


def count_accuracy(frames, scn):
    """Fraction of frames whose ``K_hat`` equals the true count."""
    if not frames:
        return float("nan")
    taus = np.array([f.tau for f in frames])
    k = true_count(scn, taus)
    return float(np.mean(np.array([f.K_hat for f in frames]) == k))


def emit_plots(tracks, scn, frames, outdir, K_M=4):
    """Write ``truth_vs_estimate.csv``, ``dets.csv`` and ``count_summary.csv`` into ``outdir``."""
    os.makedirs(outdir, exist_ok=True)
    taus = np.array([f.tau for f in frames], dtype=float)
    g = lambda v: f"{v:.17g}"
    with open(os.path.join(outdir, "truth_vs_estimate.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["source", "track_id", "tau", "t_true", "px_true", "py_true", "pz_true", "s_re_true", "s_im_true",
                    "t_est", "px", "py", "pz", "s_re", "s_im"])
        if len(taus) and tracks:
            truth = ground_truth(scn, taus)
            assignment = assign_tracks(tracks, truth, taus)
            for ti, tr in enumerate(tracks):
                si = assignment[ti]
                for smp in tr.samples:
                    i = int(np.argmin(np.abs(taus - smp.tau)))
                    if si >= 0:
                        p = truth[si]["position"][i]
                        st = truth[si]["strength"][i]
                        tt = [truth[si]["t_emit"][i], *p, st.real, st.imag]
                    else:
                        tt = [np.nan] * 6
                    est = [smp.t_emit, *smp.position, smp.strength.real, smp.strength.imag]
                    w.writerow([si + 1 if si >= 0 else 0, tr.id, g(smp.tau), *map(g, tt), *map(g, est)])
    with open(os.path.join(outdir, "dets.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tau", "K_hat", "K_true"] + [f"L{L}" for L in range(1, K_M + 2)])
        ktrue = true_count(scn, taus) if len(taus) else []
        for f, kt in zip(frames, ktrue):
            d = list(f.dets) + [np.nan] * (K_M + 1 - len(f.dets))
            w.writerow([g(f.tau), f.K_hat, int(kt)] + [g(v) for v in d[: K_M + 1]])
    with open(os.path.join(outdir, "count_summary.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["noise_level", "n_frames", "count_accuracy"])
        w.writerow([g(scn.noise_level), len(frames), g(count_accuracy(frames, scn))])
