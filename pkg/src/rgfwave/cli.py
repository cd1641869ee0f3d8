"""Command-line entry point: simulate, reconstruct, pipeline, verify, report."""

import argparse
import csv
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
import numpy as np

from . import forward, report
from .inversion import Frame, InversionConfig, reconstruct_frame, step4_finite_difference
from .rgf import admissible_range, rgf_table, table_slice
from .scenario import builtin_scenarios, eval_source, load_scenario
from .tracking import depth_stencil, track_frames, track_summary


def _g(v):
    return "%.17g" % v


def inversion_config(recon, c, R):
    mode = "algebraic" if recon.step4_mode == "algebraic" else "fd"
    return InversionConfig(K_M=recon.K_M, eps0=recon.eps0, epsG=recon.epsG, step4_mode=mode, c=c, R=R)


def reconstruction_taus(field, recon):
    """``tau = l * dtau`` on the admissible range, minus its first and last two samples."""
    dtau = recon.dtau
    hi = int(np.floor(admissible_range(field, dtau) / dtau + 1e-9)) - 2
    if recon.t_end is not None:
        hi = min(hi, int(np.floor(recon.t_end / dtau + 1e-9)))
    return dtau * np.arange(2, hi + 1)


def reconstruct_field(field, kind, recon, R=None, threads=1, taus=None, chunk=200):
    """Frames at every reconstruction ``tau`` plus their tracks.

    Per-tau work is independent and runs on ``threads`` workers; results are
    collected in tau order so the output does not depend on scheduling.
    Step 4' (``step4_mode="fd"``) runs as a sequential second pass.
    """
    R = field.grid.radius if R is None else R
    cfg = inversion_config(recon, field.c, R)
    taus = reconstruction_taus(field, recon) if taus is None else np.asarray(taus, dtype=float)
    n_max = 2 * cfg.K_M + (1 if kind == "dipole" else 0)
    frames = []
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        for s in range(0, len(taus), chunk):
            table = rgf_table(field, taus[s : s + chunk], n_max, recon.dtau)
            slices = [table_slice(table, i) for i in range(len(table["tau"]))]
            frames.extend(pool.map(lambda slc: reconstruct_frame(slc, kind, cfg), slices))
    if cfg.step4_mode == "fd":
        # Source identities for the stencil: only ghosts are left out, so a
        # flagged neighbour still supplies its depth.
        track_frames(frames, exclude=("ghost",))
        for i, fr in enumerate(frames):
            if fr.stage == "step4_pending":
                step4_finite_difference(fr, *depth_stencil(frames, i), kind, cfg)
    tracks = track_frames(frames)
    return frames, tracks


FRAME_COLUMNS = ["tau", "K_hat", "source_index", "track_id", "t_emit", "px", "py", "pz", "dz", "xi",
                 "strength_re", "strength_im", "flags"]


def write_frames(frames, path, K_M):
    n_det = K_M + 1
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FRAME_COLUMNS + [f"det{L}" for L in range(1, n_det + 1)] + ["stage"])
        for fr in frames:
            dets = [_g(d) for d in fr.dets] + ["nan"] * (n_det - len(fr.dets))
            if fr.K_hat == 0:
                w.writerow([_g(fr.tau), 0, -1, -1] + ["nan"] * 8 + [""] + dets[:n_det] + [fr.stage])
                continue
            for k in range(fr.K_hat):
                s = complex(fr.strength[k]) if k < len(fr.strength) else complex(np.nan)
                w.writerow([
                    _g(fr.tau), fr.K_hat, k, int(fr.track_ids[k]) if len(fr.track_ids) else -1,
                    _g(fr.t_emit[k]), _g(fr.pxy[k].real), _g(fr.pxy[k].imag), _g(fr.pz[k]), _g(fr.dz[k]),
                    _g(fr.xi[k]), _g(s.real), _g(s.imag), "|".join(fr.flags[k]) if fr.flags else "",
                ] + dets[:n_det] + [fr.stage])


def load_frames(path):
    """Frames from a frames CSV (enough state for tracking and reporting)."""
    rows = {}
    order = []
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        det_cols = [c for c in rd.fieldnames if c.startswith("det")]
        for r in rd:
            tau = float(r["tau"])
            if tau not in rows:
                rows[tau] = []
                order.append(tau)
            rows[tau].append(r)
    frames = []
    for tau in order:
        rs = rows[tau]
        dets = np.array([float(rs[0][c]) for c in det_cols])
        K = int(rs[0]["K_hat"])
        fr = Frame(tau, K, dets, stage=rs[0]["stage"])
        if K:
            rs = sorted(rs, key=lambda r: int(r["source_index"]))
            f = lambda key: np.array([float(r[key]) for r in rs])
            fr.pxy = f("px") + 1j * f("py")
            fr.pz, fr.dz, fr.xi, fr.t_emit = f("pz"), f("dz"), f("xi"), f("t_emit")
            fr.strength = f("strength_re") + 1j * f("strength_im")
            fr.flags = [[x for x in r["flags"].split("|") if x] for r in rs]
            fr.track_ids = np.array([int(r["track_id"]) for r in rs], dtype=np.int64)
        frames.append(fr)
    return frames


def write_tracks(tracks, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "tau_start", "tau_end", "n_samples"])
        for tid, a, b, n in track_summary(tracks):
            w.writerow([tid, _g(a), _g(b), n])


def _resolve_scenario(path):
    if path is None:
        raise SystemExit("--scenario is required")
    if not os.path.exists(path):
        builtin = builtin_scenarios()
        if path in builtin:
            return builtin[path]
        raise SystemExit(f"scenario not found: {path}")
    return load_scenario(path)


def _apply_overrides(scn, args):
    try:
        return scn.with_overrides(
            noise_level=args.noise, rng_seed=args.seed, dtau=args.dtau,
            step4_mode={"fd": "finite_difference"}.get(args.step4, args.step4),
            K_M=args.kmax, eps0=args.eps0, epsG=args.epsg,
        )
    except (ValueError, TypeError) as exc:
        raise SystemExit(f"invalid override: {exc}")


def first_active_time(scn, step=None):
    """Earliest grid time at which any source has nonzero strength."""
    t = np.arange(scn.n_steps + 1) * scn.dt
    best = np.inf
    for s in scn.sources:
        _, st = eval_source(s, t)
        mag = np.abs(st) if s.kind == "point" else np.linalg.norm(st, axis=-1)
        nz = np.nonzero(mag > 0)[0]
        if len(nz):
            best = min(best, t[nz[0]])
    return best


def simulate(scn, out, threads=1, log=print):
    os.makedirs(out, exist_ok=True)
    t0 = time.perf_counter()
    field = forward.march_boundary_field(scn, threads=threads)
    clean = field
    field = forward.add_noise(field, scn.noise_level, scn.rng_seed)
    path = os.path.join(out, "field.csv")
    forward.save_field(field, path)
    ta = first_active_time(scn)
    quiet = clean.times < ta - 1e-12
    pre = float(np.max(np.abs(clean.phi[quiet]))) if quiet.any() else 0.0
    log(f"simulate: {field.n_steps + 1} steps x {field.grid.n_nodes} nodes in {time.perf_counter() - t0:.2f} s "
        f"(source {clean.info['time_source']:.2f} s, march {clean.info['time_march']:.2f} s)")
    log(f"causality: max |phi| before first source activity (t < {ta:g}) = {pre:.3g}")
    if scn.noise_level > 0:
        r = forward.noise_ratio(field.grid, field.phi, clean.phi)
        log(f"noise: relative L2 ratio per step = {np.max(r[r > 0]) if np.any(r > 0) else 0:.6g}")
    return field, path


def reconstruct(scn, field, out, threads=1, log=print):
    os.makedirs(out, exist_ok=True)
    if field.scenario_hash != scn.digest():
        log("warning: field was generated from a different scenario description")
    if abs(field.grid.radius - scn.R) > 1e-12 or abs(field.c - scn.c) > 1e-12:
        raise SystemExit("field grid or wave speed incompatible with the scenario")
    t0 = time.perf_counter()
    frames, tracks = reconstruct_field(field, scn.kind, scn.recon, scn.R, threads=threads)
    write_frames(frames, os.path.join(out, "frames.csv"), scn.recon.K_M)
    write_tracks(tracks, os.path.join(out, "tracks.csv"))
    done = sum(f.stage == "complete" or f.K_hat == 0 for f in frames)
    log(f"reconstruct: {len(frames)} frames ({done} complete), {len(tracks)} tracks in {time.perf_counter() - t0:.2f} s")
    return frames, tracks


def tracks_from_frames(frames):
    """Rebuild tracks from frames carrying ``track_ids`` (as read from CSV)."""
    from .tracking import Track, TrackSample

    tracks = {}
    for fi, fr in enumerate(frames):
        for k in range(fr.K_hat):
            tid = int(fr.track_ids[k])
            if tid < 0:
                continue
            tr = tracks.setdefault(tid, Track(tid))
            tr.samples.append(TrackSample(fr.tau, fr.t_emit[k], fr.positions[k], complex(fr.strength[k]), fr.xi[k],
                                          tuple(fr.flags[k]), fi, k))
    return [tracks[k] for k in sorted(tracks)]


def make_report(scn, frames, tracks, out, exclude_near_zero=False, log=print):
    os.makedirs(out, exist_ok=True)
    taus = np.array([f.tau for f in frames])
    ok = np.array([f.stage == "complete" or f.K_hat == 0 for f in frames])
    if scn.recon.intervals:
        intervals = report.fixed_intervals(scn, scn.recon.intervals)
    else:
        intervals = report.count_intervals(scn, taus)
    table = report.average_errors(tracks, scn, intervals, taus, ok, exclude_near_zero=exclude_near_zero)
    text = table.text()
    with open(os.path.join(out, "errors.txt"), "w") as fh:
        fh.write(text + "\n")
    report.write_table_csv(table, os.path.join(out, "errors.csv"))
    report.emit_plots(tracks, scn, frames, os.path.join(out, "plots"), scn.recon.K_M)
    log(text)
    log(f"count accuracy: {report.count_accuracy(frames, scn):.3f}")
    return table


def _parser():
    p = argparse.ArgumentParser(prog="rgfwave", description="Moving wave-source reconstruction from boundary data.")
    p.add_argument("command", choices=["simulate", "reconstruct", "pipeline", "verify", "report"])
    p.add_argument("--scenario", help="scenario JSON path or built-in name (point3, dipole3)")
    p.add_argument("--field", help="boundary field CSV")
    p.add_argument("--frames", help="frames CSV (report)")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--noise", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--dtau", type=float)
    p.add_argument("--step4", choices=["algebraic", "fd"])
    p.add_argument("--kmax", type=int)
    p.add_argument("--eps0", type=float)
    p.add_argument("--epsg", type=float)
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    p.add_argument("--exclude-near-zero", action="store_true", help="drop samples with |strength| < 0.05 from errors")
    p.add_argument("--quick", action="store_true", help="verify: smaller oracle problems")
    return p


def main(argv=None):
    args = _parser().parse_args(argv)
    if args.command == "verify":
        from .verify import run_all

        return 0 if run_all(quick=args.quick) else 1
    scn = _apply_overrides(_resolve_scenario(args.scenario), args)
    try:
        if args.command == "simulate":
            simulate(scn, args.out, args.threads)
        elif args.command == "reconstruct":
            if not args.field:
                raise SystemExit("--field is required")
            field = forward.load_field(args.field)
            reconstruct(scn, field, args.out, args.threads)
        elif args.command == "pipeline":
            field, _ = simulate(scn, args.out, args.threads)
            frames, tracks = reconstruct(scn, field, args.out, args.threads)
            make_report(scn, frames, tracks, args.out, args.exclude_near_zero)
        elif args.command == "report":
            path = args.frames or os.path.join(args.out, "frames.csv")
            frames = load_frames(path)
            make_report(scn, frames, tracks_from_frames(frames), args.out, args.exclude_near_zero)
    except (forward.ForwardError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
