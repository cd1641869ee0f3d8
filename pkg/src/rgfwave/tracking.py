"""Greedy nearest-neighbour association of per-slice sources into tracks."""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class TrackSample:
    tau: float
    t_emit: float
    position: np.ndarray
    strength: complex
    xi: float
    flags: tuple
    frame_index: int
    source_index: int


@dataclass
class Track:
    id: int
    samples: list = field(default_factory=list)
    status: str = "active"
    misses: int = 0

    @property
    def taus(self):
        return np.array([s.tau for s in self.samples])

    @property
    def last_position(self):
        return self.samples[-1].position

    def sample_at(self, tau, tol=1e-9):
        for s in self.samples:
            if abs(s.tau - tau) <= tol:
                return s
        return None


def _distance(a, b):
    """Euclidean distance using the components finite in both vectors."""
    ok = np.isfinite(a) & np.isfinite(b)
    if not ok[:2].all():
        return np.inf
    return float(np.linalg.norm(a[ok] - b[ok]))


def associate(prev_positions, prev_ids, next_positions, d_gate=0.5):
    """Greedy matching in ascending distance; returns an id per next source or -1 (new track).

    Ties are broken by ``(prev id, next index)`` so the result does not depend
    on the order in which pairs are enumerated.
    """
    pairs = []
    for a, pid in enumerate(prev_ids):
        for b, q in enumerate(next_positions):
            d = _distance(np.asarray(prev_positions[a], float), np.asarray(q, float))
            if d <= d_gate:
                pairs.append((d, pid, b))
    pairs.sort()
    out = np.full(len(next_positions), -1, dtype=np.int64)
    used = set()
    for d, pid, b in pairs:
        if pid in used or out[b] >= 0:
            continue
        out[b] = pid
        used.add(pid)
    return out


EXCLUDED_FLAGS = ("ghost", "inconsistent")


def trackable(fr, exclude=EXCLUDED_FLAGS):
    """Indices of frame sources eligible for tracking (finite planar node, no excluded flag)."""
    out = []
    for k in range(fr.K_hat):
        flags = fr.flags[k] if k < len(fr.flags) else ()
        if any(f in flags for f in exclude):
            continue
        if not np.isfinite(fr.pxy[k]):
            continue
        out.append(k)
    return out


def track_frames(frames, d_gate=0.5, patience=3, exclude=EXCLUDED_FLAGS):
    """Assign ``frame.track_ids`` for every frame (in tau order) and return the tracks.

    Sources flagged as in ``exclude`` stay in the frame with track id -1.  A
    track unmatched for more than ``patience`` consecutive frames is closed.
    """
    tracks = []
    active = []
    for fi, fr in enumerate(frames):
        sel = trackable(fr, exclude)
        all_pos = fr.positions if fr.K_hat else np.zeros((0, 3))
        pos = all_pos[sel]
        prev_ids = [t.id for t in active]
        prev_pos = [t.last_position for t in active]
        ids = associate(prev_pos, prev_ids, pos, d_gate)
        for i in range(len(ids)):
            b = sel[i]
            if ids[i] < 0:
                tr = Track(len(tracks))
                tracks.append(tr)
                active.append(tr)
                ids[i] = tr.id
            tr = tracks[ids[i]]
            tr.misses = 0
            flags = tuple(fr.flags[b]) if b < len(fr.flags) else ()
            tr.samples.append(
                TrackSample(
                    fr.tau,
                    float(fr.t_emit[b]) if b < len(fr.t_emit) else np.nan,
                    all_pos[b].copy(),
                    complex(fr.strength[b]) if b < len(fr.strength) else complex(np.nan),
                    float(fr.xi[b]) if b < len(fr.xi) else np.nan,
                    flags,
                    fi,
                    b,
                )
            )
        matched = set(int(i) for i in ids)
        full = np.full(fr.K_hat, -1, dtype=np.int64)
        full[sel] = ids
        still = []
        for tr in active:
            if tr.id not in matched:
                tr.misses += 1
                if tr.misses > patience:
                    tr.status = "closed"
                    continue
            still.append(tr)
        active = still
        fr.track_ids = full
    for tr in tracks:
        if tr.status == "active" and frames and tr.samples[-1].frame_index < len(frames) - 1:
            tr.status = "closed"
    return tracks


def _track_depth(frames, i, tid, step, max_gap, same_count):
    """Nearest finite depth of track ``tid`` from frame ``i`` in direction ``step``."""
    K = frames[i].K_hat
    for gap in range(1, max_gap + 1):
        j = i + step * gap
        if not 0 <= j < len(frames) or (same_count and frames[j].K_hat != K):
            break
        other = list(getattr(frames[j], "track_ids", []))
        if tid in other:
            zj = frames[j].pz[other.index(tid)]
            if np.isfinite(zj):
                return zj, abs(frames[j].tau - frames[i].tau)
            break
    return np.nan, 0.0


def depth_stencil(frames, i, max_gap=2):
    """Neighbouring depths of frame ``i``'s sources along their tracks.

    For each source, the nearest sample of the same track within ``max_gap``
    frames on each side is used.  Frames with the same source count as frame
    ``i`` are preferred: across a count change the depths come from different
    source models and are not comparable, so the search stops there unless
    neither side has a same-count neighbour (an isolated frame).  When one side
    is missing the frame's own depth stands in (a one-sided difference); when
    both are missing the entries are nan.  Returns
    ``(z_prev, z_next, h_prev, h_next)`` with ``h`` the tau offsets.
    """
    fr = frames[i]
    K = fr.K_hat
    z = [np.full(K, np.nan), np.full(K, np.nan)]
    h = [np.zeros(K), np.zeros(K)]
    for k, tid in enumerate(getattr(fr, "track_ids", [])):
        if tid < 0:
            continue
        for same_count in (True, False):
            for side, step in ((0, -1), (1, 1)):
                z[side][k], h[side][k] = _track_depth(frames, i, tid, step, max_gap, same_count)
            if np.isfinite(z[0][k]) or np.isfinite(z[1][k]):
                break
        for side in (0, 1):
            if np.isnan(z[side][k]) and np.isfinite(z[1 - side][k]):
                z[side][k] = fr.pz[k]
    return z[0], z[1], h[0], h[1]


def track_summary(tracks):
    """Rows ``(id, tau_start, tau_end, n_samples)``."""
    return [(t.id, t.samples[0].tau, t.samples[-1].tau, len(t.samples)) for t in tracks if t.samples]
