"""Pure numpy version of the compiled kernels (same semantics)."""

import numpy as np


def history_sum(prof, row, hist, step, num_threads=1):
    """``out[m] = sum_{lag>=1} prof[row[m], lag] * hist[step - lag, m]``.

    Samples before time zero read as 0.  ``num_threads`` is accepted for
    interface parity and ignored.
    """
    top = min(prof.shape[1] - 1, step)
    if top < 1:
        return np.zeros(hist.shape[1])
    # window[lag - 1] = hist[step - lag]
    window = hist[step - top : step][::-1]
    coef = prof[row, 1 : top + 1]
    out = np.zeros(hist.shape[1])
    for k in range(top):
        out += coef[:, k] * window[k]
    return out


def retarded_eval(codes, consts, off, dipole, t, r, c, tol=1e-12, max_iter=100, num_threads=1):
    """Retarded-time solve and free-field quotients for one source (numpy version).

    Same contract as the compiled kernel: returns ``(out1, out2, status)``.
    """
    from .expr import ExprError, run_program, run_program_dual

    def sl(k):
        return codes[off[k] : off[k + 1]], consts[off[k] : off[k + 1]]

    def position(s):
        pv = [run_program_dual(*sl(k), s) for k in range(3)]
        return np.stack([a for a, _ in pv], axis=-1), np.stack([b for _, b in pv], axis=-1)

    n = len(t)
    out1, out2 = np.zeros(n), np.zeros(n)
    status = np.zeros(n, dtype=np.int32)
    try:
        p, _ = position(t)
        s = t - np.linalg.norm(r - p, axis=-1) / c
        done = np.zeros(n, dtype=bool)
        for it in range(max_iter + 1):
            p, v = position(s)
            diff = r - p
            d = np.linalg.norm(diff, axis=-1)
            res = t - s - d / c
            hfac = 1.0 - np.sum(v * diff, axis=-1) / (c * np.maximum(d, 1e-300))
            done = np.abs(res) <= tol
            if np.all(done) or it == max_iter:
                break
            s = np.where(done, s, s + res / hfac)
        status[~done] = 1
        status[(status == 0) & (d < 1e-9)] = 2
        ok = status == 0
        dd = np.where(ok, d, 1.0)
        if dipole:
            md = run_program(*sl(3), s) * diff[:, 0] + run_program(*sl(4), s) * diff[:, 1]
            out1 = np.where(ok, md / (4.0 * np.pi * dd**3 * hfac), 0.0)
            out2 = np.where(ok, md / (dd**2 * hfac), 0.0)
        else:
            out1 = np.where(ok, run_program(*sl(3), s) / (4.0 * np.pi * dd * hfac), 0.0)
    except ExprError:
        status[:] = 3
    return out1, out2, status
