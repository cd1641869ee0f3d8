# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled history convolution for the boundary-integral time marching."""

import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange

cnp.import_array()


def history_sum(const double[:, ::1] prof, const cnp.int64_t[::1] row,
                const double[:, ::1] hist, Py_ssize_t step, int num_threads=1):
    """``out[m] = sum_{lag>=1} prof[row[m], lag] * hist[step - lag, m]``.

    Samples before time zero read as 0.  Every mode is reduced sequentially
    in increasing lag, so the result does not depend on ``num_threads``.
    """
    cdef Py_ssize_t n_modes = hist.shape[1]
    cdef Py_ssize_t n_lags = prof.shape[1]
    out_arr = np.zeros(n_modes, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t m, lag, top
    cdef double acc
    if num_threads < 1:
        num_threads = 1
    top = n_lags - 1
    if top > step:
        top = step
    for m in prange(n_modes, nogil=True, num_threads=num_threads, schedule="static"):
        acc = 0.0
        for lag in range(1, top + 1):
            acc = acc + prof[row[m], lag] * hist[step - lag, m]
        out[m] = acc
    return out_arr


from libc.math cimport sin, cos, sqrt, fabs, fmax

cdef enum:
    OP_CONST = 0
    OP_T = 1
    OP_ADD = 2
    OP_SUB = 3
    OP_MUL = 4
    OP_DIV = 5
    OP_NEG = 6
    OP_SIN = 7
    OP_COS = 8
    OP_ETA = 9
    MAX_STACK = 64

cdef double PI = 3.141592653589793
cdef double DIV_EPS = 1e-12


cdef inline double _eta(double s) noexcept nogil:
    cdef double a
    if s < 0.0:
        return 0.0
    if s < 1.0:
        a = sin(2.0 * PI * s)
        return s - (6.0 * a + a * a * a) / (12.0 * PI)
    return 1.0


cdef double _run(const cnp.int64_t[::1] codes, const double[::1] consts,
                 Py_ssize_t start, Py_ssize_t stop, double t, int* err) noexcept nogil:
    cdef double stack[MAX_STACK]
    cdef int top = -1
    cdef Py_ssize_t i
    cdef cnp.int64_t op
    cdef double b
    for i in range(start, stop):
        op = codes[i]
        if op == OP_CONST:
            top += 1
            stack[top] = consts[i]
        elif op == OP_T:
            top += 1
            stack[top] = t
        elif op == OP_NEG:
            stack[top] = -stack[top]
        elif op == OP_SIN:
            stack[top] = sin(stack[top])
        elif op == OP_COS:
            stack[top] = cos(stack[top])
        elif op == OP_ETA:
            stack[top] = _eta(stack[top])
        else:
            b = stack[top]
            top -= 1
            if op == OP_ADD:
                stack[top] = stack[top] + b
            elif op == OP_SUB:
                stack[top] = stack[top] - b
            elif op == OP_MUL:
                stack[top] = stack[top] * b
            else:
                if fabs(b) < DIV_EPS:
                    err[0] = 3
                    return 0.0
                stack[top] = stack[top] / b
    return stack[top]


cdef double _run_dual(const cnp.int64_t[::1] codes, const double[::1] consts,
                      Py_ssize_t start, Py_ssize_t stop, double t, double* deriv,
                      int* err) noexcept nogil:
    """Value and exact derivative (forward-mode dual numbers) of a program."""
    cdef double val[MAX_STACK]
    cdef double der[MAX_STACK]
    cdef int top = -1
    cdef Py_ssize_t i
    cdef cnp.int64_t op
    cdef double b, db, x, sa, ca
    for i in range(start, stop):
        op = codes[i]
        if op == OP_CONST:
            top += 1
            val[top] = consts[i]
            der[top] = 0.0
        elif op == OP_T:
            top += 1
            val[top] = t
            der[top] = 1.0
        elif op == OP_NEG:
            val[top] = -val[top]
            der[top] = -der[top]
        elif op == OP_SIN:
            x = val[top]
            val[top] = sin(x)
            der[top] = cos(x) * der[top]
        elif op == OP_COS:
            x = val[top]
            val[top] = cos(x)
            der[top] = -sin(x) * der[top]
        elif op == OP_ETA:
            x = val[top]
            if x < 0.0 or x >= 1.0:
                der[top] = 0.0
            else:
                sa = sin(2.0 * PI * x)
                ca = cos(2.0 * PI * x)
                der[top] = (1.0 - ca - 0.5 * sa * sa * ca) * der[top]
            val[top] = _eta(x)
        else:
            b = val[top]
            db = der[top]
            top -= 1
            if op == OP_ADD:
                val[top] = val[top] + b
                der[top] = der[top] + db
            elif op == OP_SUB:
                val[top] = val[top] - b
                der[top] = der[top] - db
            elif op == OP_MUL:
                der[top] = der[top] * b + val[top] * db
                val[top] = val[top] * b
            else:
                if fabs(b) < DIV_EPS:
                    err[0] = 3
                    deriv[0] = 0.0
                    return 0.0
                der[top] = (der[top] * b - val[top] * db) / (b * b)
                val[top] = val[top] / b
    deriv[0] = der[top]
    return val[top]


cdef inline void _position(const cnp.int64_t[::1] codes, const double[::1] consts,
                           const cnp.int64_t[::1] off, double s, double* p, double* v,
                           int* err) noexcept nogil:
    p[0] = _run_dual(codes, consts, off[0], off[1], s, &v[0], err)
    p[1] = _run_dual(codes, consts, off[1], off[2], s, &v[1], err)
    p[2] = _run_dual(codes, consts, off[2], off[3], s, &v[2], err)


cdef int _solve_one(const cnp.int64_t[::1] codes, const double[::1] consts,
                    const cnp.int64_t[::1] off, int dipole, double t,
                    double rx, double ry, double rz, double c, double tol, int max_iter,
                    double* out1, double* out2) noexcept nogil:
    cdef int it, err = 0
    cdef double s, d = 0.0, res, hfac = 1.0, md
    cdef double p[3]
    cdef double v[3]
    cdef double dx, dy, dz
    _position(codes, consts, off, t, p, v, &err)
    dx = rx - p[0]
    dy = ry - p[1]
    dz = rz - p[2]
    s = t - sqrt(dx * dx + dy * dy + dz * dz) / c
    for it in range(max_iter + 1):
        _position(codes, consts, off, s, p, v, &err)
        dx = rx - p[0]
        dy = ry - p[1]
        dz = rz - p[2]
        d = sqrt(dx * dx + dy * dy + dz * dz)
        res = t - s - d / c
        hfac = 1.0 - (v[0] * dx + v[1] * dy + v[2] * dz) / (c * fmax(d, 1e-300))
        if fabs(res) <= tol:
            break
        if it == max_iter:
            return 1
        s = s + res / hfac
    if err:
        return err
    if d < 1e-9:
        return 2
    if dipole:
        md = (_run(codes, consts, off[3], off[4], s, &err) * dx
              + _run(codes, consts, off[4], off[5], s, &err) * dy)
        out1[0] = md / (4.0 * PI * d * d * d * hfac)
        out2[0] = md / (d * d * hfac)
    else:
        out1[0] = _run(codes, consts, off[3], off[4], s, &err) / (4.0 * PI * d * hfac)
    return err


def retarded_eval(const cnp.int64_t[::1] codes, const double[::1] consts,
                  const cnp.int64_t[::1] off, int dipole,
                  const double[::1] t, const double[:, ::1] r, double c,
                  double tol=1e-12, int max_iter=100, int num_threads=1):
    """Retarded-time solve and free-field quotients for one source.

    ``off`` holds six program offsets: p_x, p_y, p_z, then one (point: q) or
    two (dipole: m_x, m_y) strength programs.  For point sources ``out1`` is
    ``q / (4 pi d h)``; for dipoles ``out1 = m.(r-p) / (4 pi d^3 h)`` and
    ``out2 = m.(r-p) / (d^2 h)``.  ``status`` is 0 (ok), 1 (no convergence),
    2 (point on the trajectory) or 3 (division by near zero).
    """
    cdef Py_ssize_t n = t.shape[0]
    out1_arr = np.zeros(n)
    out2_arr = np.zeros(n)
    status_arr = np.zeros(n, dtype=np.int32)
    cdef double[::1] out1 = out1_arr
    cdef double[::1] out2 = out2_arr
    cdef int[::1] status = status_arr
    cdef Py_ssize_t i
    if num_threads < 1:
        num_threads = 1
    for i in prange(n, nogil=True, num_threads=num_threads, schedule="static"):
        status[i] = _solve_one(codes, consts, off, dipole, t[i], r[i, 0], r[i, 1], r[i, 2],
                               c, tol, max_iter, &out1[i], &out2[i])
    return out1_arr, out2_arr, status_arr
