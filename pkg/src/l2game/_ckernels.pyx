# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels for stacks of small dense matrices.

Every routine works on a stack ``(n, d, d)`` of equally sized blocks with
``d <= MAXD``.  The pure-numpy module ``_pykernels`` exposes the same
functions with the same semantics; ``l2game.kernels`` selects one at import.
"""

import numpy as np

from libc.math cimport fabs, frexp, ldexp, isfinite, sqrt

cdef enum:
    MAXD = 16
    MAXSQ = 256
    MAXNODES = 32

cdef double THETA13 = 5.371920351148152
cdef double[14] PADE13 = [
    64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
    1187353796428800.0, 129060195264000.0, 10559470521600.0,
    670442572800.0, 33522128640.0, 1323241920.0, 40840800.0,
    960960.0, 16380.0, 182.0, 1.0,
]


cdef inline void _matmul(const double* a, const double* b, double* c, int n) noexcept nogil:
    cdef int i, j, k
    cdef double acc
    for i in range(n):
        for j in range(n):
            acc = 0.0
            for k in range(n):
                acc += a[i * n + k] * b[k * n + j]
            c[i * n + j] = acc


cdef inline void _matmul_bt(const double* a, const double* b, double* c, int n) noexcept nogil:
    # c = a @ b.T
    cdef int i, j, k
    cdef double acc
    for i in range(n):
        for j in range(n):
            acc = 0.0
            for k in range(n):
                acc += a[i * n + k] * b[j * n + k]
            c[i * n + j] = acc


cdef inline void _matvec(const double* a, const double* x, double* y, int n) noexcept nogil:
    cdef int i, k
    cdef double acc
    for i in range(n):
        acc = 0.0
        for k in range(n):
            acc += a[i * n + k] * x[k]
        y[i] = acc


cdef int _lu_solve(double* m, double* rhs, int n) noexcept nogil:
    """Solve m @ X = rhs in place (rhs is n x n); partial pivoting."""
    cdef int i, j, k, p
    cdef double piv, f, tmp
    for k in range(n):
        p = k
        piv = fabs(m[k * n + k])
        for i in range(k + 1, n):
            if fabs(m[i * n + k]) > piv:
                piv = fabs(m[i * n + k])
                p = i
        if piv == 0.0:
            return -1
        if p != k:
            for j in range(n):
                tmp = m[k * n + j]; m[k * n + j] = m[p * n + j]; m[p * n + j] = tmp
                tmp = rhs[k * n + j]; rhs[k * n + j] = rhs[p * n + j]; rhs[p * n + j] = tmp
        for i in range(k + 1, n):
            f = m[i * n + k] / m[k * n + k]
            if f != 0.0:
                for j in range(k + 1, n):
                    m[i * n + j] -= f * m[k * n + j]
                for j in range(n):
                    rhs[i * n + j] -= f * rhs[k * n + j]
            m[i * n + k] = 0.0
    for k in range(n - 1, -1, -1):
        for j in range(n):
            tmp = rhs[k * n + j]
            for i in range(k + 1, n):
                tmp -= m[k * n + i] * rhs[i * n + j]
            rhs[k * n + j] = tmp / m[k * n + k]
    return 0


cdef int _expm(const double* a, double scale, double* out, int n) noexcept nogil:
    """out = exp(scale * a) by Pade [13/13] scaling and squaring."""
    cdef double a1[MAXSQ]
    cdef double a2[MAXSQ]
    cdef double a4[MAXSQ]
    cdef double a6[MAXSQ]
    cdef double u[MAXSQ]
    cdef double v[MAXSQ]
    cdef double t1[MAXSQ]
    cdef double t2[MAXSQ]
    cdef int i, j, s, e, nn = n * n
    cdef double colsum, norm = 0.0, f
    for j in range(n):
        colsum = 0.0
        for i in range(n):
            colsum += fabs(a[i * n + j])
        if colsum > norm:
            norm = colsum
    norm *= fabs(scale)
    if not isfinite(norm):
        return -2
    s = 0
    if norm > THETA13:
        frexp(norm / THETA13, &e)
        s = e
    f = ldexp(scale, -s)
    for i in range(nn):
        a1[i] = f * a[i]
    _matmul(a1, a1, a2, n)
    _matmul(a2, a2, a4, n)
    _matmul(a4, a2, a6, n)
    # U = a1 @ (a6 @ (b13 a6 + b11 a4 + b9 a2) + b7 a6 + b5 a4 + b3 a2 + b1 I)
    for i in range(nn):
        t1[i] = PADE13[13] * a6[i] + PADE13[11] * a4[i] + PADE13[9] * a2[i]
    _matmul(a6, t1, t2, n)
    for i in range(nn):
        t2[i] += PADE13[7] * a6[i] + PADE13[5] * a4[i] + PADE13[3] * a2[i]
    for i in range(n):
        t2[i * n + i] += PADE13[1]
    _matmul(a1, t2, u, n)
    # V = a6 @ (b12 a6 + b10 a4 + b8 a2) + b6 a6 + b4 a4 + b2 a2 + b0 I
    for i in range(nn):
        t1[i] = PADE13[12] * a6[i] + PADE13[10] * a4[i] + PADE13[8] * a2[i]
    _matmul(a6, t1, v, n)
    for i in range(nn):
        v[i] += PADE13[6] * a6[i] + PADE13[4] * a4[i] + PADE13[2] * a2[i]
    for i in range(n):
        v[i * n + i] += PADE13[0]
    for i in range(nn):
        t1[i] = v[i] - u[i]
        out[i] = v[i] + u[i]
    if _lu_solve(t1, out, n) != 0:
        return -1
    for j in range(s):
        _matmul(out, out, t1, n)
        for i in range(nn):
            out[i] = t1[i]
    return 0


cdef int _cholesky(const double* w, double* l, int n) noexcept nogil:
    cdef int i, j, k
    cdef double acc
    for i in range(n * n):
        l[i] = 0.0
    for j in range(n):
        acc = w[j * n + j]
        for k in range(j):
            acc -= l[j * n + k] * l[j * n + k]
        if not (acc > 0.0) or not isfinite(acc):
            return j
        l[j * n + j] = sqrt(acc)
        for i in range(j + 1, n):
            acc = w[i * n + j]
            for k in range(j):
                acc -= l[i * n + k] * l[j * n + k]
            l[i * n + j] = acc / l[j * n + j]
    return -1


def _check_dim(int d):
    if d > MAXD:
        raise ValueError(f"block dimension {d} exceeds compiled limit {MAXD}")


def expm_stack(a, t):
    """Return ``exp(t[k] * a[k])`` for every block of the stack."""
    cdef const double[:, :, ::1] av = np.ascontiguousarray(a, dtype=np.float64)
    cdef const double[::1] tv = np.ascontiguousarray(np.broadcast_to(t, (av.shape[0],)), dtype=np.float64)
    cdef int n = av.shape[0], d = av.shape[1], k, rc = 0
    _check_dim(d)
    out = np.empty((n, d, d))
    cdef double[:, :, ::1] ov = out
    with nogil:
        for k in range(n):
            rc = _expm(&av[k, 0, 0], tv[k], &ov[k, 0, 0], d)
            if rc != 0:
                break
    if rc != 0:
        raise FloatingPointError("matrix exponential failed (non-finite or singular Pade denominator)")
    return out


def gramian_stack(a, double h, int panels, xi, wq, double sign):
    """Composite Gauss-Legendre value of ``int_0^{panels*h} e^{sign r A} e^{sign r A^T} dr``."""
    cdef const double[:, :, ::1] av = np.ascontiguousarray(a, dtype=np.float64)
    cdef const double[::1] xv = np.ascontiguousarray(xi, dtype=np.float64)
    cdef const double[::1] wv = np.ascontiguousarray(wq, dtype=np.float64)
    cdef int n = av.shape[0], d = av.shape[1], m = xv.shape[0]
    cdef int k, j, p, i, c, nn = d * d, rc = 0
    cdef double g[MAXSQ]
    cdef double fm[MAXSQ]
    cdef double w0[MAXSQ]
    cdef double s[MAXSQ]
    cdef double t1[MAXSQ]
    cdef double t2[MAXSQ]
    cdef double coef, sym
    _check_dim(d)
    out = np.empty((n, d, d))
    cdef double[:, :, ::1] ov = out
    with nogil:
        for k in range(n):
            rc = _expm(&av[k, 0, 0], sign * h, g, d)
            if rc != 0:
                break
            for i in range(nn):
                w0[i] = 0.0
            for j in range(m):
                rc = _expm(&av[k, 0, 0], sign * 0.5 * h * (1.0 + xv[j]), fm, d)
                if rc != 0:
                    break
                _matmul_bt(fm, fm, t1, d)
                coef = 0.5 * h * wv[j]
                for i in range(nn):
                    w0[i] += coef * t1[i]
            if rc != 0:
                break
            for i in range(nn):
                s[i] = w0[i]
            for p in range(1, panels):
                _matmul(g, s, t1, d)
                _matmul_bt(t1, g, t2, d)
                for i in range(nn):
                    s[i] = w0[i] + t2[i]
                for i in range(d):
                    for c in range(i + 1, d):
                        sym = 0.5 * (s[i * d + c] + s[c * d + i])
                        s[i * d + c] = sym
                        s[c * d + i] = sym
            for i in range(nn):
                ov[k, i // d, i % d] = s[i]
    if rc != 0:
        raise FloatingPointError("matrix exponential failed during Gramian assembly")
    return out


def propagate_stack(a, x0, wvals, double h, xi, wq):
    """State at ``P*h`` from ``x0`` under forcing sampled at the panel nodes.

    ``wvals`` has shape ``(n, P, m, d)`` holding the forcing at
    ``p*h + h*(1+xi[j])/2``.
    """
    cdef const double[:, :, ::1] av = np.ascontiguousarray(a, dtype=np.float64)
    cdef const double[:, ::1] x0v = np.ascontiguousarray(x0, dtype=np.float64)
    cdef const double[:, :, :, ::1] fv = np.ascontiguousarray(wvals, dtype=np.float64)
    cdef const double[::1] xv = np.ascontiguousarray(xi, dtype=np.float64)
    cdef const double[::1] wv = np.ascontiguousarray(wq, dtype=np.float64)
    cdef int n = av.shape[0], d = av.shape[1], m = xv.shape[0], panels = fv.shape[1]
    cdef int k, j, p, i, nn = d * d, rc = 0
    cdef double g[MAXSQ]
    cdef double fm[MAXNODES * MAXSQ]
    cdef double acc[MAXD]
    cdef double tmp[MAXD]
    cdef double fw[MAXD]
    cdef double coef
    _check_dim(d)
    if m > MAXNODES:
        raise ValueError(f"at most {MAXNODES} nodes per panel supported")
    out = np.empty((n, d))
    cdef double[:, ::1] ov = out
    with nogil:
        for k in range(n):
            rc = _expm(&av[k, 0, 0], h, g, d)
            for j in range(m):
                if rc != 0:
                    break
                rc = _expm(&av[k, 0, 0], 0.5 * h * (1.0 - xv[j]), &fm[j * nn], d)
            if rc != 0:
                break
            for i in range(d):
                acc[i] = x0v[k, i]
            for p in range(panels):
                _matvec(g, acc, tmp, d)
                for j in range(m):
                    coef = 0.5 * h * wv[j]
                    _matvec(&fm[j * nn], &fv[k, p, j, 0], fw, d)
                    for i in range(d):
                        tmp[i] += coef * fw[i]
                for i in range(d):
                    acc[i] = tmp[i]
            for i in range(d):
                ov[k, i] = acc[i]
    if rc != 0:
        raise FloatingPointError("matrix exponential failed during propagation")
    return out


def exp_action_stack(a, y, double h, int panels, xi):
    """Samples ``e^{(q*h + h*(1+xi[j])/2) a} y`` with shape ``(n, panels, m, d)``."""
    cdef const double[:, :, ::1] av = np.ascontiguousarray(a, dtype=np.float64)
    cdef const double[:, ::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef const double[::1] xv = np.ascontiguousarray(xi, dtype=np.float64)
    cdef int n = av.shape[0], d = av.shape[1], m = xv.shape[0]
    cdef int k, j, q, i, nn = d * d, rc = 0
    cdef double g[MAXSQ]
    cdef double fm[MAXNODES * MAXSQ]
    cdef double cur[MAXD]
    cdef double tmp[MAXD]
    _check_dim(d)
    if m > MAXNODES:
        raise ValueError(f"at most {MAXNODES} nodes per panel supported")
    out = np.empty((n, panels, m, d))
    cdef double[:, :, :, ::1] ov = out
    with nogil:
        for k in range(n):
            rc = _expm(&av[k, 0, 0], h, g, d)
            for j in range(m):
                if rc != 0:
                    break
                rc = _expm(&av[k, 0, 0], 0.5 * h * (1.0 + xv[j]), &fm[j * nn], d)
            if rc != 0:
                break
            for i in range(d):
                cur[i] = yv[k, i]
            for q in range(panels):
                for j in range(m):
                    _matvec(&fm[j * nn], cur, &ov[k, q, j, 0], d)
                _matvec(g, cur, tmp, d)
                for i in range(d):
                    cur[i] = tmp[i]
    if rc != 0:
        raise FloatingPointError("matrix exponential failed during sampling")
    return out


def cholesky_stack(w):
    """Lower Cholesky factors of a stack; returns ``(L, bad)``.

    ``bad`` is ``(-1, -1)`` on success, otherwise ``(block, pivot)`` of the
    first non-positive pivot.
    """
    cdef const double[:, :, ::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef int n = wv.shape[0], d = wv.shape[1], k, piv = -1
    _check_dim(d)
    out = np.empty((n, d, d))
    cdef double[:, :, ::1] ov = out
    with nogil:
        for k in range(n):
            piv = _cholesky(&wv[k, 0, 0], &ov[k, 0, 0], d)
            if piv >= 0:
                break
    if piv >= 0:
        return out, (k, piv)
    return out, (-1, -1)


def cho_solve_stack(l, b):
    """Solve ``L L^T y = b`` for every block."""
    cdef const double[:, :, ::1] lv = np.ascontiguousarray(l, dtype=np.float64)
    cdef const double[:, ::1] bv = np.ascontiguousarray(b, dtype=np.float64)
    cdef int n = lv.shape[0], d = lv.shape[1], k, i, j
    cdef double acc
    out = np.empty((n, d))
    cdef double[:, ::1] ov = out
    with nogil:
        for k in range(n):
            for i in range(d):
                acc = bv[k, i]
                for j in range(i):
                    acc -= lv[k, i, j] * ov[k, j]
                ov[k, i] = acc / lv[k, i, i]
            for i in range(d - 1, -1, -1):
                acc = ov[k, i]
                for j in range(i + 1, d):
                    acc -= lv[k, j, i] * ov[k, j]
                ov[k, i] = acc / lv[k, i, i]
    return out
