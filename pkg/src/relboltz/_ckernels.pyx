# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""
Compiled geodesic kernels for the metric families with closed-form
Christoffel symbols (codes 0, 1, 2).  The algorithms match ``_pykernels``.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport ceil, isfinite

cnp.import_array()

cdef enum:
    NMAX = 16


cdef inline void accel(int code, const double* kp, int nkp, int n,
                       const double* x, const double* p, double* out) noexcept nogil:
    cdef int i, k
    cdef double bp, pp, t, a, da, tk, s2
    if code == 0:
        for i in range(n):
            out[i] = 0.0
    elif code == 1:
        bp = 0.0
        pp = -p[0] * p[0]
        for i in range(n):
            bp += kp[1 + i] * p[i]
        for i in range(1, n):
            pp += p[i] * p[i]
        out[0] = -p[0] * bp - 0.5 * pp * kp[1]
        for i in range(1, n):
            out[i] = -p[i] * bp + 0.5 * pp * kp[1 + i]
    else:
        t = x[0]
        a = 0.0
        da = 0.0
        tk = 1.0
        for k in range(nkp):
            a += kp[k] * tk
            if k + 1 < nkp:
                da += (k + 1) * kp[k + 1] * tk
            tk *= t
        s2 = 0.0
        for i in range(1, n):
            s2 += p[i] * p[i]
        out[0] = -a * da * s2
        for i in range(1, n):
            out[i] = -2.0 * (da / a) * p[0] * p[i]


cdef inline void rk4(int code, const double* kp, int nkp, int n,
                     const double* x, const double* p, double dt,
                     double* xo, double* po) noexcept nogil:
    cdef double k1x[NMAX]
    cdef double k1p[NMAX]
    cdef double k2x[NMAX]
    cdef double k2p[NMAX]
    cdef double k3x[NMAX]
    cdef double k3p[NMAX]
    cdef double k4p[NMAX]
    cdef double tx[NMAX]
    cdef double tp[NMAX]
    cdef int i
    accel(code, kp, nkp, n, x, p, k1p)
    for i in range(n):
        k1x[i] = p[i]
        tx[i] = x[i] + 0.5 * dt * k1x[i]
        tp[i] = p[i] + 0.5 * dt * k1p[i]
    accel(code, kp, nkp, n, tx, tp, k2p)
    for i in range(n):
        k2x[i] = tp[i]
        tx[i] = x[i] + 0.5 * dt * k2x[i]
        tp[i] = p[i] + 0.5 * dt * k2p[i]
    accel(code, kp, nkp, n, tx, tp, k3p)
    for i in range(n):
        k3x[i] = tp[i]
        tx[i] = x[i] + dt * k3x[i]
        tp[i] = p[i] + dt * k3p[i]
    accel(code, kp, nkp, n, tx, tp, k4p)
    for i in range(n):
        xo[i] = x[i] + dt / 6.0 * (k1x[i] + 2.0 * k2x[i] + 2.0 * k3x[i] + tp[i])
        po[i] = p[i] + dt / 6.0 * (k1p[i] + 2.0 * k2p[i] + 2.0 * k3p[i] + k4p[i])


cdef inline bint inside(int n, const double* x, const double* lo, const double* hi) noexcept nogil:
    cdef int i
    for i in range(n):
        if not (x[i] >= lo[i] and x[i] <= hi[i]):
            return False
    return True


cdef inline bint finite(int n, const double* x, const double* p) noexcept nogil:
    cdef int i
    for i in range(n):
        if not (isfinite(x[i]) and isfinite(p[i])):
            return False
    return True


def rk4_path(int code, double[::1] kp, double[::1] clo, double[::1] chi,
             double[::1] x0, double[::1] p0, double h, int nsteps):
    cdef int n = x0.shape[0]
    cdef int nkp = kp.shape[0]
    cdef cnp.ndarray[double, ndim=2] X = np.empty((nsteps + 1, n))
    cdef cnp.ndarray[double, ndim=2] P = np.empty((nsteps + 1, n))
    cdef double[:, ::1] Xv = X
    cdef double[:, ::1] Pv = P
    cdef int i, k, flag = 0, last = nsteps
    if n > NMAX:
        raise ValueError("dimension too large for the compiled kernel")
    for i in range(n):
        Xv[0, i] = x0[i]
        Pv[0, i] = p0[i]
    with nogil:
        for k in range(nsteps):
            rk4(code, &kp[0], nkp, n, &Xv[k, 0], &Pv[k, 0], h, &Xv[k + 1, 0], &Pv[k + 1, 0])
            if not finite(n, &Xv[k + 1, 0], &Pv[k + 1, 0]):
                flag = -1
                last = k + 1
                break
            if not inside(n, &Xv[k + 1, 0], &clo[0], &chi[0]):
                flag = 1
                last = k + 1
                break
    return X[:last + 1], P[:last + 1], flag


def box_crossing(int code, double[::1] kp, double[::1] clo, double[::1] chi,
                 double[:, ::1] X, double[:, ::1] P, double[::1] blo, double[::1] bhi,
                 double[::1] h, double tol, long max_steps):
    cdef Py_ssize_t B = X.shape[0], b
    cdef int n = X.shape[1]
    cdef int nkp = kp.shape[0]
    cdef int i
    cdef long k
    cdef double x[NMAX]
    cdef double p[NMAX]
    cdef double xn[NMAX]
    cdef double pn[NMAX]
    cdef double ex[NMAX]
    cdef double ep[NMAX]
    cdef double lx[NMAX]
    cdef double lp[NMAX]
    cdef double es, ls, lo_, hi_, mid, hb
    cdef bint found, need_entry, open_end, ins
    cdef cnp.ndarray[double, ndim=1] ell_in = np.zeros(B)
    cdef cnp.ndarray[double, ndim=1] ell_out = np.zeros(B)
    cdef cnp.ndarray[long, ndim=1] status = np.zeros(B, dtype=np.int64)
    cdef double[::1] ein = ell_in
    cdef double[::1] eout = ell_out
    cdef long[::1] st = status
    if n > NMAX:
        raise ValueError("dimension too large for the compiled kernel")
    with nogil:
        for b in range(B):
            hb = h[b]
            for i in range(n):
                x[i] = X[b, i]
                p[i] = P[b, i]
                lx[i] = x[i]
                lp[i] = p[i]
            found = inside(n, x, &blo[0], &bhi[0])
            open_end = found
            need_entry = False
            es = 0.0
            ls = 0.0
            if found:
                st[b] = 1
            if not (x[0] >= blo[0] and inside(n, x, &clo[0], &chi[0])):
                continue
            k = 0
            while True:
                if k >= max_steps:
                    st[b] = 3
                    break
                rk4(code, &kp[0], nkp, n, x, p, -hb, xn, pn)
                k += 1
                if not finite(n, xn, pn):
                    st[b] = -1
                    open_end = False
                    break
                ins = inside(n, xn, &blo[0], &bhi[0])
                if not inside(n, xn, &clo[0], &chi[0]):
                    ins = False
                if ins and not found:
                    for i in range(n):
                        ex[i] = x[i]
                        ep[i] = p[i]
                    es = (k - 1) * hb
                    need_entry = True
                    found = True
                    st[b] = 1
                if ins:
                    for i in range(n):
                        lx[i] = xn[i]
                        lp[i] = pn[i]
                    ls = k * hb
                    open_end = True
                else:
                    open_end = False
                for i in range(n):
                    x[i] = xn[i]
                    p[i] = pn[i]
                if not inside(n, xn, &clo[0], &chi[0]):
                    st[b] = 2
                    break
                if xn[0] < blo[0]:
                    break
            if need_entry:
                lo_ = 0.0
                hi_ = hb
                while hi_ - lo_ > tol:
                    mid = 0.5 * (lo_ + hi_)
                    rk4(code, &kp[0], nkp, n, ex, ep, -mid, xn, pn)
                    if inside(n, xn, &blo[0], &bhi[0]):
                        hi_ = mid
                    else:
                        lo_ = mid
                ein[b] = es + hi_
            if found and not open_end:
                lo_ = 0.0
                hi_ = hb
                while hi_ - lo_ > tol:
                    mid = 0.5 * (lo_ + hi_)
                    rk4(code, &kp[0], nkp, n, lx, lp, -mid, xn, pn)
                    if inside(n, xn, &blo[0], &bhi[0]):
                        lo_ = mid
                    else:
                        hi_ = mid
                eout[b] = ls + lo_
            elif found:
                eout[b] = ls
    return ell_in, ell_out, status


def flow_nodes(int code, double[::1] kp, double[:, ::1] X, double[:, ::1] P,
               double[::1] s_a, double[::1] s_b, double[::1] h, double[::1] hq,
               double[::1] th, double[::1] tw):
    cdef Py_ssize_t B = X.shape[0], b
    cdef int n = X.shape[1]
    cdef int nkp = kp.shape[0]
    cdef int ngl = th.shape[0]
    cdef int i, q
    cdef long j, m0, m1
    cdef double dt0, dt1, span, d, t, c00, c10, c01, c11
    cdef double x[NMAX]
    cdef double p[NMAX]
    cdef double xn[NMAX]
    cdef double pn[NMAX]
    cdef double a0[NMAX]
    cdef double a1[NMAX]
    cdef Py_ssize_t pos
    if n > NMAX:
        raise ValueError("dimension too large for the compiled kernel")
    cdef cnp.ndarray[long, ndim=1] m1s = np.zeros(B, dtype=np.int64)
    cdef long[::1] m1v = m1s
    for b in range(B):
        span = s_b[b] - s_a[b]
        if span > 0:
            m1 = <long>ceil(span / hq[b] - 1e-12)
            m1v[b] = m1 if m1 > 0 else 1
    counts = m1s * ngl
    offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    cdef long[::1] off = offsets
    total = int(offsets[-1])
    cdef cnp.ndarray[double, ndim=2] Xn = np.empty((total, n))
    cdef cnp.ndarray[double, ndim=2] Pn = np.empty((total, n))
    cdef cnp.ndarray[double, ndim=1] Wn = np.empty(total)
    cdef double[:, ::1] Xv = Xn
    cdef double[:, ::1] Pv = Pn
    cdef double[::1] Wv = Wn
    with nogil:
        for b in range(B):
            for i in range(n):
                x[i] = X[b, i]
                p[i] = P[b, i]
            if s_a[b] > 0:
                m0 = <long>ceil(s_a[b] / h[b] - 1e-12)
                if m0 < 1:
                    m0 = 1
                dt0 = s_a[b] / m0
                for j in range(m0):
                    rk4(code, &kp[0], nkp, n, x, p, -dt0, xn, pn)
                    for i in range(n):
                        x[i] = xn[i]
                        p[i] = pn[i]
            m1 = m1v[b]
            if m1 == 0:
                continue
            dt1 = (s_b[b] - s_a[b]) / m1
            d = -dt1
            for j in range(m1):
                accel(code, &kp[0], nkp, n, x, p, a0)
                rk4(code, &kp[0], nkp, n, x, p, d, xn, pn)
                accel(code, &kp[0], nkp, n, xn, pn, a1)
                for q in range(ngl):
                    t = th[q]
                    c00 = 2 * t * t * t - 3 * t * t + 1
                    c10 = t * t * t - 2 * t * t + t
                    c01 = -2 * t * t * t + 3 * t * t
                    c11 = t * t * t - t * t
                    pos = off[b] + j * ngl + q
                    for i in range(n):
                        Xv[pos, i] = c00 * x[i] + c10 * d * p[i] + c01 * xn[i] + c11 * d * pn[i]
                        Pv[pos, i] = c00 * p[i] + c10 * d * a0[i] + c01 * pn[i] + c11 * d * a1[i]
                    Wv[pos] = dt1 * tw[q]
                for i in range(n):
                    x[i] = xn[i]
                    p[i] = pn[i]
    return counts, Xn, Pn, Wn
