"""
Pure numpy implementation of the hot geodesic kernels.

Every routine is vectorised over a batch of phase points and mirrors the
compiled implementation in ``_ckernels.pyx`` step for step, so the two give
the same answers up to floating point reassociation.
"""
import numpy as np

GL_CACHE = {}


def gauss_legendre(m):
    """Nodes and weights of the m-point rule on [0, 1]."""
    if m not in GL_CACHE:
        x, w = np.polynomial.legendre.leggauss(m)
        GL_CACHE[m] = (0.5 * (x + 1.0), 0.5 * w)
    return GL_CACHE[m]


def _rk4(acc, x, p, dt):
    dt = dt[:, None]
    k1x, k1p = p, acc(x, p)
    k2x, k2p = p + 0.5 * dt * k1p, acc(x + 0.5 * dt * k1x, p + 0.5 * dt * k1p)
    k3x, k3p = p + 0.5 * dt * k2p, acc(x + 0.5 * dt * k2x, p + 0.5 * dt * k2p)
    k4x, k4p = p + dt * k3p, acc(x + dt * k3x, p + dt * k3p)
    xn = x + dt / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x)
    pn = p + dt / 6.0 * (k1p + 2 * k2p + 2 * k3p + k4p)
    return xn, pn


def _inside(x, lo, hi):
    return np.all((x >= lo) & (x <= hi), axis=1)


def rk4_path(spec, x0, p0, h, nsteps):
    """Integrate one geodesic for nsteps of signed size h.

    Returns (X, P, exited) with X, P of shape (m + 1, n); integration stops at
    the first sample outside the chart, which is kept as the last row.
    """
    acc = spec.acceleration
    lo, hi = spec.lo, spec.hi
    n = len(x0)
    X = np.empty((nsteps + 1, n))
    P = np.empty((nsteps + 1, n))
    X[0], P[0] = x0, p0
    x, p = X[:1].copy(), P[:1].copy()
    dt = np.array([h])
    for k in range(nsteps):
        x, p = _rk4(acc, x, p, dt)
        X[k + 1], P[k + 1] = x[0], p[0]
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(p))):
            return X[:k + 2], P[:k + 2], -1
        if not _inside(x, lo, hi)[0]:
            return X[:k + 2], P[:k + 2], 1
    return X, P, 0


def box_crossing(spec, X, P, blo, bhi, h, tol, max_steps):
    """First and last backward parameters at which each path is inside a box.

    h is a per-point step.  Status: 0 miss, 1 resolved, 2 chart exit (partial),
    3 step budget exhausted, -1 non-finite state.
    """
    acc = spec.acceleration
    clo, chi = spec.lo, spec.hi
    X = np.array(X, dtype=float)
    P = np.array(P, dtype=float)
    B = X.shape[0]
    ell_in = np.zeros(B)
    ell_out = np.zeros(B)
    status = np.zeros(B, dtype=np.int64)
    inside0 = _inside(X, blo, bhi)
    found = inside0.copy()
    status[inside0] = 1
    entry_x = X.copy()
    entry_p = P.copy()
    entry_s = np.zeros(B)
    need_entry = np.zeros(B, dtype=bool)
    last_x = X.copy()
    last_p = P.copy()
    last_s = np.zeros(B)
    open_end = inside0.copy()  # last inside sample has not been followed by an outside one yet
    active = (X[:, 0] >= blo[0]) & _inside(X, clo, chi)
    x, p = X.copy(), P.copy()
    k = 0
    while active.any() and k < max_steps:
        idx = np.nonzero(active)[0]
        xn, pn = _rk4(acc, x[idx], p[idx], -h[idx])
        k += 1
        bad = ~(np.all(np.isfinite(xn), axis=1) & np.all(np.isfinite(pn), axis=1))
        out_chart = ~_inside(xn, clo, chi) | bad
        ins = _inside(xn, blo, bhi) & ~out_chart
        newe = ins & ~found[idx]
        j = idx[newe]
        entry_x[j], entry_p[j] = x[j], p[j]
        entry_s[j] = (k - 1) * h[j]
        need_entry[j] = True
        found[j] = True
        status[j] = 1
        j = idx[ins]
        last_x[j], last_p[j] = xn[ins], pn[ins]
        last_s[j] = k * h[j]
        open_end[j] = True
        open_end[idx[~ins]] = False
        x[idx], p[idx] = xn, pn
        stop = (xn[:, 0] < blo[0]) | out_chart
        ec = idx[out_chart]
        status[ec] = np.where(bad[out_chart], -1, 2)
        active[idx[stop]] = False
    status[active] = 3
    # entry bisection: smallest step from the bracket start that lands inside
    j = np.nonzero(need_entry)[0]
    if j.size:
        lo_ = np.zeros(j.size)
        hi_ = h[j].copy()
        while np.any(hi_ - lo_ > tol):
            mid = 0.5 * (lo_ + hi_)
            xm, _ = _rk4(acc, entry_x[j], entry_p[j], -mid)
            ins = _inside(xm, blo, bhi)
            hi_ = np.where(ins, mid, hi_)
            lo_ = np.where(ins, lo_, mid)
        ell_in[j] = entry_s[j] + hi_
    # exit bisection from the last inside sample
    j = np.nonzero(found & ~open_end)[0]
    if j.size:
        lo_ = np.zeros(j.size)
        hi_ = h[j].copy()
        while np.any(hi_ - lo_ > tol):
            mid = 0.5 * (lo_ + hi_)
            xm, _ = _rk4(acc, last_x[j], last_p[j], -mid)
            ins = _inside(xm, blo, bhi)
            lo_ = np.where(ins, mid, lo_)
            hi_ = np.where(ins, hi_, mid)
        ell_out[j] = last_s[j] + lo_
    j = np.nonzero(found & open_end)[0]
    ell_out[j] = last_s[j]
    return ell_in, ell_out, status


def flow_nodes(spec, X, P, s_a, s_b, h, hq, ngl):
    """Quadrature nodes of the backward flow over [-s_b, -s_a].

    Each path is first advanced to -s_a in steps no longer than h, then
    ceil((s_b - s_a)/hq) equal RK4 steps are taken and ngl Gauss-Legendre
    nodes per step are placed using cubic Hermite interpolation of the
    step end states.  Returns (counts, Xn, Pn, Wn) with nodes grouped by point.
    """
    acc = spec.acceleration
    X = np.array(X, dtype=float)
    P = np.array(P, dtype=float)
    B, n = X.shape
    th, tw = gauss_legendre(ngl)
    h00 = 2 * th ** 3 - 3 * th ** 2 + 1
    h10 = th ** 3 - 2 * th ** 2 + th
    h01 = -2 * th ** 3 + 3 * th ** 2
    h11 = th ** 3 - th ** 2
    m0 = np.where(s_a > 0, np.maximum(np.ceil(s_a / h - 1e-12), 1), 0).astype(np.int64)
    dt0 = np.where(m0 > 0, s_a / np.maximum(m0, 1), 0.0)
    span = s_b - s_a
    m1 = np.where(span > 0, np.ceil(span / hq - 1e-12), 0).astype(np.int64)
    m1 = np.where(span > 0, np.maximum(m1, 1), 0)
    dt1 = np.where(m1 > 0, span / np.maximum(m1, 1), 0.0)
    counts = m1 * ngl
    offsets = np.concatenate([[0], np.cumsum(counts)])
    total = int(offsets[-1])
    Xn = np.empty((total, n))
    Pn = np.empty((total, n))
    Wn = np.empty(total)
    x, p = X.copy(), P.copy()
    for j in range(int(m0.max(initial=0))):
        idx = np.nonzero(m0 > j)[0]
        x[idx], p[idx] = _rk4(acc, x[idx], p[idx], -dt0[idx])
    for j in range(int(m1.max(initial=0))):
        idx = np.nonzero(m1 > j)[0]
        x0, p0 = x[idx], p[idx]
        a0 = acc(x0, p0)
        d = -dt1[idx]
        x1, p1 = _rk4(acc, x0, p0, d)
        a1 = acc(x1, p1)
        d = d[:, None, None]
        xs = (h00[None, :, None] * x0[:, None] + h10[None, :, None] * d * p0[:, None]
              + h01[None, :, None] * x1[:, None] + h11[None, :, None] * d * p1[:, None])
        ps = (h00[None, :, None] * p0[:, None] + h10[None, :, None] * d * a0[:, None]
              + h01[None, :, None] * p1[:, None] + h11[None, :, None] * d * a1[:, None])
        pos = offsets[idx][:, None] + j * ngl + np.arange(ngl)[None, :]
        Xn[pos.ravel()] = xs.reshape(-1, n)
        Pn[pos.ravel()] = ps.reshape(-1, n)
        Wn[pos.ravel()] = (dt1[idx][:, None] * tw[None, :]).ravel()
        x[idx], p[idx] = x1, p1
    return counts, Xn, Pn, Wn
