"""
Collision kernels, tensor quadrature over the momentum-conservation manifold
and the gain/loss collision operators.

Points of the manifold {p + q = p' + q'} at fixed (x, p) are parametrised by
the free chart momenta (q, p') with q' = p + q - p', or alternatively by
(p', q') with q = p' + q' - p.  Both charts have unit Jacobian and the volume
form is Lebesgue measure in the chart coordinates.
"""
from dataclasses import dataclass
import math

import numpy as np

from . import kernels
from .errors import KernelParamError
from .geodesics import exit_times

CHUNK = 4_000_000


def smooth_step(t):
    """C-infinity step: 0 for t <= 0, 1 for t >= 1."""
    t = np.asarray(t, dtype=float)
    a = np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)
    b = np.where(t < 1, np.exp(-1.0 / np.where(t < 1, 1.0 - t, 1.0)), 0.0)
    return a / (a + b)


def annulus_bump(r, r_lo, r_hi):
    """Smooth bump in the radius, supported on (r_lo, r_hi), peak value 1."""
    c = 0.5 * (r_lo + r_hi)
    w = 0.5 * (r_hi - r_lo)
    t = (np.asarray(r, dtype=float) - c) / w
    out = np.zeros_like(t)
    m = np.abs(t) < 1
    out[m] = np.exp(1.0 - 1.0 / (1.0 - t[m] ** 2))
    return out


@dataclass(eq=False)
class CollisionKernel:
    """A(x, p, q, p', q') with its support data.

    ``fn`` is vectorised over rows of (X, P, Q, Pp, Qp).  ``mom_lo``/``mom_hi``
    bound the support in each of q, p', q'.
    """

    n: int
    fn: object
    K_lo: np.ndarray
    K_hi: np.ndarray
    r0: float
    r1: float
    mom_lo: np.ndarray
    mom_hi: np.ndarray
    C: float
    W_lo: np.ndarray = None
    W_hi: np.ndarray = None
    gamma_radii: tuple = None
    is_zero: bool = False
    factors: tuple = None  # (chi(X), beta(r), gamma(r), gamma radius) for product kernels

    def __post_init__(self):
        for name in ("K_lo", "K_hi", "mom_lo", "mom_hi"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        if not self.r0 < self.r1:
            raise KernelParamError("need r0 < r1")

    def __call__(self, X, P, Q, Pp, Qp):
        X = np.atleast_2d(X)
        B = max(len(np.atleast_2d(a)) for a in (X, P, Q, Pp, Qp))
        if self.is_zero:
            return np.zeros(B)
        return np.asarray(self.fn(*(np.broadcast_to(np.atleast_2d(a), (B, self.n))
                                    for a in (X, P, Q, Pp, Qp))), dtype=float)

    @property
    def K(self):
        return self.K_lo, self.K_hi

    def in_K(self, X):
        X = np.atleast_2d(X)
        return np.all((X >= self.K_lo) & (X <= self.K_hi), axis=1)

    @property
    def gain_radius(self):
        """|p|_e bound for the gain term: p = p' + q' - q with all three in the box."""
        r = np.linalg.norm(np.maximum(np.abs(self.mom_lo), np.abs(self.mom_hi)))
        return 3.0 * r


def builtin_kernel(spec, W, r0=0.2, r1=0.5, margin=0.2, gamma_radii=(0.5, 3.0)):
    """Product kernel chi(x) beta(|p|) gamma(|q|) gamma(|p'|) gamma(|q'|).

    chi is 1 on the box W and vanishes outside W enlarged by ``margin``; beta
    steps from 0 below r0 to 1 above r1; gamma is a smooth annulus bump.
    """
    if not r0 < r1:
        raise KernelParamError("need r0 < r1")
    if r0 <= 0:
        raise KernelParamError("r0 must be positive")
    g_lo, g_hi = gamma_radii
    if not 0 <= g_lo < g_hi:
        raise KernelParamError("gamma radii must satisfy 0 <= lo < hi")
    n = spec.n
    W_lo = np.asarray(W[0], dtype=float)
    W_hi = np.asarray(W[1], dtype=float)
    if np.any(W_lo - margin < spec.lo) or np.any(W_hi + margin > spec.hi):
        raise KernelParamError("kernel support must lie inside the chart")
    K_lo, K_hi = W_lo - margin, W_hi + margin

    def chi(X):
        return np.prod(smooth_step((X - K_lo) / margin) * smooth_step((K_hi - X) / margin), axis=1)

    def gam(V):
        return annulus_bump(np.linalg.norm(V, axis=1), g_lo, g_hi)

    def beta(r):
        return smooth_step((r - r0) / (r1 - r0))

    def gamma(r):
        return annulus_bump(r, g_lo, g_hi)

    def fn(X, P, Q, Pp, Qp):
        out = chi(X) * beta(np.linalg.norm(P, axis=1))
        m = out != 0
        if np.any(m):
            out[m] *= gam(Q[m]) * gam(Pp[m]) * gam(Qp[m])
        return out

    C = radial_l1(gamma, n, g_lo, g_hi) ** 2
    return CollisionKernel(n, fn, K_lo, K_hi, r0, r1, np.full(n, -g_hi), np.full(n, g_hi), C,
                           W_lo, W_hi, (g_lo, g_hi), factors=(chi, beta, gamma, g_hi))


def zero_kernel(n):
    z = np.zeros(n)
    return CollisionKernel(n, None, z, z, 0.1, 0.2, -np.ones(n), np.ones(n), 0.0, is_zero=True)


def radial_l1(g, n, r_lo, r_hi, m=400):
    """Integral over R^n of g(|v|) for g supported in [r_lo, r_hi]."""
    area = 2 * math.pi ** (n / 2) / math.gamma(n / 2)
    x, w = np.polynomial.legendre.leggauss(m)
    r = r_lo + 0.5 * (x + 1) * (r_hi - r_lo)
    return float(area * 0.5 * (r_hi - r_lo) * np.sum(w * g(r) * r ** (n - 1)))


# ---------------------------------------------------------------------------
# quadrature over the conservation manifold

@dataclass(eq=False)
class SigmaQuadRule:
    """Gauss-Legendre tensor rule over the two free chart momenta.

    chart "q_pp": free (q, p'), q' = p + q - p'.
    chart "pp_qp": free (p', q'), q = p' + q' - p.
    """

    n: int
    N_a: int
    N_b: int
    a_lo: np.ndarray
    a_hi: np.ndarray
    b_lo: np.ndarray
    b_hi: np.ndarray
    chart: str = "q_pp"
    causal_filter: bool = False

    def __post_init__(self):
        if self.N_a < 2 or self.N_b < 2:
            raise ValueError("need at least 2 nodes per dimension")
        if self.chart not in ("q_pp", "pp_qp"):
            raise ValueError("unknown chart")
        for name in ("a_lo", "a_hi", "b_lo", "b_hi"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        self._a = _tensor_rule(self.N_a, self.a_lo, self.a_hi)
        self._b = _tensor_rule(self.N_b, self.b_lo, self.b_hi)

    @property
    def factors(self):
        """(nodes_a, weights_a, nodes_b, weights_b) of the two separable factors."""
        return self._a[0], self._a[1], self._b[0], self._b[1]

    @property
    def size(self):
        return len(self._a[1]) * len(self._b[1])

    def nodes(self):
        """Full product nodes (A, B, weights) with A the first free momentum."""
        na, wa, nb, wb = self.factors
        A = np.repeat(na, len(wb), axis=0)
        Bn = np.tile(nb, (len(wa), 1))
        return A, Bn, np.outer(wa, wb).ravel()

    def momenta(self, p):
        """(q, p', q') at every node for one p; exact conservation by construction."""
        A, Bn, w = self.nodes()
        p = np.asarray(p, dtype=float)
        if self.chart == "q_pp":
            q, pp = A, Bn
            qp = p + q - pp
        else:
            pp, qp = A, Bn
            q = pp + qp - p
        return q, pp, qp, w

    def refined(self):
        return SigmaQuadRule(self.n, 2 * self.N_a, 2 * self.N_b, self.a_lo, self.a_hi,
                             self.b_lo, self.b_hi, self.chart, self.causal_filter)


def _tensor_rule(N, lo, hi):
    x, w = np.polynomial.legendre.leggauss(N)
    axes = [lo[i] + 0.5 * (x + 1) * (hi[i] - lo[i]) for i in range(len(lo))]
    wts = [0.5 * (hi[i] - lo[i]) * w for i in range(len(lo))]
    mesh = np.meshgrid(*axes, indexing="ij")
    nodes = np.stack([m.ravel() for m in mesh], axis=1)
    W = np.prod(np.meshgrid(*wts, indexing="ij"), axis=0).ravel()
    return nodes, W


def default_rule(A, N=6, chart="q_pp", causal_filter=False):
    """Rule whose boxes are the kernel's momentum support box."""
    return SigmaQuadRule(A.n, N, N, A.mom_lo, A.mom_hi, A.mom_lo, A.mom_hi, chart, causal_filter)


def sigma_quadrature(rule, x, p, integrand):
    """Integral of integrand(q, p', q') over the conservation manifold at (x, p)."""
    q, pp, qp, w = rule.momenta(p)
    vals = np.asarray(integrand(q, pp, qp), dtype=float)
    return float(np.sum(w * vals))


def _future_causal(spec, X, V):
    return (spec.inner(X, V, V) <= 0) & (V[:, 0] > 0)


def l1_norm(A, x, p, rule, spec=None):
    """Quadrature value of the integral of |A(x, p, .)| over the manifold."""
    q, pp, qp, w = rule.momenta(p)
    X = np.broadcast_to(x, q.shape)
    vals = np.abs(A(X, np.broadcast_to(p, q.shape), q, pp, qp))
    if rule.causal_filter and spec is not None:
        vals = vals * (_future_causal(spec, X, q) & _future_causal(spec, X, pp) & _future_causal(spec, X, qp))
    return float(np.sum(w * vals))


# ---------------------------------------------------------------------------
# gain and loss

def collision_terms(spec, A, u1, u2, X, P, rule=None):
    """Batched (Q_gain, Q_loss) of the pair (u1, u2) at phase points (X, P)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    P = np.atleast_2d(np.asarray(P, dtype=float))
    B, n = X.shape
    gain = np.zeros(B)
    loss = np.zeros(B)
    if A.is_zero:
        return gain, loss
    rule = rule or default_rule(A)
    active = np.nonzero(A.in_K(X))[0]
    if active.size == 0:
        return gain, loss
    u1p = u1(X[active], P[active])
    A_nodes, B_nodes, w = rule.nodes()
    M = len(w)
    step = max(1, CHUNK // M)
    for c0 in range(0, active.size, step):
        sel = active[c0:c0 + step]
        b = len(sel)
        Xr = np.repeat(X[sel], M, axis=0)
        Pr = np.repeat(P[sel], M, axis=0)
        Aa = np.tile(A_nodes, (b, 1))
        Bb = np.tile(B_nodes, (b, 1))
        if rule.chart == "q_pp":
            q, pp = Aa, Bb
            qp = Pr + q - pp
        else:
            pp, qp = Aa, Bb
            q = pp + qp - Pr
        a = A(Xr, Pr, q, pp, qp)
        if rule.causal_filter:
            a = a * (_future_causal(spec, Xr, q) & _future_causal(spec, Xr, pp) & _future_causal(spec, Xr, qp))
        a = a * np.tile(w, b)
        nz = a != 0
        g = np.zeros(b * M)
        if np.any(nz):
            g[nz] = u1(Xr[nz], pp[nz]) * u2(Xr[nz], qp[nz]) * a[nz]
        gain[sel] = -g.reshape(b, M).sum(axis=1)
        pre = u1p[c0:c0 + step]
        lz = pre != 0
        if np.any(lz):
            rows = np.repeat(lz, M)
            l = np.zeros(b * M)
            m2 = rows & nz
            l[m2] = u2(Xr[m2], q[m2]) * a[m2]
            loss[sel] = np.where(lz, pre * l.reshape(b, M).sum(axis=1), 0.0)
    return gain, loss


def q_gain(spec, A, u1, u2, x, p, rule=None):
    return float(collision_terms(spec, A, u1, u2, np.asarray(x)[None], np.asarray(p)[None], rule)[0][0])


def q_loss(spec, A, u1, u2, x, p, rule=None):
    return float(collision_terms(spec, A, u1, u2, np.asarray(x)[None], np.asarray(p)[None], rule)[1][0])


def q_full(spec, A, u1, u2, x, p, rule=None):
    g, l = collision_terms(spec, A, u1, u2, np.asarray(x)[None], np.asarray(p)[None], rule)
    return float(g[0] + l[0])


def q_full_batch(spec, A, u1, u2, X, P, rule=None):
    g, l = collision_terms(spec, A, u1, u2, X, P, rule)
    return g + l


def separable_gain(spec, A, u1, u2, X, P, rule):
    """Gain term in the (p', q') chart evaluating u1 and u2 on the factor nodes only.

    Cost per point is N_a^n + N_b^n density evaluations plus one kernel
    evaluation per product node.
    """
    if rule.chart != "pp_qp":
        raise ValueError("separable evaluation needs the (p', q') chart")
    X = np.atleast_2d(X)
    P = np.atleast_2d(P)
    na, wa, nb, wb = rule.factors
    out = np.zeros(len(X))
    for i in range(len(X)):
        x = X[i]
        v1 = u1(np.broadcast_to(x, na.shape), na) * wa
        v2 = u2(np.broadcast_to(x, nb.shape), nb) * wb
        ia = np.nonzero(v1)[0]
        ib = np.nonzero(v2)[0]
        if ia.size == 0 or ib.size == 0:
            continue
        pp = np.repeat(na[ia], ib.size, axis=0)
        qp = np.tile(nb[ib], (ia.size, 1))
        q = pp + qp - P[i]
        a = A(np.broadcast_to(x, q.shape), np.broadcast_to(P[i], q.shape), q, pp, qp)
        out[i] = -np.sum(np.outer(v1[ia], v2[ib]).ravel() * a)
    return out


# ---------------------------------------------------------------------------
# along the flow and kernel diagnostics

def _flow_integral(spec, A, X, P, fn, h=2e-2, hq=None, ngl=4):
    """Backward-flow integral of fn over the part of each path inside K_pi."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    P = np.atleast_2d(np.asarray(P, dtype=float))
    out = np.zeros(len(X))
    ell_in, ell_out, status = exit_times(spec, X, P, A.K, h)
    hit = np.nonzero((status > 0) & (ell_out > ell_in))[0]
    if hit.size == 0:
        return out
    pn = np.linalg.norm(P[hit], axis=1)
    counts, Xn, Pn, Wn = kernels.flow_nodes(spec, X[hit], P[hit], ell_in[hit], ell_out[hit],
                                            h / pn, (hq or h) / pn, ngl)
    vals = fn(Xn, Pn) * Wn
    out[hit] = np.bincount(np.repeat(np.arange(hit.size), counts), weights=vals, minlength=hit.size)
    return out


def q_along_flow(spec, A, u, v, x, p, rule=None, h=5e-2, ngl=4):
    """Integral of Q[u, v] along the backward geodesic through (x, p)."""
    if A.is_zero:
        return 0.0
    return float(_flow_integral(spec, A, x, p, lambda Xn, Pn: q_full_batch(spec, A, u, v, Xn, Pn, rule),
                                h, ngl=ngl)[0])


def l1_profile(spec, A, X, P, rule):
    return np.array([l1_norm(A, X[i], P[i], rule, spec) for i in range(len(X))])


def flow_l1(spec, A, X, P, rule, h=5e-2, ngl=4):
    """Integral of 2 * ||A(., .)||_L1 along the backward flow: the per-point collision constant."""
    return _flow_integral(spec, A, X, P, lambda Xn, Pn: 2.0 * l1_profile(spec, A, Xn, Pn, rule), h, ngl=ngl)


def _null_scale(spec, X, D):
    """Positive s with (1, s d) null at X for unit spatial directions d."""
    G = spec.metric_batch(X)
    a = np.einsum("bij,bi,bj->b", G[:, 1:, 1:], D, D)
    b = 2 * np.einsum("bi,bi->b", G[:, 0, 1:], D)
    c = G[:, 0, 0]
    return (-b + np.sqrt(b ** 2 - 4 * a * c)) / (2 * a)


def random_future_causal(spec, rng, X, scale=(0.3, 5.0), null_fraction=0.3):
    """Random future-directed causal vectors at X with |p|_e log-uniform in the scale range."""
    B, n = X.shape
    d = rng.normal(size=(B, n - 1))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    speed = np.where(rng.random(B) < null_fraction, 1.0, rng.uniform(0.0, 0.95, B))
    P = np.concatenate([np.ones((B, 1)), (speed * _null_scale(spec, X, d))[:, None] * d], axis=1)
    P /= np.linalg.norm(P, axis=1, keepdims=True)
    return P * np.exp(rng.uniform(np.log(scale[0]), np.log(scale[1]), B))[:, None]


def measure_collision_constant(spec, A, rule, n_samples=200, seed=0, margin=1.25, h=5e-2):
    """Sampled sup of the per-point collision constant, times a safety margin."""
    if A.is_zero:
        return 0.0
    rng = np.random.default_rng(seed)
    X = A.K_lo + (A.K_hi - A.K_lo) * rng.random((n_samples, A.n))
    P = random_future_causal(spec, rng, X, scale=(A.r0, 8.0))
    vals = flow_l1(spec, A, X, P, rule, h)
    return margin * float(vals.max(initial=0.0))


def lightlike_samples(spec, rng, X, radius_lo, radius_hi):
    """Future null vectors at X with Euclidean norm uniform in [radius_lo, radius_hi]."""
    B, n = X.shape
    d = rng.normal(size=(B, n - 1))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    P = np.concatenate([np.ones((B, 1)), _null_scale(spec, X, d)[:, None] * d], axis=1)
    P /= np.linalg.norm(P, axis=1, keepdims=True)
    return P * rng.uniform(radius_lo, radius_hi, B)[:, None]


def _annulus_samples(rng, B, n, r_lo, r_hi):
    d = rng.normal(size=(B, n))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return d * rng.uniform(r_lo + 0.05 * (r_hi - r_lo), r_hi - 0.05 * (r_hi - r_lo), B)[:, None]


def check_admissible(spec, A, rule=None, n_samples=200, seed=0, lambdas=None):
    """Sampling report on the admissibility conditions of a kernel."""
    rng = np.random.default_rng(seed)
    rule = rule or default_rule(A)
    n = A.n
    report = {}
    # cond 2: vanishing outside the spatial support box
    Xo = A.K_lo + (A.K_hi - A.K_lo) * (rng.random((n_samples, n)) * 3.0 - 1.0)
    outside = ~A.in_K(Xo)
    Xo = Xo[outside]
    m = Xo.shape[0]
    mom = [_annulus_samples(rng, m, n, *(A.gamma_radii or (0.0, 1.0))) for _ in range(4)]
    report["cond2"] = "pass" if np.all(A(Xo, *mom) == 0) else "fail"
    # cond 3: positivity for lightlike p beyond r1 over W
    W_lo = A.W_lo if A.W_lo is not None else A.K_lo
    W_hi = A.W_hi if A.W_hi is not None else A.K_hi
    Xw = W_lo + (W_hi - W_lo) * rng.random((n_samples, n))
    Pl = lightlike_samples(spec, rng, Xw, A.r1 * 1.01, 10.0 * A.r1)
    g = A.gamma_radii or (0.0, float(np.max(A.mom_hi)))
    mom = [_annulus_samples(rng, n_samples, n, *g) for _ in range(3)]
    vals = A(Xw, Pl, *mom)
    report["cond3_min_value"] = float(vals.min())
    report["cond3"] = "pass" if vals.min() > 0 else "fail"
    # cond 4: L1 bound including large |p|
    Xk = A.K_lo + (A.K_hi - A.K_lo) * rng.random((n_samples, n))
    Pk = random_future_causal(spec, rng, Xk, scale=(0.5 * A.r0, 50.0))
    l1 = l1_profile(spec, A, Xk, Pk, rule)
    report["cond4_max_l1"] = float(l1.max())
    report["cond4_declared_C"] = float(A.C)
    report["cond4"] = "pass" if l1.max() <= A.C else "fail"
    # cond 5: F(lambda) = ||A(x, lambda p, .)||_L1 vanishes for lambda |p| < r0
    x0 = 0.5 * (W_lo + W_hi)
    p0 = lightlike_samples(spec, rng, x0[None], 1.0, 1.0)[0]
    if lambdas is None:
        lambdas = np.concatenate([np.linspace(0.0, A.r0 * 0.999, 6), np.linspace(A.r0, 2 * A.r1, 8)])
    prof = [(float(lam), l1_norm(A, x0, lam * p0, rule, spec)) for lam in lambdas]
    report["cond5_profile"] = prof
    small = [F for lam, F in prof if lam * np.linalg.norm(p0) < A.r0]
    report["cond5"] = "pass" if all(F == 0.0 for F in small) else "fail"
    report["passed"] = all(report[k] == "pass" for k in ("cond2", "cond3", "cond4", "cond5"))
    return report
