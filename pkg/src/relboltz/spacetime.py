"""
Explicit Lorentzian metrics of product form on R x R^{n-1}.

Every metric is written as g = -g00(x) dx0^2 + g_N(x) with x0 the global time
and d/dx0 declared future pointing.  Four families are supported:

    Minkowski            g = eta
    ConformalMinkowski   g = exp(phi) eta
    DiagonalWarped       g = -dt^2 + a(t)^2 (euclidean)
    CustomAnalytic       user supplied g(x), optionally with analytic Christoffels

The first three have closed-form Christoffel symbols and a numeric code that
the compiled integrator understands.  Custom metrics fall back to central
finite differences of g.
"""
from dataclasses import dataclass, field
import importlib

import numpy as np

from .errors import ChartError, EvaluationError, SingularMetricError, ZeroVectorError

MINKOWSKI = "Minkowski"
CONFORMAL = "ConformalMinkowski"
WARPED = "DiagonalWarped"
CUSTOM = "CustomAnalytic"
KINDS = (MINKOWSKI, CONFORMAL, WARPED, CUSTOM)

TOL_NULL = 1e-9
FD_REL_STEP = 1e-5

# numeric codes shared with the compiled kernels
CODE_FLAT, CODE_CONFORMAL_AFFINE, CODE_WARPED_POLY, CODE_GENERIC = 0, 1, 2, 3


def _resolve(obj):
    """Accept a callable or an importable 'module:attr' string."""
    if obj is None or callable(obj):
        return obj
    mod, _, attr = str(obj).partition(":")
    return getattr(importlib.import_module(mod), attr)


@dataclass(eq=False)
class MetricSpec:
    """A product-form Lorentzian metric on a coordinate box.

    ``params`` depends on ``kind``:

    * ConformalMinkowski: ``phi_const`` and ``phi_grad`` for an affine field, or
      ``phi`` (and optionally ``dphi``) callables for a general one.
    * DiagonalWarped: ``a_coeffs`` polynomial coefficients of a(t) in increasing
      degree, or ``a`` and ``da`` callables.
    * CustomAnalytic: ``g`` callable x -> (n, n) and optional ``christoffel``
      callable x -> (n, n, n).  Both may be given as 'module:attr' strings.
    """

    n: int
    kind: str = MINKOWSKI
    params: dict = field(default_factory=dict)
    chart_lo: tuple = None
    chart_hi: tuple = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown metric kind {self.kind!r}")
        if self.n < 2:
            raise ValueError("dimension must be at least 2")
        if self.chart_lo is None:
            self.chart_lo = (-10.0,) * self.n
        if self.chart_hi is None:
            self.chart_hi = (10.0,) * self.n
        self.chart_lo = tuple(float(v) for v in self.chart_lo)
        self.chart_hi = tuple(float(v) for v in self.chart_hi)
        if len(self.chart_lo) != self.n or len(self.chart_hi) != self.n:
            raise ValueError("chart box must have n entries per side")
        self._setup()

    # construction helpers -------------------------------------------------
    def _setup(self):
        n = self.n
        p = self.params
        self.code = CODE_GENERIC
        self.kparams = np.zeros(1)
        self._phi = self._dphi = None
        self._a = self._da = None
        self._g = self._gamma = None
        if self.kind == MINKOWSKI:
            self.code = CODE_FLAT
        elif self.kind == CONFORMAL:
            if "phi" in p:
                self._phi = _resolve(p["phi"])
                self._dphi = _resolve(p.get("dphi"))
            else:
                c = float(p.get("phi_const", 0.0))
                grad = np.asarray(p.get("phi_grad", np.zeros(n)), dtype=float)
                if grad.shape != (n,):
                    raise ValueError("phi_grad must have n components")
                self.code = CODE_CONFORMAL_AFFINE
                self.kparams = np.concatenate([[c], grad])
        elif self.kind == WARPED:
            if "a" in p:
                self._a = _resolve(p["a"])
                self._da = _resolve(p.get("da"))
            else:
                coeffs = np.asarray(p.get("a_coeffs", [1.0]), dtype=float)
                self.code = CODE_WARPED_POLY
                self.kparams = coeffs
        else:
            self._g = _resolve(p["g"])
            self._gamma = _resolve(p.get("christoffel"))

    @property
    def lo(self):
        return np.asarray(self.chart_lo)

    @property
    def hi(self):
        return np.asarray(self.chart_hi)

    @property
    def is_flat(self):
        """True when all Christoffel symbols vanish identically."""
        if self.code == CODE_FLAT:
            return True
        return self.code == CODE_CONFORMAL_AFFINE and not np.any(self.kparams[1:])

    def describe(self):
        """JSON-friendly description (callables are reported by name)."""
        params = {}
        for k, v in self.params.items():
            if callable(v):
                v = f"{getattr(v, '__module__', '?')}:{getattr(v, '__qualname__', '?')}"
            elif isinstance(v, np.ndarray):
                v = v.tolist()
            params[k] = v
        return {"kind": self.kind, "n": self.n, "params": params,
                "chart_box": [list(self.chart_lo), list(self.chart_hi)]}

    def in_chart(self, X):
        X = np.atleast_2d(X)
        return np.all((X >= self.lo) & (X <= self.hi), axis=-1)

    # scalar fields ------------------------------------------------------------
    def _a_and_da(self, t):
        if self.code == CODE_WARPED_POLY:
            c = self.kparams
            a = np.polynomial.polynomial.polyval(t, c)
            da = np.polynomial.polynomial.polyval(t, np.polynomial.polynomial.polyder(c))
            return a, da
        a = np.asarray(self._a(t), dtype=float)
        if self._da is not None:
            da = np.asarray(self._da(t), dtype=float)
        else:
            step = FD_REL_STEP * np.maximum(1.0, np.abs(t))
            da = (np.asarray(self._a(t + step)) - np.asarray(self._a(t - step))) / (2 * step)
        return a, da

    def _phi_and_grad(self, X):
        if self.code == CODE_CONFORMAL_AFFINE:
            c, b = self.kparams[0], self.kparams[1:]
            return c + X @ b, np.broadcast_to(b, X.shape)
        phi = np.array([self._phi(x) for x in X], dtype=float)
        if self._dphi is not None:
            grad = np.array([self._dphi(x) for x in X], dtype=float)
        else:
            grad = np.empty_like(X)
            for k in range(self.n):
                step = FD_REL_STEP * np.maximum(1.0, np.abs(X[:, k]))
                e = np.zeros(self.n)
                e[k] = 1.0
                fp = np.array([self._phi(x + s * e) for x, s in zip(X, step)])
                fm = np.array([self._phi(x - s * e) for x, s in zip(X, step)])
                grad[:, k] = (fp - fm) / (2 * step)
        return phi, grad

    # batched geometry ---------------------------------------------------------
    def metric_batch(self, X):
        """g at each row of X, shape (B, n, n)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        B, n = X.shape
        eta = np.diag([-1.0] + [1.0] * (n - 1))
        if self.kind == MINKOWSKI:
            return np.broadcast_to(eta, (B, n, n)).copy()
        if self.kind == CONFORMAL:
            phi, _ = self._phi_and_grad(X)
            return np.exp(phi)[:, None, None] * eta
        if self.kind == WARPED:
            a, _ = self._a_and_da(X[:, 0])
            G = np.zeros((B, n, n))
            G[:, 0, 0] = -1.0
            idx = np.arange(1, n)
            G[:, idx, idx] = (a * a)[:, None]
            return G
        return np.array([np.asarray(self._g(x), dtype=float) for x in X])

    def christoffel_batch(self, X):
        """Gamma^a_{bc} at each row of X, shape (B, n, n, n)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        B, n = X.shape
        if self.kind == MINKOWSKI:
            return np.zeros((B, n, n, n))
        if self.kind == CONFORMAL:
            _, grad = self._phi_and_grad(X)
            eta = np.diag([-1.0] + [1.0] * (n - 1))
            base = np.zeros((n, n, n))
            return np.array([_conformal_correction(base, eta, d) for d in grad])
        if self.kind == WARPED:
            a, da = self._a_and_da(X[:, 0])
            G = np.zeros((B, n, n, n))
            idx = np.arange(1, n)
            G[:, 0, idx, idx] = (a * da)[:, None]
            G[:, idx, 0, idx] = (da / a)[:, None]
            G[:, idx, idx, 0] = (da / a)[:, None]
            return G
        if self._gamma is not None:
            return np.array([np.asarray(self._gamma(x), dtype=float) for x in X])
        return np.array([fd_christoffel(self._g, x) for x in X])

    def acceleration(self, X, P):
        """-Gamma^a_{bc} p^b p^c for batches of states, shape (B, n)."""
        X = np.atleast_2d(X)
        P = np.atleast_2d(P)
        if self.code == CODE_FLAT:
            return np.zeros_like(P)
        if self.code == CODE_CONFORMAL_AFFINE:
            b = self.kparams[1:]
            bp = P @ b
            pp = -P[:, 0] ** 2 + np.sum(P[:, 1:] ** 2, axis=1)
            sgn = np.ones(self.n)
            sgn[0] = -1.0
            return -P * bp[:, None] + 0.5 * pp[:, None] * (sgn * b)
        if self.code == CODE_WARPED_POLY:
            a, da = self._a_and_da(X[:, 0])
            out = np.empty_like(P)
            out[:, 0] = -a * da * np.sum(P[:, 1:] ** 2, axis=1)
            out[:, 1:] = -2.0 * (da / a)[:, None] * P[:, :1] * P[:, 1:]
            return out
        G = self.christoffel_batch(X)
        return -np.einsum("bkij,bi,bj->bk", G, P, P)

    def inner(self, X, U, V):
        """g(U, V) row by row."""
        G = self.metric_batch(X)
        return np.einsum("bij,bi,bj->b", G, np.atleast_2d(U), np.atleast_2d(V))


# ---------------------------------------------------------------------------
# constructors

def minkowski(n, chart=None):
    lo, hi = chart if chart is not None else (None, None)
    return MetricSpec(n, MINKOWSKI, {}, lo, hi)


def conformal_minkowski(n, phi_const=0.0, phi_grad=None, phi=None, dphi=None, chart=None):
    lo, hi = chart if chart is not None else (None, None)
    if phi is not None:
        params = {"phi": phi}
        if dphi is not None:
            params["dphi"] = dphi
    else:
        grad = np.zeros(n) if phi_grad is None else np.asarray(phi_grad, dtype=float)
        params = {"phi_const": float(phi_const), "phi_grad": grad.tolist()}
    return MetricSpec(n, CONFORMAL, params, lo, hi)


def diagonal_warped(n, a_coeffs=(1.0,), chart=None):
    lo, hi = chart if chart is not None else (None, None)
    return MetricSpec(n, WARPED, {"a_coeffs": [float(c) for c in a_coeffs]}, lo, hi)


def custom_metric(n, g, christoffel=None, chart=None):
    lo, hi = chart if chart is not None else (None, None)
    params = {"g": g}
    if christoffel is not None:
        params["christoffel"] = christoffel
    return MetricSpec(n, CUSTOM, params, lo, hi)


def metric_from_dict(d):
    """Build a MetricSpec from its scenario-file description."""
    box = d.get("chart_box")
    lo, hi = (box[0], box[1]) if box is not None else (None, None)
    return MetricSpec(int(d["n"]), d["kind"], dict(d.get("params", {})), lo, hi)


# ---------------------------------------------------------------------------
# point-wise operations

def _check_point(spec, x):
    x = np.asarray(x, dtype=float)
    if x.shape != (spec.n,):
        raise ValueError(f"expected a point with {spec.n} coordinates")
    if not spec.in_chart(x)[0]:
        raise ChartError(f"point {x.tolist()} outside chart box")
    return x


def metric_at(spec, x):
    """The metric matrix g(x)."""
    x = _check_point(spec, x)
    g = spec.metric_batch(x[None])[0]
    if not np.all(np.isfinite(g)):
        raise EvaluationError(f"non-finite metric component at {x.tolist()}")
    if g[0, 0] >= 0:
        raise EvaluationError("g00 must be negative for a product-form metric")
    return g


def fd_christoffel(gfun, x, rel_step=FD_REL_STEP):
    """Christoffel symbols of a metric callable by central differences."""
    x = np.asarray(x, dtype=float)
    n = x.size
    g = np.asarray(gfun(x), dtype=float)
    ginv = _inverse(g)
    dg = np.empty((n, n, n))  # dg[k, i, j] = d_k g_ij
    for k in range(n):
        step = rel_step * max(1.0, abs(x[k]))
        e = np.zeros(n)
        e[k] = step
        dg[k] = (np.asarray(gfun(x + e)) - np.asarray(gfun(x - e))) / (2 * step)
    # Gamma^a_{ij} = 1/2 g^{al} (d_i g_jl + d_j g_il - d_l g_ij)
    lower = dg + dg.transpose(1, 0, 2) - dg.transpose(1, 2, 0)  # [i, j, l]
    return 0.5 * np.einsum("al,ijl->aij", ginv, lower)


def _inverse(g):
    if not np.all(np.isfinite(g)):
        raise EvaluationError("non-finite metric")
    det = np.linalg.det(g)
    scale = np.max(np.abs(g)) ** g.shape[0]
    if scale == 0 or abs(det) <= 1e-14 * scale:
        raise SingularMetricError("metric is not invertible")
    return np.linalg.inv(g)


def christoffel(spec, x):
    """Gamma^a_{bc}(x), symmetric in the lower indices."""
    x = _check_point(spec, x)
    g = spec.metric_batch(x[None])[0]
    _inverse(g)
    return spec.christoffel_batch(x[None])[0]


@dataclass(frozen=True)
class CausalClass:
    kind: str  # "Timelike" | "Lightlike" | "Spacelike"
    direction: str  # "Future" | "Past" | "None"
    mass: float

    @property
    def causal(self):
        return self.kind != "Spacelike"

    @property
    def future(self):
        return self.direction == "Future"


def causal_class(spec, x, p, tol_null=TOL_NULL):
    """Classify a tangent vector relative to the light cone at x."""
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    if not np.any(p):
        raise ZeroVectorError("the zero vector is not causal")
    g = metric_at(spec, x)
    gpp = float(p @ g @ p)
    scale = float(p @ p)
    if abs(gpp) <= tol_null * scale:
        kind = "Lightlike"
    elif gpp < 0:
        kind = "Timelike"
    else:
        return CausalClass("Spacelike", "None", 0.0)
    time_comp = float(g[0] @ p)  # g(d0, p)
    direction = "Future" if time_comp < 0 else "Past"
    mass = 0.0 if kind == "Lightlike" else float(np.sqrt(-gpp))
    return CausalClass(kind, direction, mass)


def _conformal_correction(gamma, g, dphi):
    n = g.shape[0]
    ginv = _inverse(g)
    delta = np.eye(n)
    up = ginv @ dphi  # g^{kl} d_l phi
    corr = 0.5 * (np.einsum("kj,i->kij", delta, dphi)
                  + np.einsum("ki,j->kij", delta, dphi)
                  - np.einsum("ij,k->kij", g, up))
    return gamma + corr


def conformal_christoffel(gamma, g, dphi, x=None):
    """Christoffel symbols of exp(phi) g from those of g and the differential of phi.

    ``x`` is accepted for interface symmetry; all inputs are taken at that point.
    """
    return _conformal_correction(np.asarray(gamma, dtype=float), np.asarray(g, dtype=float),
                                 np.asarray(dphi, dtype=float))


def signature_ok(spec, X):
    """True when every sampled metric is symmetric with signature (-,+,...,+)."""
    for g in spec.metric_batch(np.atleast_2d(X)):
        if np.max(np.abs(g - g.T)) != 0.0:
            return False
        ev = np.linalg.eigvalsh(g)
        if not (ev[0] < 0 and np.all(ev[1:] > 0)):
            return False
    return True
