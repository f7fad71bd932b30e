"""
Geodesic flow, exit times, null shooting between events and flowouts of
initial submanifolds.

All integration is fixed-step classical RK4 on (x, p) with p the affine
velocity.  Where a routine integrates many paths at once it uses a step
proportional to 1/|p|_e, so that scaling the initial velocity only rescales
the affine parameter and leaves the sampled base path unchanged.
"""
from dataclasses import dataclass, field
import math

import numpy as np
from scipy.optimize import least_squares, minimize, minimize_scalar

from . import kernels
from .errors import (ChartError, ChartExitError, DegenerateTargetError, IntegrationError,
                     NoConnection, TransversalityError, ZeroVectorError)
from .spacetime import TOL_NULL, causal_class

TRANSVERSALITY_THRESHOLD = 1e-4
NULL_DIRECTIONS = 64
NULL_REFINEMENTS = 2


@dataclass
class GeodesicPath:
    s: np.ndarray
    X: np.ndarray
    P: np.ndarray
    h: float
    mass_shell: np.ndarray
    mass_shell_drift: float
    exited_chart: bool = False

    @property
    def end(self):
        return self.X[-1], self.P[-1]

    def rows(self):
        """Samples as rows (s, x..., p..., g(p,p))."""
        return np.column_stack([self.s, self.X, self.P, self.mass_shell])


def _unit_step(P, h):
    norms = np.linalg.norm(np.atleast_2d(P), axis=1)
    return h / norms


def geodesic_flow(spec, x, p, T, h):
    """Integrate the geodesic through (x, p) for affine time T >= 0 with step about h."""
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    if not np.any(p):
        raise ZeroVectorError("initial velocity is zero")
    if not spec.in_chart(x)[0]:
        raise ChartError(f"initial point {x.tolist()} outside chart")
    if T < 0 or h <= 0:
        raise ValueError("need T >= 0 and h > 0")
    nsteps = max(1, int(math.ceil(T / h - 1e-9))) if T > 0 else 0
    step = T / nsteps if nsteps else 0.0
    X, P, flag = kernels.rk4_path(spec, x, p, step, nsteps)
    if flag < 0:
        raise IntegrationError("non-finite state during geodesic integration")
    s = np.arange(X.shape[0]) * step
    gpp = spec.inner(X, P, P)
    return GeodesicPath(s, X, P, step, gpp, float(np.max(np.abs(gpp - gpp[0]))), flag == 1)


def flow_to(spec, x, p, s, h=1e-3):
    """Phase point reached after affine time s (negative s flows backward)."""
    if s == 0:
        return np.asarray(x, dtype=float), np.asarray(p, dtype=float)
    if s > 0:
        path = geodesic_flow(spec, x, p, s, h)
        return path.X[-1], path.P[-1]
    path = geodesic_flow(spec, x, -np.asarray(p, dtype=float), -s, h)
    return path.X[-1], -path.P[-1]


def _as_box(K):
    lo, hi = K
    return np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)


def exit_times(spec, X, P, K, h=1e-2, tol=1e-9):
    """Batched entry/exit parameters of the backward paths in the box K.

    Returns (ell_in, ell_out, status) as produced by the kernel; ``h`` is a
    Euclidean base-path length per step.
    """
    lo, hi = _as_box(K)
    X = np.atleast_2d(X)
    P = np.atleast_2d(P)
    return kernels.box_crossing(spec, X, P, lo, hi, _unit_step(P, h), tol)


def exit_time(spec, x, p, K, h=1e-2, tol=1e-9, strict=True):
    """Largest backward parameter at which the geodesic through (x, p) lies in K."""
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    cc = causal_class(spec, x, p)
    if not (cc.causal and cc.future):
        raise ValueError("exit_time needs a future-directed causal vector")
    _, ell, status = exit_times(spec, x[None], p[None], K, h, tol)
    if status[0] < 0:
        raise IntegrationError("non-finite state along the backward path")
    if status[0] in (2, 3) and strict:
        raise ChartExitError("backward path left the chart before the exit time was resolved",
                             partial=float(ell[0]))
    return float(ell[0])


# ---------------------------------------------------------------------------
# worldlines and null shooting

class Worldline:
    """A future-directed curve s -> mu(s) with increasing time coordinate."""

    def __init__(self, fn, s_range=(-1.0, 1.0), time_of=None):
        self.fn = fn
        self.s_range = (float(s_range[0]), float(s_range[1]))
        self._time_of = time_of

    @classmethod
    def coordinate(cls, a, s_range=(-1.0, 1.0)):
        """The coordinate curve (s, a), parametrised by its own time coordinate."""
        a = np.asarray(a, dtype=float)
        return cls(lambda s: np.concatenate([[s], a]), s_range, time_of=lambda t: t)

    def __call__(self, s):
        return np.asarray(self.fn(s), dtype=float)

    def param_at_time(self, t):
        """The parameter at which the curve has time coordinate t."""
        if self._time_of is not None:
            return self._time_of(t)
        lo, hi = self.s_range
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if self(mid)[0] < t:
                lo = mid
            else:
                hi = mid
            if hi - lo < 1e-15:
                break
        return 0.5 * (lo + hi)

    def at_time(self, t):
        return self(self.param_at_time(t))


@dataclass
class NullConnection:
    p: np.ndarray
    s_star: float
    event: np.ndarray
    miss: float
    path: GeodesicPath = field(repr=False, default=None)


def null_vector(spec, x, direction):
    """Future null vector at x with unit time component and spatial direction given."""
    g = spec.metric_batch(np.asarray(x, dtype=float)[None])[0]
    d = np.asarray(direction, dtype=float)
    gn = d @ g[1:, 1:] @ d
    c = math.sqrt(-g[0, 0] / gn)
    return np.concatenate([[1.0], c * d])


def _hermite(t, x0, x1, v0, v1, dt):
    h00 = 2 * t ** 3 - 3 * t ** 2 + 1
    h10 = t ** 3 - 2 * t ** 2 + t
    h01 = -2 * t ** 3 + 3 * t ** 2
    h11 = t ** 3 - t ** 2
    return h00 * x0 + h10 * dt * v0 + h01 * x1 + h11 * dt * v1


class _Shooter:
    """Integrates null rays from x and measures their closest approach to a worldline."""

    def __init__(self, spec, x, worldline, t_end, h):
        self.spec = spec
        self.x = x
        self.mu = worldline
        self.t_end = t_end
        self.h = h
        self.nsteps = max(2, int(math.ceil((t_end - x[0]) / h)) + 2)

    def ray(self, direction):
        p = null_vector(self.spec, self.x, direction)
        X, P, flag = kernels.rk4_path(self.spec, self.x, p, self.h, self.nsteps)
        if flag < 0:
            raise IntegrationError("non-finite state while shooting")
        A = self.spec.acceleration(X, P)
        return p, X, P, A

    def offset(self, X):
        mu = np.array([self.mu.at_time(t) for t in X[:, 0]])
        return X[:, 1:] - mu[:, 1:]

    def closest(self, direction):
        """(miss vector, ray spatial velocity, affine parameter, event) at closest approach."""
        p, X, P, A = self.ray(direction)
        keep = X[:, 0] <= self.t_end
        keep[0] = True
        m = int(np.sum(keep))
        R = self.offset(X[:m])
        d2 = np.sum(R * R, axis=1)
        k = int(np.argmin(d2))
        lo_k, hi_k = max(k - 1, 0), min(k + 1, X.shape[0] - 1)
        h = self.h

        def state(sig):
            j = min(int(sig // h), X.shape[0] - 2)
            t = sig / h - j
            xs = _hermite(t, X[j], X[j + 1], P[j], P[j + 1], h)
            ps = _hermite(t, P[j], P[j + 1], A[j], A[j + 1], h)
            return xs, ps

        def dist2(sig):
            xs, _ = state(sig)
            r = xs[1:] - self.mu.at_time(xs[0])[1:]
            return float(r @ r)

        if hi_k > lo_k:
            res = minimize_scalar(dist2, bounds=(lo_k * h, hi_k * h), method="bounded",
                                  options={"xatol": 1e-14})
            sig = float(res.x)
        else:
            sig = k * h
        xs, ps = state(sig)
        r = xs[1:] - self.mu.at_time(xs[0])[1:]
        return r, ps[1:], sig, xs, p


def _angles_to_dir(angles):
    """Unit vector on the sphere S^{m} from m hyperspherical angles."""
    m = len(angles)
    out = np.ones(m + 1)
    for i, a in enumerate(angles):
        out[i] *= math.cos(a)
        out[i + 1:] *= math.sin(a)
    return out


def null_connect(spec, x, worldline, h=1e-2, n_dirs=NULL_DIRECTIONS,
                 refinements=NULL_REFINEMENTS, miss_tol=1e-8):
    """Earliest future null geodesic from x that reaches the worldline.

    Returns a NullConnection with the initial null vector (unit time component),
    the worldline parameter s* of arrival, the arrival event and the miss distance.
    """
    x = np.asarray(x, dtype=float)
    n = spec.n
    if np.linalg.norm(worldline.at_time(x[0]) - x) < 1e-12:
        raise DegenerateTargetError("x lies on the worldline")
    s_hi = worldline.s_range[1]
    t_end = worldline(s_hi)[0]
    if t_end <= x[0]:
        raise NoConnection("worldline window lies in the past of x")
    shooter = _Shooter(spec, x, worldline, t_end, h)
    candidates = []
    if n == 2:
        for sgn in (1.0, -1.0):
            r, _, sig, ev, p = shooter.closest(np.array([sgn]))
            if abs(r[0]) < miss_tol:
                candidates.append((ev, p, abs(r[0]), sig))
    elif n == 3:
        def signed(theta):
            r, u, sig, ev, p = shooter.closest(np.array([math.cos(theta), math.sin(theta)]))
            return u[0] * r[1] - u[1] * r[0], r, sig, ev, p

        thetas = np.linspace(0.0, 2 * math.pi, n_dirs + 1)
        vals = [signed(t)[0] for t in thetas]
        for i in range(n_dirs):
            a, b = thetas[i], thetas[i + 1]
            fa, fb = vals[i], vals[i + 1]
            if fa == 0.0:
                b, fb = a, fa
            elif np.sign(fa) == np.sign(fb):
                continue
            for _ in range(refinements):
                if a == b:
                    break
                sub = np.linspace(a, b, n_dirs + 1)
                sv = [fa] + [signed(t)[0] for t in sub[1:-1]] + [fb]
                for j in range(n_dirs):
                    if sv[j] == 0.0 or np.sign(sv[j]) != np.sign(sv[j + 1]):
                        a, b, fa, fb = sub[j], sub[j + 1], sv[j], sv[j + 1]
                        break
            while b - a > 1e-15:
                mid = 0.5 * (a + b)
                fm = signed(mid)[0]
                if fm == 0.0:
                    a = b = mid
                    break
                if np.sign(fm) == np.sign(fa):
                    a, fa = mid, fm
                else:
                    b, fb = mid, fm
            best = min((signed(t) for t in {a, b}), key=lambda v: np.linalg.norm(v[1]))
            _, r, sig, ev, p = best
            miss = float(np.linalg.norm(r))
            if miss < miss_tol:
                candidates.append((ev, p, miss, sig))
    else:
        m = n - 2
        grid = np.linspace(0, math.pi, n_dirs, endpoint=False) + math.pi / (2 * n_dirs)
        mesh = np.meshgrid(*([grid] * (m - 1) + [np.linspace(0, 2 * math.pi, n_dirs, endpoint=False)]),
                           indexing="ij")
        starts = np.stack([g.ravel() for g in mesh], axis=1)

        def miss(angles):
            r = shooter.closest(_angles_to_dir(angles))[0]
            return float(r @ r)

        scores = np.array([miss(a) for a in starts])
        for idx in np.argsort(scores)[:4]:
            res = minimize(miss, starts[idx], method="Nelder-Mead",
                           options={"xatol": 1e-13, "fatol": 1e-30, "maxiter": 4000})
            r, _, sig, ev, p = shooter.closest(_angles_to_dir(res.x))
            d = float(np.linalg.norm(r))
            if d < miss_tol:
                candidates.append((ev, p, d, sig))
    if not candidates:
        raise NoConnection("no null direction from x reaches the worldline in the window")
    ev, p, miss, sig = min(candidates, key=lambda c: c[0][0])
    s_star = worldline.param_at_time(ev[0])
    path = geodesic_flow(spec, x, p, sig, min(h, max(sig, 1e-12)))
    return NullConnection(p, float(s_star), ev, miss, path)


# ---------------------------------------------------------------------------
# flowouts

@dataclass
class FlowoutSample:
    """Samples of the flowout of a source patch.

    ``sigma`` has shape (m, k) for k patch parameters, ``s`` the flow times and
    ``phase`` shape (m, len(s), 2n).
    """

    spec: object
    patch: object
    sigma: np.ndarray
    s: np.ndarray
    phase: np.ndarray
    h: float

    @property
    def base(self):
        return self.phase[..., : self.spec.n]

    def initial(self, sigma):
        return self.patch.point(sigma)

    def base_at(self, sigma, s):
        z = self.patch.point(sigma)
        n = self.spec.n
        xs, _ = flow_to(self.spec, z[:n], z[n:], s, self.h)
        return xs

    def locate(self, event):
        """Patch parameter and flow time whose base point is the event."""
        event = np.asarray(event, dtype=float)
        d = np.linalg.norm(self.base - event, axis=-1)
        i, j = np.unravel_index(np.argmin(d), d.shape)
        k = self.sigma.shape[1]
        x0 = np.concatenate([self.sigma[i], [self.s[j]]])

        def resid(v):
            return self.base_at(v[:k], v[k]) - event

        res = least_squares(resid, x0, xtol=1e-15, ftol=1e-15, gtol=1e-15)
        return res.x[:k], float(res.x[k]), float(np.linalg.norm(res.fun))

    def tangents(self, sigma, s, rel=1e-5):
        """Base-tangent directions: flow direction then one per patch parameter."""
        n = self.spec.n
        z = self.patch.point(sigma)
        xs, ps = flow_to(self.spec, z[:n], z[n:], s, self.h)
        cols = [ps]
        step = rel * max(self.patch.R, 1.0)
        for j in range(len(sigma)):
            e = np.zeros(len(sigma))
            e[j] = step
            cols.append((self.base_at(sigma + e, s) - self.base_at(sigma - e, s)) / (2 * step))
        return xs, cols

    def transversality(self, events, crossing, threshold=TRANSVERSALITY_THRESHOLD, raise_below=True):
        """Smallest singular value of the normalised tangent frame at each event.

        ``crossing`` gives the tangent of the other geodesic at each event.
        """
        out = []
        for ev, c in zip(np.atleast_2d(events), np.atleast_2d(crossing)):
            sig, s, _ = self.locate(ev)
            _, cols = self.tangents(sig, s)
            cols.append(np.asarray(c, dtype=float))
            M = np.column_stack([v / np.linalg.norm(v) for v in cols])
            sv = float(np.linalg.svd(M, compute_uv=False)[-1])
            if raise_below and sv < threshold:
                raise TransversalityError(f"flowouts are not transversal at {ev.tolist()} (sv={sv:.3e})")
            out.append(sv)
        return np.array(out)


def flowout(spec, S, window, n_sigma=9, h=1e-2, n_s=None):
    """Sample the flowout of a source patch over flow times in ``window``."""
    t0, t1 = window
    k = S.k
    if k == 0:
        sig = np.zeros((1, 0))
    else:
        g1 = np.linspace(-S.R, S.R, n_sigma)
        sig = np.stack([g.ravel() for g in np.meshgrid(*([g1] * k), indexing="ij")], axis=1)
        sig = sig[np.linalg.norm(sig, axis=1) <= S.R + 1e-12]
    n = spec.n
    for sg in sig:
        z = S.point(sg)
        cc = causal_class(spec, z[:n], z[n:])
        if not (cc.kind == "Timelike" and cc.future):
            raise ValueError("every initial vector of the patch must be future-directed timelike")
    if n_s is None:
        n_s = max(2, int(math.ceil((t1 - t0) / h)) + 1)
    s = np.linspace(t0, t1, n_s)
    phase = np.empty((len(sig), n_s, 2 * n))
    for i, sg in enumerate(sig):
        z = S.point(sg)
        x0, p0 = flow_to(spec, z[:n], z[n:], t0, h)
        path = geodesic_flow(spec, x0, p0, t1 - t0, h)
        # resample on the requested grid by Hermite interpolation of RK4 samples
        A = spec.acceleration(path.X, path.P)
        for j, sj in enumerate(s - t0):
            if path.h == 0:
                phase[i, j] = np.concatenate([path.X[0], path.P[0]])
                continue
            q = min(int(sj // path.h), len(path.s) - 2)
            q = max(q, 0)
            t = (sj - path.s[q]) / path.h
            xs = _hermite(t, path.X[q], path.X[q + 1], path.P[q], path.P[q + 1], path.h)
            ps = _hermite(t, path.P[q], path.P[q + 1], A[q], A[q + 1], path.h)
            phase[i, j] = np.concatenate([xs, ps])
    return FlowoutSample(spec, S, sig, s, phase, h)


def check_null(spec, x, p, tol=TOL_NULL):
    g = spec.metric_batch(np.asarray(x)[None])[0]
    return abs(p @ g @ p) <= tol * (p @ p)
