"""
Time separation, observation time functions and earliest light observation
sets for families of coordinate observers.
"""
from dataclasses import dataclass
import math

import numpy as np
from scipy.optimize import root

from ._pykernels import _rk4
from .errors import DegenerateInput, NoConnection
from .geodesics import Worldline, null_connect
from .spacetime import CODE_CONFORMAL_AFFINE

TAU_TOL = 1e-9
S_TOL = 1e-6
FAN_SIZE = 128
FAN_REFINEMENTS = 2


def _analytic(spec):
    return spec.is_flat


def _analytic_tau(spec, x, y):
    d = np.asarray(y, dtype=float) - np.asarray(x, dtype=float)
    q = d[0] ** 2 - np.sum(d[1:] ** 2)
    if d[0] <= 0 or q <= 0:
        return 0.0
    scale = math.exp(0.5 * spec.kparams[0]) if spec.code == CODE_CONFORMAL_AFFINE else 1.0
    return scale * math.sqrt(q)


@dataclass
class TauResult:
    tau: float
    converged: bool
    miss: float = 0.0


class _TimeShooter:
    """Timelike geodesics from x parametrised by their coordinate velocity."""

    def __init__(self, spec, x, h=1e-2):
        self.spec = spec
        self.x = np.asarray(x, dtype=float)
        self.h = h
        g = spec.metric_batch(self.x[None])[0]
        self.g = g

    def velocity_bound(self, D):
        """Largest speed along unit spatial directions D keeping (1, v) causal at x."""
        g = self.g
        a = np.einsum("ij,bi,bj->b", g[1:, 1:], D, D)
        b = 2 * D @ g[0, 1:]
        c = g[0, 0]
        return (-b + np.sqrt(b * b - 4 * a * c)) / (2 * a)

    def shoot(self, V, t):
        """Positions at coordinate time t and proper lengths for initial velocities V."""
        V = np.atleast_2d(V)
        B = len(V)
        P = np.concatenate([np.ones((B, 1)), V], axis=1)
        X = np.broadcast_to(self.x, P.shape).copy()
        norm2 = -np.einsum("ij,bi,bj->b", self.g, P, P)
        acc = self.spec.acceleration
        s = np.zeros(B)
        done = X[:, 0] >= t
        out_x = X.copy()
        out_s = np.zeros(B)
        for _ in range(100000):
            if done.all():
                break
            idx = np.nonzero(~done)[0]
            dt = np.minimum(self.h / np.linalg.norm(P[idx], axis=1), 1e9)
            x0, p0 = X[idx], P[idx]
            x1, p1 = _rk4(acc, x0, p0, dt)
            cross = x1[:, 0] >= t
            if np.any(cross):
                c = np.nonzero(cross)[0]
                lo = np.zeros(c.size)
                hi = np.ones(c.size)
                d = dt[c][:, None]
                for _ in range(60):
                    mid = 0.5 * (lo + hi)
                    xt = _hermite0(mid, x0[c, 0], x1[c, 0], p0[c, 0], p1[c, 0], dt[c])
                    below = xt < t
                    lo = np.where(below, mid, lo)
                    hi = np.where(below, hi, mid)
                th = 0.5 * (lo + hi)[:, None]
                h00 = 2 * th ** 3 - 3 * th ** 2 + 1
                h10 = th ** 3 - 2 * th ** 2 + th
                h01 = -2 * th ** 3 + 3 * th ** 2
                h11 = th ** 3 - th ** 2
                out_x[idx[c]] = h00 * x0[c] + h10 * d * p0[c] + h01 * x1[c] + h11 * d * p1[c]
                out_s[idx[c]] = s[idx[c]] + th[:, 0] * dt[c]
                done[idx[c]] = True
            X[idx], P[idx] = x1, p1
            s[idx] += dt
            bad = ~self.spec.in_chart(x1)
            if np.any(bad & ~cross):
                j = idx[bad & ~cross]
                out_x[j] = np.nan
                done[j] = True
        return out_x, out_s * np.sqrt(np.maximum(norm2, 0.0))


def _hermite0(t, x0, x1, v0, v1, dt):
    return ((2 * t ** 3 - 3 * t ** 2 + 1) * x0 + (t ** 3 - 2 * t ** 2 + t) * dt * v0
            + (-2 * t ** 3 + 3 * t ** 2) * x1 + (t ** 3 - t ** 2) * dt * v1)


def _fan_directions(m, count):
    """Unit vectors in R^m spread over the sphere."""
    if m == 1:
        return np.array([[-1.0], [1.0]])
    if m == 2:
        th = 2 * np.pi * np.arange(count) / count
        return np.stack([np.cos(th), np.sin(th)], axis=1)
    i = np.arange(count) + 0.5
    # Fibonacci lattice on S^2, padded with zeros beyond three dimensions
    phi = np.arccos(1 - 2 * i / count)
    th = np.pi * (1 + 5 ** 0.5) * i
    d = np.stack([np.cos(th) * np.sin(phi), np.sin(th) * np.sin(phi), np.cos(phi)], axis=1)
    if m > 3:
        d = np.concatenate([d, np.zeros((count, m - 3))], axis=1)
    return d


def time_separation_general(spec, x, y, h=1e-2, n_fan=FAN_SIZE, refinements=FAN_REFINEMENTS, tol=1e-8):
    """Fan shooting over timelike geodesics from x to y, maximising proper length."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if y[0] <= x[0]:
        return TauResult(0.0, True)
    sh = _TimeShooter(spec, x, h)
    m = spec.n - 1
    if m == 1:
        D = np.array([[1.0]])
        speeds = np.linspace(-0.999, 0.999, n_fan)[:, None]
        V = speeds * sh.velocity_bound(np.sign(speeds + 1e-300))[:, None] * D
    else:
        n_dir = max(4, n_fan // 8)
        D = _fan_directions(m, n_dir)
        rad = np.linspace(0.0, 0.98, 8)
        vb = sh.velocity_bound(D)
        V = (rad[None, :, None] * (vb[:, None] * D)[:, None, :]).reshape(-1, m)
    target = y[1:]

    def miss(V):
        X, L = sh.shoot(V, y[0])
        return X[:, 1:] - target, L

    E, L = miss(V)
    err = np.linalg.norm(E, axis=1)
    err = np.where(np.isfinite(err), err, np.inf)
    best = V[np.argmin(err)]
    scale = float(np.max(np.abs(V), initial=1.0)) / 8
    for _ in range(refinements):
        offs = np.linspace(-1, 1, 5)
        grids = np.meshgrid(*([offs] * m), indexing="ij")
        cand = best + scale * np.stack([g.ravel() for g in grids], axis=1)
        E, L = miss(cand)
        err = np.where(np.isfinite(np.linalg.norm(E, axis=1)), np.linalg.norm(E, axis=1), np.inf)
        best = cand[np.argmin(err)]
        scale /= 4
    sol = root(lambda v: miss(v[None])[0][0], best, method="hybr", options={"xtol": 1e-13})
    E, L = miss(sol.x[None])
    final = float(np.linalg.norm(E[0]))
    ok = np.isfinite(final) and final < tol
    Pn = np.concatenate([[1.0], sol.x])
    timelike = -(Pn @ sh.g @ Pn) > 0
    if ok and timelike:
        return TauResult(float(L[0]), True, final)
    # a causal-but-not-timelike hit is a resolved zero; a failed search only gives the lower bound 0
    return TauResult(0.0, bool(ok), final)


def time_separation(spec, x, y, backend="auto", return_result=False):
    """Lorentzian time separation tau(x, y) >= 0."""
    if backend == "auto":
        backend = "analytic" if _analytic(spec) else "shooting"
    if backend == "analytic":
        if not _analytic(spec):
            raise ValueError("analytic time separation needs a flat metric")
        r = TauResult(_analytic_tau(spec, x, y), True)
    else:
        r = time_separation_general(spec, x, y)
    return r if return_result else r.tau


# ---------------------------------------------------------------------------
# observers

def observation_time_plus(spec, mu, x, tau_tol=TAU_TOL, s_tol=S_TOL, backend="auto"):
    """Earliest parameter at which mu enters the chronological future of x (1 if never)."""
    lo, hi = mu.s_range

    def ahead(s):
        return time_separation(spec, x, mu(s), backend) > tau_tol

    if not ahead(hi):
        return 1.0 if hi == 1.0 else hi
    if ahead(lo):
        return lo
    while hi - lo > s_tol:
        mid = 0.5 * (lo + hi)
        if ahead(mid):
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def observation_time_minus(spec, mu, x, tau_tol=TAU_TOL, s_tol=S_TOL, backend="auto"):
    """Latest parameter at which mu is in the chronological past of x (-1 if never)."""
    lo, hi = mu.s_range

    def behind(s):
        return time_separation(spec, mu(s), x, backend) > tau_tol

    if not behind(lo):
        return lo
    if behind(hi):
        return hi
    while hi - lo > s_tol:
        mid = 0.5 * (lo + hi)
        if behind(mid):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


class ObserverFamily:
    """Coordinate observers mu_a(s) = (s, a) on s in [-1, 1]."""

    def __init__(self, spec, a_grid, s_range=(-1.0, 1.0), check=True):
        self.spec = spec
        self.a_grid = np.atleast_2d(np.asarray(a_grid, dtype=float))
        if self.a_grid.shape[1] != spec.n - 1:
            raise ValueError("observer parameters need n - 1 components")
        self.s_range = s_range
        if check:
            self.validate()

    @classmethod
    def default(cls, spec, half_width=0.5, count=33):
        """count^(n-2) observers spread along the first n-2 spatial axes, rest at 0."""
        n = spec.n
        axis = np.linspace(-half_width, half_width, count)
        if n == 2:
            grid = np.zeros((1, 1))
        else:
            mesh = np.meshgrid(*([axis] * (n - 2)), indexing="ij")
            grid = np.zeros((count ** (n - 2), n - 1))
            for i, m in enumerate(mesh):
                grid[:, i] = m.ravel()
        return cls(spec, grid)

    def __len__(self):
        return len(self.a_grid)

    def curve(self, i):
        return Worldline.coordinate(self.a_grid[i], self.s_range)

    @property
    def hat_index(self):
        d = np.linalg.norm(self.a_grid, axis=1)
        return int(np.argmin(d))

    def validate(self, samples=9):
        s = np.linspace(*self.s_range, samples)
        for a in self.a_grid:
            X = np.column_stack([s, np.broadcast_to(a, (samples, len(a)))])
            V = np.zeros_like(X)
            V[:, 0] = 1.0
            if not (np.all(self.spec.inner(X, V, V) < 0) and np.all(self.spec.in_chart(X))):
                raise ValueError("observer curves must be future timelike inside the chart")
        return True


@dataclass
class CausalDiamond:
    spec: object
    s_minus: float
    s_plus: float

    def __post_init__(self):
        if not -1 < self.s_minus < self.s_plus < 1:
            raise ValueError("need -1 < s_minus < s_plus < 1")
        n = self.spec.n
        self.x_minus = np.concatenate([[self.s_minus], np.zeros(n - 1)])
        self.x_plus = np.concatenate([[self.s_plus], np.zeros(n - 1)])

    def contains(self, w):
        return (time_separation(self.spec, self.x_minus, w) > TAU_TOL
                and time_separation(self.spec, w, self.x_plus) > TAU_TOL)


def check_observer_bounds(spec, family, diamond):
    """mu_a(-1) << x_minus and x_plus << mu_a(1) for every observer."""
    for i in range(len(family)):
        mu = family.curve(i)
        if not (time_separation(spec, mu(family.s_range[0]), diamond.x_minus) > TAU_TOL
                and time_separation(spec, diamond.x_plus, mu(family.s_range[1])) > TAU_TOL):
            return False
    return True


@dataclass
class Observation:
    a: np.ndarray
    f_plus: float
    f_minus: float
    event: np.ndarray


def earliest_obs_set(spec, family, w, with_minus=False, backend="auto"):
    """Earliest light observation events of w, one per observer."""
    out = []
    for i in range(len(family)):
        mu = family.curve(i)
        fp = observation_time_plus(spec, mu, w, backend=backend)
        fm = observation_time_minus(spec, mu, w, backend=backend) if with_minus else float("nan")
        out.append(Observation(family.a_grid[i].copy(), fp, fm, mu(fp)))
    return out


def shortcut_check(spec, x, y, z, tol=1e-6):
    """True when the broken null path x -> y -> z can be shortcut by a timelike curve."""
    x, y, z = (np.asarray(v, dtype=float) for v in (x, y, z))
    if np.allclose(x, y) or np.allclose(y, z):
        raise DegenerateInput("shortcut_check needs three distinct events")
    for a, b in ((x, y), (y, z)):
        wl = Worldline.coordinate(b[1:], (a[0], spec.hi[0]))
        conn = null_connect(spec, a, wl)
        if abs(conn.s_star - b[0]) > tol:
            raise NoConnection("events are not joined by a future null geodesic")
    return time_separation(spec, x, z) > TAU_TOL
