"""
Phase-space densities, mollified delta sources on initial submanifolds and
the Vlasov solution operator.

A density is any object that evaluates on batches of phase points (X, P) and
carries a support box in R^{2n}; evaluation outside that box is exactly 0.
The Vlasov solution of X u = f is evaluated lazily by integrating f along the
backward geodesic flow over the part of the path that crosses the spatial
support box of f.
"""
from dataclasses import dataclass, field
import math

import numpy as np
from scipy.integrate import quad
from scipy.interpolate import RegularGridInterpolator

from . import kernels
from .errors import IntegrationError, MollificationError, SourcePatchError
from .geodesics import exit_times, flow_to
from .spacetime import causal_class

GL_PER_STEP = 8
DEFAULT_STEP = 2e-2
NODE_CHUNK = 2_000_000
SIGMA_CHUNK = 2_000_000


def bump(t):
    """The C-infinity bump exp(-1/(1-t^2)) on (-1, 1), zero elsewhere."""
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    m = np.abs(t) < 1.0
    out[m] = np.exp(-1.0 / (1.0 - t[m] ** 2))
    return out


BUMP_MASS = quad(lambda t: math.exp(-1.0 / (1.0 - t * t)), -1.0, 1.0, epsabs=1e-14, epsrel=1e-13, limit=200)[0]


def mollifier_1d(t, eps):
    """Bump rescaled to width eps with unit integral."""
    return bump(np.asarray(t) / eps) / (eps * BUMP_MASS)


def cutoff(r, R):
    """Smooth bump of radius R with value 1 at the centre."""
    r = np.asarray(r, dtype=float)
    return bump(r / R) * math.e


# ---------------------------------------------------------------------------
# densities

class PhaseDensity:
    """Base class: a scalar field on phase space with a support box."""

    def __init__(self, n, lo, hi, nonneg=False, resolution=math.inf):
        self.n = n
        self.lo = np.asarray(lo, dtype=float)
        self.hi = np.asarray(hi, dtype=float)
        self.nonneg = nonneg
        self.resolution = resolution

    # support ------------------------------------------------------------------
    @property
    def spatial_box(self):
        return self.lo[: self.n], self.hi[: self.n]

    @property
    def momentum_box(self):
        return self.lo[self.n:], self.hi[self.n:]

    def momentum_box_at(self, Y):
        """Momentum boxes (lo, hi) containing the support of the density at each base point."""
        Y = np.atleast_2d(Y)
        lo, hi = self.momentum_box
        return np.broadcast_to(lo, Y.shape), np.broadcast_to(hi, Y.shape)

    def in_support(self, X, P):
        Z = np.concatenate([X, P], axis=1)
        return np.all((Z >= self.lo) & (Z <= self.hi), axis=1)

    # evaluation ---------------------------------------------------------------
    def __call__(self, X, P):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        P = np.atleast_2d(np.asarray(P, dtype=float))
        out = np.zeros(X.shape[0])
        m = self.in_support(X, P)
        if np.any(m):
            out[m] = self._eval(X[m], P[m])
        return out

    def evaluate(self, x, p):
        return float(self(np.asarray(x)[None], np.asarray(p)[None])[0])

    def _eval(self, X, P):
        raise NotImplementedError

    # algebra --------------------------------------------------------------------
    def __mul__(self, c):
        return LinearCombination([(float(c), self)])

    __rmul__ = __mul__

    def __add__(self, other):
        return LinearCombination([(1.0, self), (1.0, other)])

    def __sub__(self, other):
        return LinearCombination([(1.0, self), (-1.0, other)])

    def __neg__(self):
        return LinearCombination([(-1.0, self)])


class ZeroDensity(PhaseDensity):
    def __init__(self, n):
        super().__init__(n, np.zeros(2 * n), -np.ones(2 * n), nonneg=True)

    def in_support(self, X, P):
        return np.zeros(X.shape[0], dtype=bool)


class AnalyticDensity(PhaseDensity):
    """A vectorised callable fn(X, P) restricted to a support box."""

    def __init__(self, n, fn, lo, hi, nonneg=False, resolution=math.inf, sup=None):
        super().__init__(n, lo, hi, nonneg, resolution)
        self.fn = fn
        self.sup = sup

    def _eval(self, X, P):
        return np.asarray(self.fn(X, P), dtype=float)


def bump_source(x, p, half_x, half_p, amp=1.0):
    """Product of bumps centred at (x, p) with the given half-widths, peak value amp."""
    c = np.concatenate([x, p]).astype(float)
    half = np.concatenate([half_x, half_p]).astype(float)
    n = len(x)
    norm = amp * math.e ** (2 * n)

    def fn(X, P):
        Z = (np.concatenate([X, P], axis=1) - c) / half
        return norm * np.prod(bump(Z), axis=1)

    return AnalyticDensity(n, fn, c - half, c + half, nonneg=amp >= 0, resolution=float(half.min()),
                           sup=abs(amp))


class LinearCombination(PhaseDensity):
    def __init__(self, terms):
        n = next((d.n for _, d in terms if d.n is not None), None)
        terms = [(c, d) for c, d in terms
                 if c != 0.0 and not isinstance(d, ZeroDensity) and not getattr(d, "_zero", False)]
        self.terms = terms
        if not terms:
            # an empty combination behaves like ZeroDensity: inverted box, nothing inside
            super().__init__(n, np.zeros(2 * (n or 0)), -np.ones(2 * (n or 0)), nonneg=True)
            self._zero = True
            return
        self._zero = False
        lo = np.min([d.lo for _, d in terms], axis=0)
        hi = np.max([d.hi for _, d in terms], axis=0)
        nonneg = all(c > 0 and d.nonneg for c, d in terms)
        res = min(d.resolution for _, d in terms)
        super().__init__(n, lo, hi, nonneg, res)

    def __call__(self, X, P):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        P = np.atleast_2d(np.asarray(P, dtype=float))
        out = np.zeros(X.shape[0])
        for c, d in self.terms:
            out += c * d(X, P)
        return out

    def momentum_box_at(self, Y):
        if not self.terms:
            return super().momentum_box_at(Y)
        boxes = [d.momentum_box_at(Y) for _, d in self.terms]
        return np.min([b[0] for b in boxes], axis=0), np.max([b[1] for b in boxes], axis=0)


# ---------------------------------------------------------------------------
# sources

@dataclass
class SourcePatch:
    """A point or a flat (n-2)-parameter family of initial vectors on a time slice.

    ``frame`` holds k orthonormal phase-space directions (rows of length 2n)
    with zero time component; the patch is {centre + sigma . frame : |sigma| <= R}.
    """

    x: np.ndarray
    p: np.ndarray
    eps: float
    R: float
    frame: np.ndarray = None
    t0: float = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.p = np.asarray(self.p, dtype=float)
        n = self.x.size
        if self.frame is None:
            self.frame = np.zeros((0, 2 * n))
        self.frame = np.atleast_2d(np.asarray(self.frame, dtype=float)).reshape(-1, 2 * n)
        if self.t0 is None:
            self.t0 = float(self.x[0])

    @classmethod
    def single(cls, x, p, eps, R):
        return cls(x, p, eps, R)

    @property
    def n(self):
        return self.x.size

    @property
    def k(self):
        return self.frame.shape[0]

    @property
    def kind(self):
        return "Point" if self.k == 0 else "Patch"

    @property
    def centre(self):
        return np.concatenate([self.x, self.p])

    def point(self, sigma):
        sigma = np.asarray(sigma, dtype=float).reshape(self.k)
        return self.centre + sigma @ self.frame

    def validate(self, spec=None, n_check=5):
        if not self.eps < self.R:
            raise MollificationError("mollification width must be smaller than the patch radius")
        if self.eps <= 0:
            raise MollificationError("mollification width must be positive")
        n = self.n
        if abs(self.x[0] - self.t0) > 1e-12:
            raise SourcePatchError("patch centre must lie on its Cauchy slice")
        if self.k:
            if np.max(np.abs(self.frame[:, 0])) > 0:
                raise SourcePatchError("frame directions must be tangent to the time slice")
            if np.max(np.abs(self.frame @ self.frame.T - np.eye(self.k))) > 1e-10:
                raise SourcePatchError("frame must be orthonormal")
        if spec is not None:
            samples = [np.zeros(self.k)]
            if self.k:
                for j in range(self.k):
                    for sgn in (-1, 1):
                        e = np.zeros(self.k)
                        e[j] = sgn * self.R
                        samples.append(e)
            for sg in samples:
                z = self.point(sg)
                cc = causal_class(spec, z[:n], z[n:])
                if not (cc.kind == "Timelike" and cc.future):
                    raise SourcePatchError("patch initial vectors must be future-directed timelike")
        return self

    def support_box(self):
        reach = self.R * np.sqrt(np.sum(self.frame ** 2, axis=0)) if self.k else 0.0
        c = self.centre
        return c - reach - self.eps, c + reach + self.eps

    def sigma_samples(self, spacing):
        """Patch parameters on a grid of the given spacing inside the R-ball."""
        if self.k == 0:
            return np.zeros((1, 0))
        m = max(2, int(math.ceil(2 * self.R / spacing)) + 1)
        g = np.linspace(-self.R, self.R, m)
        s = np.stack([a.ravel() for a in np.meshgrid(*([g] * self.k), indexing="ij")], axis=1)
        return s[np.linalg.norm(s, axis=1) <= self.R + 1e-12]


class MollifiedSource(PhaseDensity):
    """Friedrichs mollification of chi_R times the delta distribution of a patch."""

    def __init__(self, patch, n_sigma=24):
        self.patch = patch
        lo, hi = patch.support_box()
        super().__init__(patch.n, lo, hi, nonneg=True, resolution=0.5 * patch.eps)
        self.n_sigma = n_sigma
        self._gl = np.polynomial.legendre.leggauss(n_sigma if patch.k == 1 else min(n_sigma, 12))

    def _eval(self, X, P):
        S = self.patch
        eps = S.eps
        D = np.concatenate([X, P], axis=1) - S.centre
        if S.k == 0:
            return np.prod(mollifier_1d(D, eps), axis=1)
        xg, wg = self._gl
        if S.k == 1:
            v = S.frame[0]
            lo = np.full(D.shape[0], -S.R)
            hi = np.full(D.shape[0], S.R)
            for i in np.nonzero(np.abs(v) > 1e-14)[0]:
                a = (D[:, i] - eps) / v[i]
                b = (D[:, i] + eps) / v[i]
                lo = np.maximum(lo, np.minimum(a, b))
                hi = np.minimum(hi, np.maximum(a, b))
            out = np.zeros(D.shape[0])
            ok = np.nonzero(hi > lo)[0]
            per = max(1, SIGMA_CHUNK // len(xg))
            for s0 in range(0, ok.size, per):
                sel = ok[s0:s0 + per]
                mid = 0.5 * (lo[sel] + hi[sel])
                half = 0.5 * (hi[sel] - lo[sel])
                sig = mid[:, None] + half[:, None] * xg[None, :]
                diff = D[sel][:, None, :] - sig[:, :, None] * v[None, None, :]
                vals = np.prod(mollifier_1d(diff, eps), axis=2) * cutoff(np.abs(sig), S.R)
                out[sel] = half * (vals @ wg)
            return out
        # k >= 2: tensor rule over a box around the orthogonal projection
        k = S.k
        proj = D @ S.frame.T
        half = eps * math.sqrt(2 * S.n)
        mesh = np.meshgrid(*([xg] * k), indexing="ij")
        nodes = np.stack([m.ravel() for m in mesh], axis=1)
        wts = np.prod(np.meshgrid(*([wg] * k), indexing="ij"), axis=0).ravel()
        lo = np.clip(proj - half, -S.R, S.R)
        hi = np.clip(proj + half, -S.R, S.R)
        c = 0.5 * (lo + hi)
        hw = 0.5 * (hi - lo)
        sig = c[:, None, :] + hw[:, None, :] * nodes[None]
        diff = D[:, None, :] - sig @ S.frame
        vals = np.prod(mollifier_1d(diff, eps), axis=2) * cutoff(np.linalg.norm(sig, axis=2), S.R)
        return np.prod(hw, axis=1) * (vals @ wts)


def mollified_delta_source(S, spec=None):
    """Smooth nonnegative approximation of chi_R delta_S with mollification width S.eps."""
    S.validate(spec)
    return MollifiedSource(S)


# ---------------------------------------------------------------------------
# Vlasov solution

class TransportedDensity(PhaseDensity):
    """u(x, p) = integral of f along the backward geodesic through (x, p)."""

    def __init__(self, spec, f, h=DEFAULT_STEP, ngl=GL_PER_STEP, tol=1e-9):
        self.spec = spec
        self.f = f
        self.h = h
        self.ngl = ngl
        self.tol = tol
        n = spec.n
        lo = np.concatenate([spec.lo, np.full(n, -np.inf)])
        hi = np.concatenate([spec.hi, np.full(n, np.inf)])
        lo[0] = max(lo[0], f.lo[0])
        if spec.is_flat:
            lo[n:], hi[n:] = f.lo[n:], f.hi[n:]
        super().__init__(n, lo, hi, nonneg=f.nonneg)
        self.chart_exits = 0

    def momentum_box_at(self, Y):
        if self.spec.is_flat:
            return super().momentum_box_at(Y)
        raise NotImplementedError("momentum support of transported densities is only known on flat metrics")

    def _eval(self, X, P):
        n = self.n
        out = np.zeros(X.shape[0])
        if isinstance(self.f, ZeroDensity) or getattr(self.f, "_zero", False):
            return out
        lo, hi = self.f.spatial_box
        ell_in, ell_out, status = exit_times(self.spec, X, P, (lo, hi), self.h, self.tol)
        if np.any(status < 0):
            raise IntegrationError("non-finite state in backward flow")
        self.chart_exits += int(np.sum(status == 2))
        hit = np.nonzero((status > 0) & (ell_out > ell_in))[0]
        if hit.size == 0:
            return out
        pn = np.linalg.norm(P[hit], axis=1)
        step = self.h / pn
        qstep = min(self.h, self.f.resolution) / pn
        est = np.ceil((ell_out[hit] - ell_in[hit]) / qstep) * self.ngl
        start = 0
        while start < hit.size:
            stop = start + 1
            acc = est[start]
            while stop < hit.size and acc + est[stop] <= NODE_CHUNK:
                acc += est[stop]
                stop += 1
            sel = hit[start:stop]
            counts, Xn, Pn, Wn = kernels.flow_nodes(
                self.spec, X[sel], P[sel], ell_in[sel], ell_out[sel],
                step[start:stop], qstep[start:stop], self.ngl)
            vals = self.f(Xn, Pn) * Wn
            owner = np.repeat(np.arange(sel.size), counts)
            out[sel] = np.bincount(owner, weights=vals, minlength=sel.size)
            start = stop
        return out


def vlasov_solve(spec, f, h=DEFAULT_STEP, ngl=GL_PER_STEP, cauchy_time=None):
    """Solution of X u = f vanishing in the past of the support of f."""
    if cauchy_time is not None and f.lo[0] < cauchy_time:
        raise ValueError("source must be supported in the future of the Cauchy slice")
    if not np.all(np.isfinite(f.lo[: f.n])) or not np.all(np.isfinite(f.hi[: f.n])):
        raise ValueError("source needs a compact spatial support box")
    return TransportedDensity(spec, f, h, ngl)


def flow_derivative_residual(spec, u, f, x, p, h, h_int=1e-4):
    """Central difference of u along the geodesic flow at (x, p) minus f(x, p)."""
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    xf, pf = flow_to(spec, x, p, h, h_int)
    xb, pb = flow_to(spec, x, p, -h, h_int)
    vals = u(np.array([xf, xb]), np.array([pf, pb]))
    return float((vals[0] - vals[1]) / (2 * h) - f.evaluate(x, p))


def vlasov_constant(spec, K, X, P, h=DEFAULT_STEP):
    """Largest backward crossing length of K over sample points: |u| <= c_K ||f||."""
    ell_in, ell_out, status = exit_times(spec, X, P, K, h)
    return float(np.max(np.where(status > 0, ell_out - ell_in, 0.0), initial=0.0))


# ---------------------------------------------------------------------------
# grid cache

@dataclass
class PhaseGrid:
    """Tensor grid over R^{2n}: one increasing axis per coordinate."""

    axes: list = field(default_factory=list)

    def __post_init__(self):
        self.axes = [np.asarray(a, dtype=float) for a in self.axes]

    @classmethod
    def uniform(cls, lo, hi, counts):
        return cls([np.linspace(a, b, int(m)) for a, b, m in zip(lo, hi, counts)])

    @property
    def n(self):
        return len(self.axes) // 2

    @property
    def shape(self):
        return tuple(len(a) for a in self.axes)

    @property
    def size(self):
        return int(np.prod(self.shape))

    @property
    def lo(self):
        return np.array([a[0] for a in self.axes])

    @property
    def hi(self):
        return np.array([a[-1] for a in self.axes])

    def points(self):
        mesh = np.meshgrid(*self.axes, indexing="ij")
        Z = np.stack([m.ravel() for m in mesh], axis=1)
        return Z[:, : self.n], Z[:, self.n:]

    def refined(self):
        """Grid with every cell halved (coarse nodes are kept)."""
        out = []
        for a in self.axes:
            mids = 0.5 * (a[1:] + a[:-1])
            out.append(np.sort(np.concatenate([a, mids])))
        return PhaseGrid(out)


class GridCachedDensity(PhaseDensity):
    """Values on a PhaseGrid with multilinear interpolation; zero outside the grid."""

    def __init__(self, grid, values, nonneg=False):
        values = np.asarray(values, dtype=float).reshape(grid.shape)
        if not np.all(np.isfinite(values)):
            raise ValueError("grid values must be finite")
        super().__init__(grid.n, grid.lo, grid.hi, nonneg=nonneg)
        self.grid = grid
        self.values = values
        self._interp = RegularGridInterpolator(grid.axes, values, method="linear",
                                               bounds_error=False, fill_value=0.0)

    def _eval(self, X, P):
        return self._interp(np.concatenate([X, P], axis=1))

    @classmethod
    def from_density(cls, grid, density):
        X, P = grid.points()
        return cls(grid, density(X, P), nonneg=density.nonneg)
