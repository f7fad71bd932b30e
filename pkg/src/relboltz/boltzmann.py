"""
Small-data Boltzmann solver on a phase grid and the first and second
linearizations of the source-to-solution map.

The integrated equation u = V f + T Q[u, u] is iterated on a tensor grid whose
momentum axes are integer multiples of a lattice spacing.  V f is the exact
Vlasov transport of the source sampled at the grid nodes; T is a sparse matrix
that integrates a multilinearly interpolated grid function along the backward
flow through K_pi; Q is the lattice collision operator, computed with FFT
convolutions for product kernels.
"""
from dataclasses import dataclass, field
import math

import numpy as np
from scipy import sparse
from scipy.signal import fftconvolve

from . import kernels
from .collision import _flow_integral, q_full_batch
from .errors import NoContractionError
from .geodesics import exit_times
from .kinetic_core import (GridCachedDensity, LinearCombination, PhaseDensity, PhaseGrid,
                           ZeroDensity, vlasov_solve)

ROW_CHUNK = 4000


def sup_norm(f, grid=None):
    """Declared sup of a density when known, else its max over the grid nodes."""
    if isinstance(f, ZeroDensity) or getattr(f, "_zero", False):
        return 0.0
    if isinstance(f, LinearCombination):
        parts = [abs(c) * sup_norm(d, grid) for c, d in f.terms]
        return float(sum(parts))
    s = getattr(f, "sup", None)
    if s is not None:
        return float(s)
    if grid is None:
        raise ValueError("density has no declared sup; pass a grid to sample it")
    X, P = grid.points()
    return float(np.max(np.abs(f(X, P)), initial=0.0))


@dataclass
class SolveConfig:
    grid: PhaseGrid
    tol: float = 1e-12
    max_iter: int = 200
    max_source_norm: float = None
    n_validation: int = 200
    seed: int = 0
    h: float = 2e-2
    ngl: int = 3

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")


def lattice_axes(grid):
    """Per momentum dimension (spacing, first integer index, count)."""
    n = grid.n
    out = []
    for a in grid.axes[n:]:
        d = np.diff(a)
        step = float(d[0])
        if not np.allclose(d, step, rtol=1e-9, atol=1e-12):
            raise ValueError("momentum axes must be uniform")
        k0 = a[0] / step
        if abs(k0 - round(k0)) > 1e-7:
            raise ValueError("momentum axes must be integer multiples of their spacing")
        out.append((step, int(round(k0)), len(a)))
    return out


def momentum_lattice_grid(spatial_axes, spacing, k_ranges):
    """PhaseGrid with the given spatial axes and momentum axes k * spacing."""
    mom = [s * np.arange(k0, k1 + 1) for s, (k0, k1) in zip(spacing, k_ranges)]
    return PhaseGrid(list(spatial_axes) + mom)


def _window(arr, axes, starts, want, counts):
    """Slice arr (whose index 0 along axes[d] sits at lattice index starts[d]) to
    lattice indices want[d] .. want[d]+counts[d]-1, zero filling outside."""
    out = arr
    for ax, s, w, c in zip(axes, starts, want, counts):
        lo = w - s
        L = out.shape[ax]
        idx = np.arange(lo, lo + c)
        ok = (idx >= 0) & (idx < L)
        taken = np.take(out, np.clip(idx, 0, L - 1), axis=ax)
        shape = [1] * out.ndim
        shape[ax] = c
        out = taken * ok.reshape(shape)
    return out


class GridOperators:
    """Transport matrix and lattice collision operator for one (spec, kernel, grid)."""

    def __init__(self, spec, A, grid, h=2e-2, ngl=3):
        if A.factors is None:
            raise ValueError("the lattice collision operator needs a product kernel")
        self.spec, self.A, self.grid = spec, A, grid
        self.h, self.ngl = h, ngl
        n = grid.n
        self.n = n
        self.shape = grid.shape
        self.lat = lattice_axes(grid)
        self.X, self.P = grid.points()
        inner = spec.inner(self.X, self.P, self.P)
        self.mask = ((self.P[:, 0] > 0) & (inner <= 1e-12)).reshape(self.shape)
        self._setup_collision()
        self.T = self._transport_matrix()

    # collision ----------------------------------------------------------------
    def _setup_collision(self):
        n, A = self.n, self.A
        chi_fn, beta_fn, gamma_fn, g_hi = A.factors
        sp_axes = self.grid.axes[:n]
        mesh = np.meshgrid(*sp_axes, indexing="ij")
        Xs = np.stack([m.ravel() for m in mesh], axis=1)
        self.chi = chi_fn(Xs).reshape([len(a) for a in sp_axes] + [1] * n)
        mom = np.meshgrid(*self.grid.axes[n:], indexing="ij")
        r = np.sqrt(sum(m ** 2 for m in mom))
        self.beta = beta_fn(r)[(None,) * n]
        self.gam = gamma_fn(r)[(None,) * n]
        self.dv = float(np.prod([s for s, _, _ in self.lat]))
        self.D = [int(math.ceil(g_hi / s)) + 1 for s, _, _ in self.lat]
        offs = np.meshgrid(*[s * np.arange(-d, d + 1) for (s, _, _), d in zip(self.lat, self.D)],
                           indexing="ij")
        G = gamma_fn(np.sqrt(sum(o ** 2 for o in offs)))
        self.G = G[(None,) * n]
        self.Gamma2 = (self.dv * fftconvolve(G, G, mode="full"))[(None,) * n]
        self.maxes = tuple(range(n, 2 * n))

    def collide(self, U1, U2):
        """Lattice (gain, loss) on the grid for grid functions U1, U2."""
        n = self.n
        k0 = [k for _, k, _ in self.lat]
        M = [m for _, _, m in self.lat]
        v1 = U1 * self.gam
        v2 = U2 * self.gam
        pref = self.chi * self.beta
        Wc = fftconvolve(v1, v2, mode="full", axes=self.maxes)
        corr = fftconvolve(Wc, self.G, mode="full", axes=self.maxes)
        starts = [2 * a - d for a, d in zip(k0, self.D)]
        gain = -pref * self.dv ** 2 * _window(corr, self.maxes, starts, k0, M)
        v2f = np.flip(v2, axis=self.maxes)
        L = fftconvolve(v2f, self.Gamma2, mode="full", axes=self.maxes)
        starts = [-(a + m - 1) - 2 * d for a, m, d in zip(k0, M, self.D)]
        loss = U1 * pref * self.dv * _window(L, self.maxes, starts, k0, M)
        return gain, loss

    def Q(self, U1, U2):
        g, l = self.collide(U1, U2)
        return g + l

    def collision_bound(self):
        """Pointwise bound F with |Q[u, v]| <= F ||u|| ||v|| for the lattice operator."""
        one = np.ones(self.shape)
        g, l = self.collide(one, one)
        return np.abs(g) + np.abs(l)

    # transport ----------------------------------------------------------------
    def _transport_matrix(self):
        n2 = 2 * self.n
        N = int(np.prod(self.shape))
        rows_all = np.nonzero(self.mask.ravel())[0]
        ell_in, ell_out, status = exit_times(self.spec, self.X[rows_all], self.P[rows_all], self.A.K, self.h)
        hit = (status > 0) & (ell_out > ell_in)
        rows_all, ell_in, ell_out = rows_all[hit], ell_in[hit], ell_out[hit]
        spacing = min(float(np.min(np.diff(a))) for a in self.grid.axes[: self.n])
        hq = 0.5 * spacing
        axes = self.grid.axes
        strides = np.array([int(np.prod(self.shape[d + 1:])) for d in range(n2)])
        blocks = []
        for c0 in range(0, rows_all.size, ROW_CHUNK):
            rows = rows_all[c0:c0 + ROW_CHUNK]
            pn = np.linalg.norm(self.P[rows], axis=1)
            counts, Xn, Pn, Wn = kernels.flow_nodes(self.spec, self.X[rows], self.P[rows],
                                                    ell_in[c0:c0 + ROW_CHUNK], ell_out[c0:c0 + ROW_CHUNK],
                                                    self.h / pn, hq / pn, self.ngl)
            owner = np.repeat(rows, counts)
            Z = np.concatenate([Xn, Pn], axis=1)
            idx = np.empty((len(Z), n2), dtype=np.int64)
            frac = np.empty((len(Z), n2))
            ok = np.ones(len(Z), dtype=bool)
            for d in range(n2):
                a = axes[d]
                i = np.clip(np.searchsorted(a, Z[:, d], side="right") - 1, 0, len(a) - 2)
                t = (Z[:, d] - a[i]) / (a[i + 1] - a[i])
                ok &= (t >= -1e-12) & (t <= 1 + 1e-12)
                idx[:, d] = i
                frac[:, d] = np.clip(t, 0.0, 1.0)
            owner, idx, frac, Wn = owner[ok], idx[ok], frac[ok], Wn[ok]
            r_parts, c_parts, v_parts = [], [], []
            for corner in range(2 ** n2):
                bits = [(corner >> d) & 1 for d in range(n2)]
                w = Wn.copy()
                col = np.zeros(len(w), dtype=np.int64)
                for d, b in enumerate(bits):
                    w *= frac[:, d] if b else 1.0 - frac[:, d]
                    col += (idx[:, d] + b) * strides[d]
                keep = w > 1e-15 * Wn
                r_parts.append(owner[keep])
                c_parts.append(col[keep])
                v_parts.append(w[keep])
            blocks.append(sparse.coo_matrix((np.concatenate(v_parts),
                                             (np.concatenate(r_parts), np.concatenate(c_parts))),
                                            shape=(N, N)).tocsr())
        T = sparse.csr_matrix((N, N))
        for b in blocks:
            T = T + b
        return T

    def transport(self, S):
        return (self.T @ S.ravel()).reshape(self.shape)

    def vlasov(self, f):
        """Exact Vlasov solution sampled at the grid nodes (zero off the future cone)."""
        if isinstance(f, ZeroDensity) or getattr(f, "_zero", False):
            return np.zeros(self.shape)
        if isinstance(f, LinearCombination):
            # term by term, so that the discrete transport is exactly linear
            return sum(c * self.vlasov(d) for c, d in f.terms)
        u = vlasov_solve(self.spec, f, h=self.h)
        out = np.zeros(int(np.prod(self.shape)))
        m = self.mask.ravel()
        out[m] = u(self.X[m], self.P[m])
        return out.reshape(self.shape)

    def vlasov_constant(self, f):
        """Largest backward crossing length of the spatial support box of f over the grid."""
        m = self.mask.ravel()
        ell_in, ell_out, status = exit_times(self.spec, self.X[m], self.P[m], f.spatial_box, self.h)
        return float(np.max(np.where(status > 0, ell_out - ell_in, 0.0), initial=0.0))


_OPS_CACHE = {}


def grid_operators(spec, A, grid, h=2e-2, ngl=3):
    key = (id(spec), id(A), tuple((a[0], a[-1], len(a)) for a in grid.axes), h, ngl)
    if key not in _OPS_CACHE:
        _OPS_CACHE[key] = GridOperators(spec, A, grid, h, ngl)
    return _OPS_CACHE[key]


@dataclass
class SolveResult:
    u: GridCachedDensity
    values: np.ndarray
    iterations: int
    changes: list
    ratio: float
    residual: float
    norm_f: float
    norm_u: float
    C_A: float
    c_K: float
    c_AK: float
    converged: bool = True
    extra: dict = field(default_factory=dict)

    def diagnostics(self):
        return {"iterations": self.iterations, "changes": [float(c) for c in self.changes],
                "ratio": self.ratio, "residual": self.residual, "norm_f": self.norm_f,
                "norm_u": self.norm_u, "stability": self.norm_u / self.norm_f if self.norm_f else 0.0,
                "C_A": self.C_A, "c_K": self.c_K, "c_AK": self.c_AK, "converged": self.converged}


def stability_constant(C_A, c_K, norm_f):
    """c with ||u|| <= c ||f|| from the smallest root of C_A y^2 - y + c_K ||f|| = 0."""
    if norm_f == 0 or C_A == 0:
        return c_K
    disc = 1.0 - 4.0 * C_A * c_K * norm_f
    if disc < 0:
        return math.inf
    return (1.0 - math.sqrt(disc)) / (2.0 * C_A * norm_f)


def default_max_source_norm(ops, f):
    C_A = float(np.max(ops.transport(ops.collision_bound()), initial=0.0))
    c_K = max(ops.vlasov_constant(f), 1.0)
    return 0.1 / (max(C_A, 1e-300) * c_K)


def boltzmann_solve(spec, A, f, cfg):
    """Picard iteration of the integrated Boltzmann equation on cfg.grid."""
    ops = grid_operators(spec, A, cfg.grid, cfg.h, cfg.ngl)
    norm_f = sup_norm(f, cfg.grid)
    limit = cfg.max_source_norm
    if limit is None and norm_f > 0:
        limit = default_max_source_norm(ops, f)
    if norm_f > 0 and norm_f > limit * (1 + 1e-12):
        raise ValueError(f"source norm {norm_f:.3e} exceeds max_source_norm {limit:.3e}")
    V = ops.vlasov(f)
    u = V.copy()
    changes = []
    converged = False
    for it in range(1, cfg.max_iter + 1):
        un = V + ops.transport(ops.Q(u, u))
        ch = float(np.max(np.abs(un - u), initial=0.0))
        u = un
        changes.append(ch)
        if ch <= cfg.tol:
            converged = True
            break
        if len(changes) >= 4 and changes[-1] > changes[-2] > changes[-3] > changes[-4]:
            raise NoContractionError("Picard change grew for 3 consecutive steps; use a smaller source")
    ratios = [b / a for a, b in zip(changes[:-1], changes[1:]) if a > 0 and b > 0]
    ratio = float(np.median(ratios[-3:])) if ratios else 0.0
    rng = np.random.default_rng(cfg.seed)
    cand = np.nonzero(ops.mask.ravel())[0]
    pick = rng.choice(cand, size=min(cfg.n_validation, cand.size), replace=False)
    resid_full = V + ops.transport(ops.Q(u, u)) - u
    residual = float(np.max(np.abs(resid_full.ravel()[pick]), initial=0.0))
    C_A = float(np.max(ops.transport(ops.collision_bound()), initial=0.0))
    c_K = ops.vlasov_constant(f) if norm_f > 0 else 0.0
    return SolveResult(GridCachedDensity(cfg.grid, u, nonneg=False), u, it, changes, ratio, residual,
                       norm_f, float(np.max(np.abs(u), initial=0.0)), C_A, c_K,
                       stability_constant(C_A, c_K, norm_f), converged)


# ---------------------------------------------------------------------------
# linearizations

class BilinearFlowDensity(PhaseDensity):
    """Backward-flow integral of Q[v1, v2] + Q[v2, v1] evaluated pointwise."""

    def __init__(self, spec, A, v1, v2, rule=None, h=5e-2, ngl=4):
        n = spec.n
        lo = np.concatenate([spec.lo, np.full(n, -np.inf)])
        hi = np.concatenate([spec.hi, np.full(n, np.inf)])
        lo[0] = A.K_lo[0]
        super().__init__(n, lo, hi)
        self.spec, self.A, self.v1, self.v2, self.rule, self.h, self.ngl = spec, A, v1, v2, rule, h, ngl

    def source(self, X, P):
        return (q_full_batch(self.spec, self.A, self.v1, self.v2, X, P, self.rule)
                + q_full_batch(self.spec, self.A, self.v2, self.v1, X, P, self.rule))

    def _eval(self, X, P):
        if self.A.is_zero:
            return np.zeros(len(X))
        return _flow_integral(self.spec, self.A, X, P, self.source, self.h, ngl=self.ngl)


def phi_first(spec, f, h=2e-2):
    return vlasov_solve(spec, f, h)


def phi_second_direct(spec, A, f, h, grid=None, rule=None, step=2e-2, ngl=3):
    """Second derivative of the source-to-solution map at 0 in directions (f, h).

    With a grid the linear transports and the collision term use the same
    discrete operators as boltzmann_solve; without one, the result is a lazy
    pointwise density using exact Vlasov transports and the sigma quadrature.
    """
    if grid is None:
        return BilinearFlowDensity(spec, A, vlasov_solve(spec, f), vlasov_solve(spec, h), rule)
    ops = grid_operators(spec, A, grid, step, ngl)
    vf = ops.vlasov(f)
    vh = ops.vlasov(h)
    w = ops.transport(ops.Q(vf, vh) + ops.Q(vh, vf))
    return GridCachedDensity(grid, w)


def phi_second_polarization(spec, A, f, h, eps, cfg):
    """Mixed second difference of the solution map, divided by eps^2."""
    nf = sup_norm(f, cfg.grid)
    nh = sup_norm(h, cfg.grid)
    if cfg.max_source_norm is not None and eps * (nf + nh) > cfg.max_source_norm * (1 + 1e-12):
        raise ValueError("eps (||f|| + ||h||) exceeds max_source_norm")
    u_fh = boltzmann_solve(spec, A, eps * f + eps * h, cfg).values
    u_f = boltzmann_solve(spec, A, eps * f, cfg).values
    u_h = boltzmann_solve(spec, A, eps * h, cfg).values
    return GridCachedDensity(cfg.grid, (u_fh - u_f - u_h) / eps ** 2)
