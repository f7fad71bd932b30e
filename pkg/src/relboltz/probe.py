"""
The inverse probe: two beams aimed at a target event, the light signal of
their collision read through a lightlike section, singular-support detection
and recovery of earliest observation times.

The signal at a phase point (x, P) is the second-order response
w(x, P) = integral over the backward flow of Q[u1, u2] + Q[u2, u1], with u1,
u2 the transported mollified beams.  Evaluation is batched: the two beams are
cached on a local grid around the region where their support tubes overlap,
and the gain integral is computed separably in the (p', q') chart.
"""
from dataclasses import dataclass, field
import math

import numpy as np
from scipy.optimize import minimize
from scipy.spatial import cKDTree

from . import kernels
from .causal_obs import (CausalDiamond, _fan_directions, observation_time_minus,
                         observation_time_plus, time_separation)
from .collision import CollisionKernel, collision_terms, default_rule, smooth_step
from .errors import CausticError, DomainError, EmptyDetection, TangencyError
from .geodesics import (TRANSVERSALITY_THRESHOLD, Worldline, exit_times, flow_to, flowout,
                        geodesic_flow, null_connect, null_vector)
from .kinetic_core import MollifiedSource, SourcePatch, mollified_delta_source, vlasov_solve

KAPPA = 0.5
BEAM_GL = 4


@dataclass
class ProbeScenario:
    """Geometry and discretisation of one probe experiment."""

    spec: object
    w: np.ndarray
    a_second: np.ndarray
    s_minus: float = -0.9
    s_plus: float = 0.9
    t_source: float = None
    delta: float = 0.05
    p_scale: float = 1.0
    section_scale: float = 0.5
    eps: float = 0.02
    R: float = 0.2
    detector_half_width: float = 0.2
    detector_points: int = 17
    quad_nodes: int = 4
    cache_spacing: float = 1 / 3  # in units of eps

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=float)
        self.a_second = np.asarray(self.a_second, dtype=float)

    def with_eps(self, eps):
        d = dict(self.__dict__)
        d["eps"] = eps
        return ProbeScenario(**d)


@dataclass
class ProbePlan:
    scenario: ProbeScenario
    leg_hat: object
    leg_second: object
    x_hat: np.ndarray
    p_hat: np.ndarray
    y_hat: np.ndarray
    q_hat: np.ndarray
    S1: SourcePatch
    S2: SourcePatch
    z1: np.ndarray
    intersection_residual: float
    transversality: float
    gamma: object
    e: np.ndarray
    gamma_dot: np.ndarray
    axes: tuple
    a_vals: np.ndarray
    b_vals: np.ndarray
    points: np.ndarray
    section: np.ndarray
    cache: dict = field(default_factory=dict, repr=False)

    @property
    def spacing(self):
        return float(self.a_vals[1] - self.a_vals[0]), float(self.b_vals[1] - self.b_vals[0])


# ---------------------------------------------------------------------------
# geometry helpers

def flow_to_time(spec, x, p, t, h=1e-3):
    """Phase point where the geodesic through (x, p) has time coordinate t."""
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    s = (t - x[0]) / p[0]
    for _ in range(50):
        xs, ps = flow_to(spec, x, p, s, h)
        ds = (t - xs[0]) / ps[0]
        s += ds
        if abs(ds) < 1e-15 * max(1.0, abs(s)):
            break
    return flow_to(spec, x, p, s, h)


def tilt(spec, x, p_null, delta, scale):
    """Future timelike vector obtained by tilting a null vector towards the time axis."""
    p = np.asarray(p_null, dtype=float) / p_null[0]
    q = np.concatenate([[1.0], math.tan(math.pi / 4 - delta) * p[1:]])
    g = spec.metric_batch(np.asarray(x)[None])[0]
    if not q @ g @ q < 0:
        raise ValueError("tilted vector is not timelike")
    return scale * q / np.linalg.norm(q)


def _closest_approach(spec, a, pa, b, pb, span, h=1e-3):
    """Closest approach of two geodesics over flow times in span."""
    def pos(x, p, s):
        return flow_to(spec, x, p, s, h)[0]

    res = minimize(lambda v: float(np.sum((pos(a, pa, v[0]) - pos(b, pb, v[1])) ** 2)),
                   np.array(span, dtype=float), method="Nelder-Mead",
                   options={"xatol": 1e-12, "fatol": 1e-28, "maxiter": 4000})
    xa = pos(a, pa, res.x[0])
    xb = pos(b, pb, res.x[1])
    return 0.5 * (xa + xb), float(np.linalg.norm(xa - xb)), res.x


def _complement(v, k):
    """k orthonormal vectors Euclidean-orthogonal to v."""
    m = len(v)
    Q, _ = np.linalg.qr(np.column_stack([v / np.linalg.norm(v), np.eye(m)]))
    return Q[:, 1:1 + k].T


def lightlike_section(spec, gamma_dot, e, points, h=1e-3):
    """Null congruence through the detector points containing the geodesic with velocity gamma_dot at e.

    Congruence members start on the time slice through e with the spatial
    direction of gamma_dot; each detector point is matched to its member by a
    Newton solve for the starting position.
    """
    e = np.asarray(e, dtype=float)
    gamma_dot = np.asarray(gamma_dot, dtype=float)
    pts = np.atleast_2d(points)
    n = spec.n
    d = gamma_dot[1:] / np.linalg.norm(gamma_dot[1:])
    scale = gamma_dot[0]

    def member(y):
        y = np.concatenate([[e[0]], y])
        if np.allclose(y, e, rtol=0, atol=0):
            return y, gamma_dot.copy()
        return y, scale * null_vector(spec, y, d)

    if spec.is_flat:
        P = np.empty_like(pts)
        for i, x in enumerate(pts):
            if np.allclose(x, e, rtol=0, atol=0):
                P[i] = gamma_dot
            else:
                P[i] = scale * null_vector(spec, x, d)
        return P
    P = np.empty_like(pts)
    starts = []
    for i, x in enumerate(pts):
        if np.allclose(x, e, rtol=0, atol=0):
            P[i] = gamma_dot
            starts.append(e[1:])
            continue
        y = x[1:] - (x[0] - e[0]) * gamma_dot[1:] / gamma_dot[0]
        for _ in range(30):
            y0, p0 = member(y)
            xt, pt = flow_to_time(spec, y0, p0, x[0], h)
            r = xt[1:] - x[1:]
            J = np.empty((n - 1, n - 1))
            step = 1e-6
            for j in range(n - 1):
                dy = np.zeros(n - 1)
                dy[j] = step
                yj0, pj0 = member(y + dy)
                J[:, j] = (flow_to_time(spec, yj0, pj0, x[0], h)[0][1:] - xt[1:]) / step
            if abs(np.linalg.det(J)) < 1e-8:
                raise CausticError("congruence focuses inside the detector region; use a smaller region")
            dy = np.linalg.solve(J, -r)
            y = y + dy
            if np.linalg.norm(dy) < 1e-13:
                break
        y0, p0 = member(y)
        P[i] = flow_to_time(spec, y0, p0, x[0], h)[1]
        starts.append(y)
    starts = np.array(starts)
    if len(starts) > 1:
        dmin = cKDTree(starts).query(starts, k=2)[0][:, 1]
        if np.any(dmin < 1e-9):
            raise CausticError("two detector points share a congruence member")
    return P


def detector_plane(gamma_dot, e, half_width, points):
    """Grid on the plane through e spanned by gamma_dot and a transverse spatial direction."""
    n = len(e)
    u1 = gamma_dot / np.linalg.norm(gamma_dot)
    d = gamma_dot[1:]
    u2s = _complement(d, 1)[0]
    u2 = np.concatenate([[0.0], u2s])
    vals = np.linspace(-half_width, half_width, points)
    A, B = np.meshgrid(vals, vals, indexing="xy")
    P = e + A[..., None] * u1 + B[..., None] * u2
    return (u1, u2), vals, vals.copy(), P


# ---------------------------------------------------------------------------
# plan

def build_probe_plan(sc):
    """Sources, predicted interaction, return geodesic and detector for a scenario."""
    spec = sc.spec
    n = spec.n
    w = sc.w
    diamond = CausalDiamond(spec, sc.s_minus, sc.s_plus)
    if not diamond.contains(w):
        raise DomainError("target lies outside the causal diamond")
    a_hat = np.zeros(n - 1)
    if np.allclose(sc.a_second, a_hat):
        raise TangencyError("both legs start on the same observer and coincide")
    mu_hat = Worldline.coordinate(a_hat)
    mu_2 = Worldline.coordinate(sc.a_second)
    legs = []
    for mu in (mu_hat, mu_2):
        s = observation_time_minus(spec, mu, w)
        x = mu(s)
        # the leg start can only sit on the target's own time line if w lies on the observer
        if np.linalg.norm(x[1:] - w[1:]) < 1e-9:
            raise TangencyError("target lies on an observer curve; the leg degenerates")
        target = Worldline.coordinate(w[1:], (x[0], spec.hi[0]))
        legs.append((x, null_connect(spec, x, target)))
    d1 = legs[0][1].p / np.linalg.norm(legs[0][1].p)
    d2 = legs[1][1].p / np.linalg.norm(legs[1][1].p)
    if np.linalg.norm(d1 - d2) < 1e-8:
        raise TangencyError("the two legs are tangent to one geodesic")
    t_src = sc.t_source if sc.t_source is not None else max(legs[0][0][0], legs[1][0][0])
    # arrival velocities at w of the null legs, tilted into the cone
    vel = []
    for x, conn in legs:
        xs, ps = flow_to_time(spec, x, conn.p, w[0])
        vel.append(tilt(spec, w, ps, sc.delta, sc.p_scale))
    x_hat, p_hat = flow_to_time(spec, w, vel[0], t_src)
    y_hat, q_hat = flow_to_time(spec, w, vel[1], t_src)
    if np.linalg.norm(p_hat / np.linalg.norm(p_hat) - q_hat / np.linalg.norm(q_hat)) < 1e-10:
        raise TangencyError("source vectors are tangent to one geodesic")
    S2 = SourcePatch(x_hat, p_hat, sc.eps, sc.R)
    frame_sp = _complement(q_hat[1:], n - 2)
    frame = np.zeros((n - 2, 2 * n))
    frame[:, 1:n] = frame_sp
    S1 = SourcePatch(y_hat, q_hat, sc.eps, sc.R, frame)
    S1.validate(spec)
    S2.validate(spec)
    span = ((w[0] - t_src) / p_hat[0], (w[0] - t_src) / q_hat[0])
    z1, resid, times = _closest_approach(spec, x_hat, p_hat, y_hat, q_hat, span)
    if not diamond.contains(z1):
        raise DomainError("predicted interaction lies outside the causal diamond")
    fo = flowout(spec, S1, (0.0, times[1] * 1.2), n_sigma=9, h=min(1e-2, times[1] / 20))
    crossing = flow_to(spec, x_hat, p_hat, times[0])[1]
    sv = float(fo.transversality([z1], [crossing], TRANSVERSALITY_THRESHOLD)[0])
    # optimal return geodesic to the distinguished observer
    back = Worldline.coordinate(a_hat, (z1[0], 1.0))
    gamma = null_connect(spec, z1, back)
    e = gamma.event
    gdot = sc.section_scale * gamma.path.P[-1] / gamma.path.P[-1][0]
    axes, a_vals, b_vals, pts = detector_plane(gdot, e, sc.detector_half_width, sc.detector_points)
    section = lightlike_section(spec, gdot, e, pts.reshape(-1, n)).reshape(pts.shape)
    return ProbePlan(sc, legs[0][1], legs[1][1], x_hat, p_hat, y_hat, q_hat, S1, S2, z1, resid, sv,
                     gamma, e, gdot, axes, a_vals, b_vals, pts, section)


def default_probe_kernel(spec, plan, half=0.15, margin=0.1, r0=0.2, r1=0.5, gamma_radii=(0.5, 3.0)):
    """Builtin kernel centred on the predicted interaction point."""
    from .collision import builtin_kernel
    z = plan.z1
    return builtin_kernel(spec, (z - half, z + half), r0, r1, margin, gamma_radii)


def localized_kernel(A, z, radius):
    """A multiplied by a smooth cutoff vanishing within radius of z (1 beyond twice radius)."""
    z = np.asarray(z, dtype=float)

    def fn(X, P, Q, Pp, Qp):
        r = np.linalg.norm(X - z, axis=1)
        return A(X, P, Q, Pp, Qp) * smooth_step(r / radius - 1.0)

    return CollisionKernel(A.n, fn, A.K_lo, A.K_hi, A.r0, A.r1, A.mom_lo, A.mom_hi, A.C,
                           A.W_lo, A.W_hi, A.gamma_radii)


# ---------------------------------------------------------------------------
# beams and their overlap

@dataclass
class Beam:
    source: SourcePatch
    density: MollifiedSource
    u: object
    centres: np.ndarray
    radii: np.ndarray
    mom_lo: np.ndarray = None
    mom_hi: np.ndarray = None


def _corner_offsets(n, eps):
    bits = (np.arange(2 ** (2 * n))[:, None] >> np.arange(2 * n)) & 1
    return eps * (2.0 * bits - 1.0)


def _at(path, s):
    idx = np.clip(np.searchsorted(path.s, s - 1e-12), 0, len(path.s) - 1)
    return path.X[idx], path.P[idx]


def _beam(spec, S, s_max, step):
    """Transported beam with centre samples and support-tube half-widths from corner geodesics.

    The per-axis half-width at flow time s bounds the offset between the
    centre geodesic and the images of the corners of the source's eps-box.
    """
    n = spec.n
    dens = mollified_delta_source(S, spec)
    u = vlasov_solve(spec, dens, h=min(0.02, S.eps), ngl=BEAM_GL)
    s = np.arange(0.0, s_max + step, step)
    h = min(step, 1e-2)
    z0 = S.centre
    ref = _at(geodesic_flow(spec, z0[:n], z0[n:], s[-1], h), s)[0]
    rad = np.zeros((len(s), n))
    mom = []
    for c in z0 + _corner_offsets(n, S.eps):
        X, P = _at(geodesic_flow(spec, c[:n], c[n:], s[-1], h), s)
        rad = np.maximum(rad, np.abs(X - ref))
        mom.append(P)
    rad = 1.05 * rad + 1e-12
    sig = S.sigma_samples(step) if S.k else np.zeros((1, 0))
    centres = np.concatenate([_at(geodesic_flow(spec, S.point(sg)[:n], S.point(sg)[n:], s[-1], h), s)[0]
                              for sg in sig])
    if spec.is_flat:
        mlo, mhi = dens.momentum_box
    else:
        mom = np.concatenate(mom)
        pad = 0.1 * S.eps
        mlo, mhi = mom.min(axis=0) - pad, mom.max(axis=0) + pad
    return Beam(S, dens, u, centres, np.tile(rad, (len(sig), 1)), np.asarray(mlo), np.asarray(mhi))


def _tube_hits(beam, Y):
    """Boolean mask of points Y inside the beam's support tube."""
    tree = cKDTree(beam.centres)
    r = float(beam.radii.max())
    out = np.zeros(len(Y), dtype=bool)
    for i, idx in enumerate(tree.query_ball_point(Y, r, p=np.inf)):
        if idx:
            idx = np.asarray(idx)
            out[i] = np.any(np.all(np.abs(beam.centres[idx] - Y[i]) <= beam.radii[idx], axis=1))
    return out


def interaction_region(A, b1, b2):
    """Box containing every point where both beam tubes (and the kernel support) overlap."""
    t1 = cKDTree(b1.centres)
    r = float(b1.radii.max() + b2.radii.max())
    near1 = np.zeros(len(b1.centres), dtype=bool)
    near2 = np.zeros(len(b2.centres), dtype=bool)
    for j, idx in enumerate(t1.query_ball_point(b2.centres, r, p=np.inf)):
        if not idx:
            continue
        idx = np.asarray(idx)
        ok = np.all(np.abs(b1.centres[idx] - b2.centres[j]) <= b1.radii[idx] + b2.radii[j], axis=1)
        if ok.any():
            near2[j] = True
            near1[idx[ok]] = True
    if not near1.any():
        return None
    lo = np.maximum((b2.centres - b2.radii)[near2].min(axis=0), (b1.centres - b1.radii)[near1].min(axis=0))
    hi = np.minimum((b2.centres + b2.radii)[near2].max(axis=0), (b1.centres + b1.radii)[near1].max(axis=0))
    lo = np.maximum(lo, A.K_lo)
    hi = np.minimum(hi, A.K_hi)
    if np.any(lo >= hi):
        return None
    return lo, hi


@dataclass
class BeamCache:
    """Beam values on a spatial grid at fixed momentum quadrature nodes."""

    axes: list
    mom_nodes: np.ndarray
    mom_weights: np.ndarray
    values: np.ndarray  # shape grid + (M,)

    def interpolate(self, Y):
        """Multilinear interpolation at base points Y -> (len(Y), M); zero outside."""
        n = len(self.axes)
        out = np.zeros((len(Y), self.values.shape[-1]))
        idx = []
        frac = []
        ok = np.ones(len(Y), dtype=bool)
        for d, a in enumerate(self.axes):
            i = np.clip(np.searchsorted(a, Y[:, d], side="right") - 1, 0, len(a) - 2)
            t = (Y[:, d] - a[i]) / (a[i + 1] - a[i])
            ok &= (t >= 0) & (t <= 1)
            idx.append(i)
            frac.append(np.clip(t, 0, 1))
        for corner in range(2 ** n):
            w = np.ones(len(Y))
            sel = []
            for d in range(n):
                b = (corner >> d) & 1
                w = w * (frac[d] if b else 1 - frac[d])
                sel.append(idx[d] + b)
            out += w[:, None] * self.values[tuple(sel)]
        out[~ok] = 0.0
        return out


def _gl_box(lo, hi, N):
    x, w = np.polynomial.legendre.leggauss(N)
    axes = [l + 0.5 * (x + 1) * (h - l) for l, h in zip(lo, hi)]
    wts = [0.5 * (h - l) * w for l, h in zip(lo, hi)]
    mesh = np.meshgrid(*axes, indexing="ij")
    nodes = np.stack([m.ravel() for m in mesh], axis=1)
    W = np.prod(np.meshgrid(*wts, indexing="ij"), axis=0).ravel()
    return nodes, W


def _cache_grid(box, spacing):
    lo, hi = box
    axes = [np.linspace(l, h, max(2, int(math.ceil((h - l) / spacing)) + 1)) for l, h in zip(lo, hi)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return axes, np.stack([m.ravel() for m in mesh], axis=1)


def _cache_beam(beam, axes, Y, live, N, chunk=200_000):
    """Beam values at the live grid points and GL momentum nodes; zero elsewhere."""
    nodes, W = _gl_box(beam.mom_lo, beam.mom_hi, N)
    M = len(W)
    vals = np.zeros((len(Y), M))
    idx = np.nonzero(live)[0]
    per = max(1, chunk // M)
    for s0 in range(0, len(idx), per):
        sel = idx[s0:s0 + per]
        X = np.repeat(Y[sel], M, axis=0)
        P = np.tile(nodes, (len(sel), 1))
        vals[sel] = beam.u(X, P).reshape(len(sel), M)
    return BeamCache(axes, nodes, W, vals.reshape(tuple(len(a) for a in axes) + (M,)))


def _padded(beam, pad):
    return Beam(beam.source, beam.density, beam.u, beam.centres, beam.radii + np.asarray(pad),
                beam.mom_lo, beam.mom_hi)


@dataclass
class ProbeState:
    A: object
    beams: tuple
    region: tuple
    caches: tuple
    r_int: float


def prepare(spec, A, plan):
    """Transported beams, interaction region and beam caches for a plan and kernel."""
    key = id(A)
    if key in plan.cache:
        return plan.cache[key]
    sc = plan.scenario
    # flow far enough to pass the kernel support on both beams
    span = float(A.K_hi[0]) - min(plan.x_hat[0], plan.y_hat[0])
    s_max = span / min(plan.p_hat[0], plan.q_hat[0])
    step = 0.5 * sc.eps
    b1 = _beam(spec, plan.S1, s_max, step)
    b2 = _beam(spec, plan.S2, s_max, step)
    region = interaction_region(A, b1, b2)
    caches = None
    r_int = 0.0
    if region is not None:
        axes, Y = _cache_grid(region, sc.cache_spacing * sc.eps)
        # a cell corner is live when some point within one cell is in both tubes
        pad = [a[1] - a[0] for a in axes]
        live = _tube_hits(_padded(b1, pad), Y) & _tube_hits(_padded(b2, pad), Y)
        caches = (_cache_beam(b1, axes, Y, live, sc.quad_nodes),
                  _cache_beam(b2, axes, Y, live, sc.quad_nodes))
        corners = np.array(np.meshgrid(*zip(*region), indexing="ij")).reshape(spec.n, -1).T
        r_int = float(np.max(np.linalg.norm(corners - plan.z1, axis=1)))
    st = ProbeState(A, (b1, b2), region, caches, r_int)
    plan.cache[key] = st
    return st


def _gain_at_nodes(A, Y, P, V1, V2, c1, c2, chunk=400_000):
    """-sum_ij V1_i V2_j [A(y, P, p'_i + q'_j - P, p'_i, q'_j) + A(y, P, ., q'_j, p'_i)]."""
    M1, M2 = V1.shape[1], V2.shape[1]
    out = np.zeros(len(Y))
    if A.factors is not None:
        # product kernel chi(y) beta(|P|) g(|q|) g(|p'|) g(|q'|), symmetric in (p', q')
        chi, beta, gamma, _ = A.factors
        pre = -2.0 * chi(Y) * beta(np.linalg.norm(P, axis=1))
        G1 = V1 * gamma(np.linalg.norm(c1.mom_nodes, axis=1))
        G2 = V2 * gamma(np.linalg.norm(c2.mom_nodes, axis=1))
        S = c1.mom_nodes[:, None, :] + c2.mom_nodes[None, :, :]
        per = max(1, chunk // (M1 * M2))
        for s0 in range(0, len(Y), per):
            sl = slice(s0, s0 + per)
            Gq = gamma(np.linalg.norm(S[None] - P[sl, None, None, :], axis=-1).ravel()).reshape(-1, M1, M2)
            out[sl] = pre[sl] * np.einsum("ki,kij,kj->k", G1[sl], Gq, G2[sl])
        return out
    per = max(1, chunk // (M1 * M2))
    a = c1.mom_nodes
    b = c2.mom_nodes
    pa = np.repeat(a, M2, axis=0)
    qb = np.tile(b, (M1, 1))
    for s0 in range(0, len(Y), per):
        sl = slice(s0, s0 + per)
        k = len(Y[sl])
        Yr = np.repeat(Y[sl], M1 * M2, axis=0)
        Pr = np.repeat(P[sl], M1 * M2, axis=0)
        pp = np.tile(pa, (k, 1))
        qp = np.tile(qb, (k, 1))
        q = pp + qp - Pr
        K = A(Yr, Pr, q, pp, qp) + A(Yr, Pr, q, qp, pp)
        prod = (V1[sl][:, :, None] * V2[sl][:, None, :]).reshape(k, -1)
        out[sl] = -np.sum(prod * K.reshape(k, -1), axis=1)
    return out


def signal(spec, A, plan, X, P, ngl=4, with_loss=True, swap=False):
    """Second-order response w(x, P) at a batch of phase points, plus diagnostics.

    ``swap`` exchanges the roles of the two beams; the response is symmetric.
    """
    X = np.atleast_2d(X)
    P = np.atleast_2d(P)
    out = np.zeros(len(X))
    info = {"loss_max": 0.0, "active_rays": 0, "nodes": 0}
    if A.is_zero:
        return out, info
    st = prepare(spec, A, plan)
    if st.region is None:
        return out, info
    sc = plan.scenario
    lo, hi = st.region
    step = 0.25 * sc.eps
    ell_in, ell_out, status = exit_times(spec, X, P, (lo, hi), step)
    hit = np.nonzero(((status == 1) | (status == 2)) & (ell_out > ell_in))[0]
    info["active_rays"] = int(hit.size)
    if hit.size == 0:
        return out, info
    pn = np.linalg.norm(P[hit], axis=1)
    counts, Yn, Pn, Wn = kernels.flow_nodes(spec, X[hit], P[hit], ell_in[hit], ell_out[hit],
                                            step / pn, 0.5 * sc.eps / pn, ngl)
    owner = np.repeat(np.arange(hit.size), counts)
    c1, c2 = st.caches[::-1] if swap else st.caches
    V1 = c1.interpolate(Yn) * c1.mom_weights
    V2 = c2.interpolate(Yn) * c2.mom_weights
    act = np.nonzero(np.any(V1 != 0, axis=1) & np.any(V2 != 0, axis=1))[0]
    info["nodes"] = int(act.size)
    vals = np.zeros(len(Yn))
    if act.size:
        vals[act] = _gain_at_nodes(A, Yn[act], Pn[act], V1[act], V2[act], c1, c2)
    if with_loss:
        u1, u2 = (b.u for b in (st.beams[::-1] if swap else st.beams))
        pre1 = u1(Yn, Pn)
        pre2 = u2(Yn, Pn)
        live = np.nonzero((pre1 != 0) | (pre2 != 0))[0]
        if live.size:
            rule = default_rule(A, 4)
            l12 = collision_terms(spec, A, u1, u2, Yn[live], Pn[live], rule)[1]
            l21 = collision_terms(spec, A, u2, u1, Yn[live], Pn[live], rule)[1]
            vals[live] += l12 + l21
            info["loss_max"] = float(np.max(np.abs(l12 + l21), initial=0.0))
    out[hit] = np.bincount(owner, weights=vals * Wn, minlength=hit.size)
    return out, info


@dataclass
class Measurement:
    values: np.ndarray
    a_vals: np.ndarray
    b_vals: np.ndarray
    points: np.ndarray
    spacing: tuple
    meta: dict = field(default_factory=dict)

    def rows(self):
        n = self.points.shape[-1]
        return np.column_stack([self.points.reshape(-1, n), self.values.ravel()])


def measure(spec, A, plan, swap=False):
    """Second-order response on the detector grid through the lightlike section."""
    n = spec.n
    X = plan.points.reshape(-1, n)
    P = plan.section.reshape(-1, n)
    vals, info = signal(spec, A, plan, X, P, swap=swap)
    st = plan.cache.get(id(A))
    meta = dict(info, eps=plan.scenario.eps, R=plan.scenario.R,
                r_int=st.r_int if st is not None else 0.0,
                region=[list(map(float, r)) for r in st.region] if st is not None and st.region else None)
    return Measurement(vals.reshape(plan.points.shape[:-1]), plan.a_vals, plan.b_vals, plan.points,
                       plan.spacing, meta)


def loss_on_section(spec, A, plan, rule=None):
    """Q_loss of both beam orderings at every detector point through the section."""
    st = prepare(spec, A, plan)
    n = spec.n
    X = plan.points.reshape(-1, n)
    P = plan.section.reshape(-1, n)
    u1, u2 = st.beams[0].u, st.beams[1].u
    rule = rule or default_rule(A, 4)
    l12 = collision_terms(spec, A, u1, u2, X, P, rule)[1]
    l21 = collision_terms(spec, A, u2, u1, X, P, rule)[1]
    return l12, l21


# ---------------------------------------------------------------------------
# detection and recovery

def laplacian(S):
    L = np.zeros_like(S)
    L[1:-1, 1:-1] = S[2:, 1:-1] + S[:-2, 1:-1] + S[1:-1, 2:] + S[1:-1, :-2] - 4 * S[1:-1, 1:-1]
    return L


def detect_singular_support(values, kappa=KAPPA):
    """Interior cells where the discrete Laplacian magnitude exceeds kappa times max |values|."""
    S = np.asarray(values.values if isinstance(values, Measurement) else values, dtype=float)
    if min(S.shape) < 17:
        raise ValueError("detector grid needs at least 16 cells per axis")
    peak = float(np.max(np.abs(S)))
    if peak == 0.0:
        raise EmptyDetection("measurement is identically zero")
    L = laplacian(S)
    return np.argwhere(np.abs(L) > kappa * peak)


def predicted_ridge(spec, plan, extend=1.0, samples=400):
    """Plane coordinates (a, b) of the return geodesic near the detector, with normal offsets."""
    n = spec.n
    path = geodesic_flow(spec, plan.e, plan.gamma_dot, extend, extend / samples)
    back = geodesic_flow(spec, plan.e, -plan.gamma_dot, extend, extend / samples)
    X = np.concatenate([back.X[::-1], path.X[1:]])
    u1, u2 = plan.axes
    D = X - plan.e
    a = D @ u1
    b = D @ u2
    normal = np.linalg.norm(D - np.outer(a, u1) - np.outer(b, u2), axis=1)
    return a, b, normal


def ridge_distance_cells(spec, plan, cells, tol_normal=None):
    """Distance in grid cells from each detected cell to the predicted ridge."""
    a, b, normal = predicted_ridge(spec, plan)
    da, db = plan.spacing
    tol = tol_normal if tol_normal is not None else 0.5 * min(da, db)
    keep = normal < tol
    ra, rb = a[keep] / da, b[keep] / db
    ca = plan.a_vals[cells[:, 1]] / da
    cb = plan.b_vals[cells[:, 0]] / db
    d = np.sqrt((ca[:, None] - ra[None]) ** 2 + (cb[:, None] - rb[None]) ** 2)
    return d.min(axis=1)


def ridge_coverage(spec, plan, cells, dilation=2.0):
    """Fraction of predicted ridge samples on the grid lying within ``dilation`` cells of a detection."""
    a, b, normal = predicted_ridge(spec, plan)
    da, db = plan.spacing
    keep = ((normal < 0.5 * min(da, db)) & (np.abs(a) <= plan.a_vals[-1]) & (np.abs(b) <= plan.b_vals[-1]))
    if not keep.any():
        return 0.0
    if len(cells) == 0:
        return 0.0
    ca = plan.a_vals[cells[:, 1]] / da
    cb = plan.b_vals[cells[:, 0]] / db
    ra, rb = a[keep] / da, b[keep] / db
    d = np.sqrt((ra[:, None] - ca[None]) ** 2 + (rb[:, None] - cb[None]) ** 2).min(axis=1)
    return float(np.mean(d <= dilation))


def cone_offsets_cells(plan, cells):
    """| |dx| - dt | relative to z1 at detected cells, in detector cells (flat metrics)."""
    pts = plan.points[cells[:, 0], cells[:, 1]]
    d = pts - plan.z1
    return np.abs(np.linalg.norm(d[:, 1:], axis=1) - d[:, 0]) / min(plan.spacing)


def intersections(spec, A, plan):
    """Overlap clusters of the two beam tubes inside the kernel support, sorted by time.

    Each cluster is reported by the mean of its overlapping centre samples.
    """
    st = prepare(spec, A, plan)
    b1, b2 = st.beams
    tree = cKDTree(b1.centres)
    r = float(b1.radii.max() + b2.radii.max())
    pts = []
    for j, idx in enumerate(tree.query_ball_point(b2.centres, r, p=np.inf)):
        if idx:
            idx = np.asarray(idx)
            ok = np.all(np.abs(b1.centres[idx] - b2.centres[j]) <= b1.radii[idx] + b2.radii[j], axis=1)
            if ok.any():
                pts.append(0.5 * (b1.centres[idx[ok]].mean(axis=0) + b2.centres[j]))
    if not pts:
        return np.zeros((0, spec.n))
    pts = np.array(pts)
    pts = pts[np.all((pts >= A.K_lo) & (pts <= A.K_hi), axis=1)]
    if not len(pts):
        return pts
    # single-linkage clusters at the tube scale
    link = cKDTree(pts).query_pairs(r)
    label = np.arange(len(pts))
    for i, j in sorted(link):
        li, lj = label[i], label[j]
        if li != lj:
            label[label == lj] = li
    out = np.array([pts[label == k].mean(axis=0) for k in np.unique(label)])
    return out[np.argsort(out[:, 0])]


def in_future_of(spec, z, X, tol=0.0):
    """Membership of each row of X in the causal future of the tol-ball around z."""
    X = np.atleast_2d(X)
    out = np.zeros(len(X), dtype=bool)
    for i, x in enumerate(X):
        if spec.is_flat:
            d = x - z
            out[i] = d[0] + tol >= np.linalg.norm(d[1:]) - 1e-12
        else:
            shifted = x.copy()
            shifted[0] += tol + 1e-12
            out[i] = time_separation(spec, z, shifted) > 0
    return out


@dataclass
class Recovery:
    a: np.ndarray
    recovered: float
    truth: float
    delta_steps: float
    detected: int


def null_vectors(spec, X, D):
    """Batched future null vectors with unit time component and spatial directions D."""
    G = spec.metric_batch(X)
    gn = np.einsum("ki,kij,kj->k", D, G[:, 1:, 1:], D)
    c = np.sqrt(-G[:, 0, 0] / gn)
    return np.column_stack([np.ones(len(X)), c[:, None] * D])


def recovery_grid(spec, plan, a, s_vals, thetas):
    """Observer events and section vectors for the (s, direction) detector of one observer.

    For n = 3 the directions are the angles ``thetas``; otherwise ``len(thetas)``
    directions are spread over the sphere.
    """
    mu = Worldline.coordinate(a)
    X = np.array([mu(s) for s in s_vals])
    D = _fan_directions(spec.n - 1, len(thetas))
    if spec.n == 3:
        D = np.stack([np.cos(thetas), np.sin(thetas)], axis=1)
    Xg = np.repeat(X, len(D), axis=0)
    Dg = np.tile(D, (len(X), 1))
    return Xg, plan.scenario.section_scale * null_vectors(spec, Xg, Dg)


def default_recovery_axes():
    """Observer-time samples and arrival angles of the recovery detectors."""
    return np.linspace(0.28, 1.0, 25), np.deg2rad(np.arange(360.0))


def recover_observation_times(spec, A, plan, family, s_vals=None, thetas=None, kappa=KAPPA):
    """Earliest detected arrival per observer compared with the exact observation time."""
    if s_vals is None or thetas is None:
        s_vals, thetas = default_recovery_axes()
    out = []
    ds = float(s_vals[1] - s_vals[0])
    for i in range(len(family)):
        a = family.a_grid[i]
        X, P = recovery_grid(spec, plan, a, s_vals, thetas)
        vals, _ = signal(spec, A, plan, X, P, with_loss=False)
        S = vals.reshape(len(s_vals), len(thetas))
        try:
            cells = detect_singular_support(S, kappa)
        except EmptyDetection:
            cells = np.zeros((0, 2), dtype=int)
        rec = float(s_vals[cells[:, 0]].min()) if len(cells) else 1.0
        truth = observation_time_plus(spec, family.curve(i), plan.scenario.w)
        out.append(Recovery(a.copy(), rec, truth, abs(rec - truth) / ds, len(cells)))
    return out


# ---------------------------------------------------------------------------
# conformal rescaling

def _path_by_time(spec, x, p, T, h):
    path = geodesic_flow(spec, x, p, T, h)
    return path.X


def conformal_consistency_check(spec, spec2, w, directions, T=1.0, h=1e-3):
    """Distance between geodesic paths of two metrics after reparametrising by coordinate time.

    Returns per direction the max spatial distance, the path length and their ratio.
    """
    w = np.asarray(w, dtype=float)
    rows = []
    for p in directions:
        p = np.asarray(p, dtype=float)
        X1 = _path_by_time(spec, w, p, T, h)
        X2 = _path_by_time(spec2, w, p, T, h)
        t_hi = min(X1[-1, 0], X2[-1, 0])
        ts = np.linspace(w[0], t_hi, 200)
        d = 0.0
        for k in range(1, spec.n):
            c1 = np.interp(ts, X1[:, 0], X1[:, k])
            c2 = np.interp(ts, X2[:, 0], X2[:, k])
            d = np.maximum(d, np.abs(c1 - c2))
        length = float(np.sum(np.linalg.norm(np.diff(X1, axis=0), axis=1)))
        dist = float(np.max(d))
        rows.append({"direction": p.tolist(), "residual": dist, "length": length,
                     "residual_per_length": dist / length})
    return {"paths": rows, "max_residual": max(r["residual"] for r in rows),
            "max_residual_per_length": max(r["residual_per_length"] for r in rows)}
