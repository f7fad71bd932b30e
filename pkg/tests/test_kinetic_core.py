import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from relboltz.errors import MollificationError, SourcePatchError
from relboltz.kinetic_core import (AnalyticDensity, GridCachedDensity, PhaseGrid, SourcePatch, ZeroDensity, bump,
                                   bump_source, cutoff, flow_derivative_residual, mollified_delta_source,
                                   mollifier_1d, vlasov_constant, vlasov_solve)
from relboltz.spacetime import diagonal_warped, minkowski


def gl_box(lo, hi, nodes, slices):
    """Composite Gauss-Legendre tensor rule over a box."""
    axes, wts = [], []
    for a, b, m, k in zip(lo, hi, nodes, slices):
        xg, wg = np.polynomial.legendre.leggauss(m)
        e = np.linspace(a, b, k + 1)
        c = 0.5 * (e[1:] + e[:-1])
        w = 0.5 * (e[1:] - e[:-1])
        axes.append((c[:, None] + w[:, None] * xg).ravel())
        wts.append((w[:, None] * wg).ravel())
    mesh = np.meshgrid(*axes, indexing="ij")
    Z = np.stack([m.ravel() for m in mesh], axis=1)
    W = np.prod(np.meshgrid(*wts, indexing="ij"), axis=0).ravel()
    return Z, W


def test_mollifier_has_unit_mass():
    t = np.linspace(-0.05, 0.05, 200001)
    assert np.trapezoid(mollifier_1d(t, 0.05), t) == pytest.approx(1.0, abs=1e-9)


def test_bump_vanishes_at_edge():
    assert bump(np.array([1.0, -1.0, 1.5]))[0] == 0.0
    assert cutoff(0.0, 0.3) == pytest.approx(1.0)


def test_point_source_total_mass(mink2):
    S = SourcePatch([0.0, 0.1], [1.0, 0.2], 0.05, 0.2)
    h = mollified_delta_source(S, mink2)
    Z, W = gl_box(h.lo, h.hi, [20] * 4, [1] * 4)
    assert np.sum(h(Z[:, :2], Z[:, 2:]) * W) == pytest.approx(1.0, abs=1e-4)


def test_source_vanishes_two_widths_away(mink3):
    frame = np.array([[0.0, 1.0, 0.0, 0.0, 0.0, 0.0]])
    S = SourcePatch([0.0, 0.0, 0.0], [1.0, 0.2, 0.0], 0.02, 0.2, frame=frame)
    h = mollified_delta_source(S, mink3)
    z = S.point([0.1])
    off = np.zeros(6)
    off[4] = 0.04
    assert h.evaluate(z[:3] + off[:3], z[3:] + off[3:]) == 0.0
    assert h.evaluate(z[:3], z[3:]) > 0


def test_patch_weak_convergence(mink2):
    frame = np.array([[0.0, 1.0, 0.0, 0.0]])

    def phi(Z):
        return np.cos(Z[:, 0] + 2 * Z[:, 1]) * np.exp(Z[:, 3])

    sg = np.linspace(-0.2, 0.2, 200001)
    pts = np.column_stack([np.zeros_like(sg), 0.1 + sg, np.ones_like(sg), np.full_like(sg, 0.2)])
    exact = np.trapezoid(cutoff(np.abs(sg), 0.2) * phi(pts), sg)
    errs = []
    for eps in (0.04, 0.02):
        S = SourcePatch([0.0, 0.1], [1.0, 0.2], eps, 0.2, frame=frame)
        h = mollified_delta_source(S, mink2)
        Z, W = gl_box(h.lo, h.hi, [16] * 4, [1, 12, 1, 1])
        errs.append(abs(np.sum(h(Z[:, :2], Z[:, 2:]) * phi(Z) * W) - exact))
    assert errs[1] < 1e-4
    assert errs[0] / errs[1] >= 2.0


def test_mollification_wider_than_patch_rejected():
    with pytest.raises(MollificationError):
        mollified_delta_source(SourcePatch([0.0, 0.0], [1.0, 0.0], 0.3, 0.2))


def test_patch_frame_must_be_orthonormal(mink3):
    frame = np.array([[0.0, 2.0, 0.0, 0.0, 0.0, 0.0]])
    with pytest.raises(SourcePatchError):
        mollified_delta_source(SourcePatch([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], 0.02, 0.2, frame=frame), mink3)


def test_patch_must_be_timelike(mink3):
    with pytest.raises(SourcePatchError):
        mollified_delta_source(SourcePatch([0.0, 0.0, 0.0], [1.0, 1.0, 0.0], 0.02, 0.2), mink3)


def test_bump_source_peak():
    f = bump_source([0.0, 0.0], [1.0, 0.0], [0.2, 0.2], [0.1, 0.1], amp=2.0)
    assert f.evaluate([0.0, 0.0], [1.0, 0.0]) == pytest.approx(2.0)
    assert f.sup == 2.0


# Vlasov solution ------------------------------------------------------------------

def slab_source():
    p0 = np.array([1.0, 0.3, -0.2])

    def fn(X, P):
        return np.prod(math.e * bump((P - p0) / 0.1), axis=1)

    lo = np.concatenate([[0.0, -1.0, -1.0], p0 - 0.1])
    hi = np.concatenate([[10.0, 1.0, 1.0], p0 + 0.1])
    return AnalyticDensity(3, fn, lo, hi, nonneg=True), p0


def test_zero_source_gives_zero(mink3):
    u = vlasov_solve(mink3, ZeroDensity(3))
    assert u.evaluate([1.0, 0.0, 0.0], [1.0, 0.0, 0.0]) == 0.0


def test_chord_length_oracle(mink3):
    f, p0 = slab_source()
    u = vlasov_solve(mink3, f)
    x = np.array([2.5, 0.4, 0.1])
    # the backward ray x - s p0 stays in the box while every coordinate is inside
    lo, hi = f.lo[:3], f.hi[:3]
    a = (x - lo) / p0
    b = (x - hi) / p0
    s_in = max(0.0, np.max(np.minimum(a, b)))
    s_out = np.min(np.maximum(a, b))
    assert u.evaluate(x, p0) == pytest.approx(s_out - s_in, abs=1e-4)


def test_linearity(warped3):
    g = bump_source([0.3, 0.0, 0.0], [1.0, 0.2, 0.1], [0.3, 0.4, 0.4], [0.4, 0.4, 0.4])
    X = np.array([[0.5, 0.1, 0.0], [0.8, 0.2, 0.1]])
    P = np.array([[1.0, 0.2, 0.1], [1.1, 0.3, 0.0]])
    base = vlasov_solve(warped3, g)(X, P)
    scaled = vlasov_solve(warped3, 2.5 * g)(X, P)
    assert np.allclose(scaled, 2.5 * base, rtol=1e-13, atol=0)
    assert np.all(base > 0)


@pytest.mark.parametrize("metric", ["flat", "warped"])
def test_flow_derivative_residual_is_second_order(metric):
    spec = minkowski(3) if metric == "flat" else diagonal_warped(3, (1.0, 0.1))
    g = bump_source([0.3, 0.0, 0.0], [1.0, 0.2, 0.1], [0.3, 0.4, 0.4], [0.4, 0.4, 0.4])
    u = vlasov_solve(spec, g)
    hs = np.array([1e-2, 5e-3, 2.5e-3])
    r = [abs(flow_derivative_residual(spec, u, g, [0.35, 0.05, 0.0], [1.0, 0.25, 0.1], h)) for h in hs]
    slope = np.polyfit(np.log(hs), np.log(r), 1)[0]
    assert abs(slope - 2.0) <= 0.2


def test_residual_zero_for_zero_source(mink3):
    u = vlasov_solve(mink3, ZeroDensity(3))
    assert flow_derivative_residual(mink3, u, ZeroDensity(3), [0.5, 0, 0], [1.0, 0.1, 0], 1e-2) == 0.0


def test_residual_zero_far_from_support(mink3):
    g = bump_source([0.3, 0.0, 0.0], [1.0, 0.2, 0.1], [0.3, 0.4, 0.4], [0.4, 0.4, 0.4])
    u = vlasov_solve(mink3, g)
    assert flow_derivative_residual(mink3, u, g, [0.5, 5.0, 0.0], [1.0, 0.1, 0.0], 1e-2) == 0.0


def test_support_propagation(mink3, rng):
    g = bump_source([0.3, 0.0, 0.0], [1.0, 0.2, 0.1], [0.1, 0.2, 0.2], [0.2, 0.2, 0.2])
    u = vlasov_solve(mink3, g)
    X = rng.uniform([-0.5, -1.5, -1.5], [2.5, 1.5, 1.5], (4000, 3))
    P = np.column_stack([rng.uniform(0.7, 1.3, 4000), rng.uniform(-0.5, 0.7, (4000, 2))])
    # backward rays through the spatial box, momenta inside the momentum box
    lo, hi = g.spatial_box
    a = (X - lo) / P
    b = (X - hi) / P
    s_in = np.maximum(0.0, np.max(np.minimum(a, b), axis=1))
    s_out = np.min(np.maximum(a, b), axis=1)
    plo, phi = g.momentum_box
    tube = (s_out >= s_in) & np.all((P >= plo) & (P <= phi), axis=1)
    outside = np.nonzero(~tube)[0][:1000]
    assert outside.size == 1000
    assert np.all(u(X[outside], P[outside]) == 0.0)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 1.2), st.floats(-0.5, 0.5), st.floats(-0.5, 0.5), st.floats(0.8, 1.2),
       st.floats(-0.3, 0.6), st.floats(-0.3, 0.5))
def test_nonnegative_and_bounded(t, x1, x2, p0, p1, p2):
    spec = diagonal_warped(3, (1.0, 0.1))
    g = bump_source([0.3, 0.0, 0.0], [1.0, 0.2, 0.1], [0.3, 0.4, 0.4], [0.4, 0.4, 0.4])
    u = vlasov_solve(spec, g)
    X = np.array([[t, x1, x2]])
    P = np.array([[p0, p1, p2]])
    val = u(X, P)[0]
    assert val >= 0.0
    assert val <= vlasov_constant(spec, g.spatial_box, X, P) * g.sup * (1 + 1e-12)


def test_bound_is_stable_under_momentum_scaling(mink3):
    g = bump_source([0.3, 0.0, 0.0], [1.0, 0.2, 0.1], [0.3, 0.4, 0.4], [0.4, 0.4, 0.4])
    X = np.array([[0.5, 0.1, 0.0]])
    P = np.array([[1.0, 0.2, 0.1]])
    K = g.spatial_box
    c1 = vlasov_constant(mink3, K, X, P)
    c2 = vlasov_constant(mink3, K, X, 2 * P)
    assert c2 == pytest.approx(c1 / 2, rel=1e-8)


def test_source_before_cauchy_slice_rejected(mink3):
    g = bump_source([0.3, 0.0, 0.0], [1.0, 0.2, 0.1], [0.3, 0.4, 0.4], [0.4, 0.4, 0.4])
    with pytest.raises(ValueError):
        vlasov_solve(mink3, g, cauchy_time=0.2)


# grid cache --------------------------------------------------------------------------

def test_grid_cache_reproduces_nodes_and_vanishes_outside():
    grid = PhaseGrid.uniform([0, -1, 0.5, -0.5], [1, 1, 1.5, 0.5], [5, 5, 4, 4])
    g = bump_source([0.5, 0.0], [1.0, 0.0], [0.6, 1.2], [0.6, 0.6])
    c = GridCachedDensity.from_density(grid, g)
    X, P = grid.points()
    assert np.allclose(c(X, P), g(X, P), rtol=0, atol=1e-14)
    assert c.evaluate([2.0, 0.0], [1.0, 0.0]) == 0.0


def test_refined_grid_keeps_coarse_nodes():
    grid = PhaseGrid.uniform([0, 0], [1, 1], [3, 5])
    fine = grid.refined()
    assert fine.shape == (5, 9)
    assert set(grid.axes[1]).issubset(set(fine.axes[1]))
