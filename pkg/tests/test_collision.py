import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from relboltz.collision import (SigmaQuadRule, builtin_kernel, check_admissible, collision_terms, default_rule,
                                l1_norm, lightlike_samples, measure_collision_constant, q_along_flow, q_full,
                                q_full_batch, q_gain, q_loss, radial_l1, separable_gain, sigma_quadrature,
                                smooth_step, zero_kernel)
from relboltz.errors import KernelParamError
from relboltz.kinetic_core import ZeroDensity, bump_source
from relboltz.spacetime import minkowski

W2 = ([0.3, -0.3], [0.7, 0.3])
X2 = np.array([0.5, 0.0])
P2 = np.array([1.0, 0.2])


def midpoint(lo, hi, m):
    axes = [lo[i] + (np.arange(m) + 0.5) * (hi[i] - lo[i]) / m for i in range(len(lo))]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([a.ravel() for a in mesh], axis=1), float(np.prod((hi - lo) / m))


@pytest.fixture(scope="module")
def kernel2():
    return builtin_kernel(minkowski(2), W2, gamma_radii=(0.5, 3.0))


@pytest.fixture(scope="module")
def beams2():
    u1 = bump_source([0.5, 0.0], [1.2, 0.4], [0.5, 0.5], [0.3, 0.3])
    u2 = bump_source([0.5, 0.0], [1.5, -0.5], [0.5, 0.5], [0.3, 0.3])
    return u1, u2


def test_smooth_step_limits():
    assert np.array_equal(smooth_step(np.array([-1.0, 0.0, 1.0, 2.0])), [0.0, 0.0, 1.0, 1.0])
    assert smooth_step(0.5) == pytest.approx(0.5)


def test_radial_l1_of_constant_is_annulus_area():
    val = radial_l1(lambda r: np.ones_like(r), 2, 1.0, 2.0)
    assert val == pytest.approx(np.pi * 3.0, rel=1e-12)


def test_positive_on_lightlike_momenta(mink3):
    A = builtin_kernel(mink3, ([0.4, 0.2, -0.1], [0.6, 0.4, 0.1]))
    rng = np.random.default_rng(3)
    X = np.tile([0.5, 0.3, 0.0], (40, 1))
    P = lightlike_samples(mink3, rng, X, 0.6, 5.0)
    mom = [np.tile([0.0, 1.0, 0.0], (40, 1))] * 3
    assert np.all(A(X, P, *mom) > 0)


def test_small_momentum_has_zero_l1(kernel2):
    rule = default_rule(kernel2)
    p = P2 / np.linalg.norm(P2)
    for lam in (0.0, 0.05, 0.1, 0.199):
        assert l1_norm(kernel2, X2, lam * p, rule) == 0.0
    assert l1_norm(kernel2, X2, 0.6 * p, rule) > 0


def test_zero_outside_spatial_support(kernel2):
    mom = np.array([[0.0, 1.0]])
    assert kernel2(np.array([[2.0, 0.0]]), P2[None], mom, mom, mom)[0] == 0.0


def test_bad_radii_rejected(mink2):
    with pytest.raises(KernelParamError):
        builtin_kernel(mink2, W2, r0=0.5, r1=0.5)


def test_kernel_outside_chart_rejected():
    spec = minkowski(2, chart=([-1.0, -1.0], [1.0, 1.0]))
    with pytest.raises(KernelParamError):
        builtin_kernel(spec, ([0.5, 0.5], [0.9, 0.9]), margin=0.2)


# quadrature --------------------------------------------------------------------------

def test_constant_integrand_gives_box_volumes():
    rule = SigmaQuadRule(2, 4, 5, [-1.0, 0.0], [1.0, 0.5], [0.0, 0.0], [3.0, 2.0])
    assert sigma_quadrature(rule, X2, P2, lambda q, pp, qp: np.ones(len(q))) == pytest.approx(6.0, abs=1e-10)


def test_conservation_exact_in_default_chart():
    rule = SigmaQuadRule(3, 4, 4, -np.ones(3), np.ones(3), -np.ones(3), np.ones(3))
    p = np.array([1.3, 0.1, -0.7])
    q, pp, qp, _ = rule.momenta(p)
    assert np.all(p + q - pp - qp == 0.0)


def test_conservation_in_second_chart():
    rule = SigmaQuadRule(3, 4, 4, -np.ones(3), np.ones(3), -np.ones(3), np.ones(3), chart="pp_qp")
    p = np.array([1.3, 0.1, -0.7])
    q, pp, qp, _ = rule.momenta(p)
    assert np.max(np.abs(p + q - pp - qp)) < 1e-15


def _gauss_cos(qp):
    return np.exp(-np.sum(qp ** 2, axis=1)) * np.cos(qp[:, 0])


def test_quadrature_matches_dense_riemann_sum():
    lo, hi = np.array([-0.5, -0.5]), np.array([0.5, 0.5])
    rule = SigmaQuadRule(2, 12, 12, lo, hi, lo, hi)
    val = sigma_quadrature(rule, X2, P2, lambda q, pp, qp: _gauss_cos(qp))
    A, w = midpoint(lo, hi, 48)
    oracle = sum(_gauss_cos(P2 + a - A).sum() * w * w for a in A)
    assert val == pytest.approx(oracle, abs=1e-4)


def test_node_doubling_self_convergence():
    lo, hi = -np.ones(2), np.ones(2)
    rule = SigmaQuadRule(2, 12, 12, lo, hi, lo, hi)
    a = sigma_quadrature(rule, X2, P2, lambda q, pp, qp: _gauss_cos(qp))
    b = sigma_quadrature(rule.refined(), X2, P2, lambda q, pp, qp: _gauss_cos(qp))
    assert abs(a - b) < 1e-6


# gain and loss ------------------------------------------------------------------------

def test_gain_matches_riemann_oracle(mink2, kernel2, beams2):
    u1, u2 = beams2
    rule = SigmaQuadRule(2, 16, 16, u1.lo[2:], u1.hi[2:], u2.lo[2:], u2.hi[2:], chart="pp_qp")
    val = q_gain(mink2, kernel2, u1, u2, X2, P2, rule)
    PP, w1 = midpoint(u1.lo[2:], u1.hi[2:], 64)
    QP, w2 = midpoint(u2.lo[2:], u2.hi[2:], 64)
    v2 = u2(np.broadcast_to(X2, QP.shape), QP)
    v1 = u1(np.broadcast_to(X2, PP.shape), PP)
    total = 0.0
    for pp, a in zip(PP, v1):
        if a == 0:
            continue
        q = pp + QP - P2
        k = kernel2(np.broadcast_to(X2, q.shape), np.broadcast_to(P2, q.shape), q, np.broadcast_to(pp, q.shape), QP)
        total += a * np.sum(k * v2) * w1 * w2
    assert val != 0
    assert val == pytest.approx(-total, abs=1e-4)


def test_separable_gain_agrees_with_direct(mink2, kernel2, beams2):
    u1, u2 = beams2
    rule = SigmaQuadRule(2, 8, 8, u1.lo[2:], u1.hi[2:], u2.lo[2:], u2.hi[2:], chart="pp_qp")
    X = np.array([X2, [0.45, 0.1]])
    P = np.array([P2, [1.1, -0.1]])
    direct, _ = collision_terms(mink2, kernel2, u1, u2, X, P, rule)
    assert np.allclose(separable_gain(mink2, kernel2, u1, u2, X, P, rule), direct, rtol=1e-12, atol=1e-16)


def test_disjoint_supports_give_zero_gain(mink2, kernel2):
    u1 = bump_source([0.5, -0.6], [1.2, 0.4], [0.5, 0.2], [0.3, 0.3])
    u2 = bump_source([0.5, 0.6], [1.5, -0.5], [0.5, 0.2], [0.3, 0.3])
    assert q_gain(mink2, kernel2, u1, u2, [0.5, 0.0], P2) == 0.0


def test_zero_kernel_gives_zero(mink2, beams2):
    u1, u2 = beams2
    assert q_full(mink2, zero_kernel(2), u1, u2, X2, P2) == 0.0


def test_loss_vanishes_without_prefactor(mink2, kernel2, beams2):
    _, u2 = beams2
    u1 = bump_source([0.5, 0.0], [1.6, 0.4], [0.5, 0.5], [0.3, 0.3])
    # u1 vanishes at momentum P2, whatever u2 is
    assert u1.evaluate(X2, P2) == 0.0
    assert q_loss(mink2, kernel2, u1, u2, X2, P2) == 0.0


def test_loss_vanishes_on_lightlike_momenta(mink2, kernel2):
    u1 = bump_source([0.5, 0.0], [1.5, 0.2], [0.5, 0.5], [0.3, 0.3])
    u2 = bump_source([0.5, 0.0], [1.5, -0.2], [0.5, 0.5], [0.3, 0.3])
    for p in ([1.0, 1.0], [1.4, 1.4], [1.6, -1.6]):
        assert q_loss(mink2, kernel2, u1, u2, X2, np.array(p)) == 0.0


def test_loss_nonzero_inside_timelike_support(mink2, kernel2):
    u1 = bump_source([0.5, 0.0], [1.5, 0.2], [0.5, 0.5], [0.3, 0.3])
    u2 = bump_source([0.5, 0.0], [1.0, 0.0], [0.5, 0.5], [1.0, 1.0])
    assert q_loss(mink2, kernel2, u1, u2, X2, np.array([1.5, 0.2])) > 0


@settings(max_examples=10, deadline=None)
@given(st.floats(-2.0, 2.0), st.floats(-2.0, 2.0))
def test_bilinearity(a, b):
    spec = minkowski(2)
    A = builtin_kernel(spec, W2, gamma_radii=(0.5, 3.0))
    u = bump_source([0.5, 0.0], [1.2, 0.4], [0.5, 0.5], [0.6, 0.6])
    v = bump_source([0.5, 0.1], [1.3, 0.0], [0.5, 0.5], [0.6, 0.6])
    w = bump_source([0.5, 0.0], [1.5, -0.3], [0.5, 0.5], [0.6, 0.6])
    rule = default_rule(A, N=5)
    X = np.array([X2, [0.55, 0.05]])
    P = np.array([[1.3, 0.2], [1.2, 0.0]])
    lhs = q_full_batch(spec, A, a * u + b * v, w, X, P, rule)
    rhs = a * q_full_batch(spec, A, u, w, X, P, rule) + b * q_full_batch(spec, A, v, w, X, P, rule)
    assert np.max(np.abs(lhs - rhs)) < 1e-10
    lhs = q_full_batch(spec, A, w, a * u + b * v, X, P, rule)
    rhs = a * q_full_batch(spec, A, w, u, X, P, rule) + b * q_full_batch(spec, A, w, v, X, P, rule)
    assert np.max(np.abs(lhs - rhs)) < 1e-10


# along the flow ----------------------------------------------------------------------------

def test_flow_integral_of_zero_density(mink2, kernel2, beams2):
    _, u2 = beams2
    assert q_along_flow(mink2, kernel2, ZeroDensity(2), u2, [1.0, 0.0], P2) == 0.0


def test_flow_integral_within_collision_bound(mink2, kernel2):
    rule = default_rule(kernel2, N=5)
    C_A = measure_collision_constant(mink2, kernel2, rule, n_samples=50, seed=1)
    u = bump_source([0.4, 0.0], [1.2, 0.3], [0.4, 0.5], [0.6, 0.6])
    v = bump_source([0.4, 0.0], [1.2, -0.3], [0.4, 0.5], [0.6, 0.6])
    x = np.array([1.2, 0.1])
    base = np.array([1.0, 0.1])
    vals = [q_along_flow(mink2, kernel2, u, v, x, lam * base, rule) for lam in (0.25, 0.5, 1.0, 2.0, 4.0)]
    assert any(v != 0 for v in vals)
    assert max(abs(v) for v in vals) <= C_A * u.sup * v.sup


# admissibility report ----------------------------------------------------------------------

def test_builtin_kernel_is_admissible(mink2, kernel2):
    rep = check_admissible(mink2, kernel2, default_rule(kernel2, N=5), n_samples=60, seed=2)
    assert rep["passed"], rep
    assert rep["cond4_max_l1"] <= kernel2.C
