import numpy as np
import pytest

from relboltz import probe
from relboltz.causal_obs import ObserverFamily
from relboltz.collision import builtin_kernel, zero_kernel
from relboltz.errors import DomainError, EmptyDetection, TangencyError
from relboltz.geodesics import flow_to, null_vector
from relboltz.probe import ProbeScenario
from relboltz.spacetime import conformal_minkowski, minkowski

W = np.array([0.5, 0.3, 0.0])

# per-unit-length path residual of the phi = 0.3 x^1 rescaling, measured once (0.0686 at p1)
CONFORMAL_FLOOR = 0.05


def scenario(spec, w=W, **kw):
    kw.setdefault("a_second", [0.3, 0.3])
    kw.setdefault("t_source", 0.2)
    return ProbeScenario(spec, np.asarray(w, float), **kw)


@pytest.fixture(scope="module")
def shipped():
    spec = minkowski(3)
    plan = probe.build_probe_plan(scenario(spec))
    A = probe.default_probe_kernel(spec, plan)
    m = probe.measure(spec, A, plan)
    return spec, plan, A, m


# plan ----------------------------------------------------------------------------------------

def test_plan_hits_target(shipped):
    spec, plan, A, m = shipped
    assert np.linalg.norm(plan.z1 - W) < 1e-6
    assert plan.intersection_residual < 1e-6
    assert plan.transversality > 1e-4


def test_plan_sources_not_tangent(shipped):
    spec, plan, A, m = shipped
    a = plan.p_hat / np.linalg.norm(plan.p_hat)
    b = plan.q_hat / np.linalg.norm(plan.q_hat)
    assert np.linalg.norm(a - b) > 1e-3
    for x, p in ((plan.x_hat, plan.p_hat), (plan.y_hat, plan.q_hat)):
        assert p[0] ** 2 > np.sum(p[1:] ** 2)
        # each tilted geodesic passes through w
        xs, _ = flow_to(spec, x, p, (W[0] - x[0]) / p[0])
        assert np.linalg.norm(xs - W) < 1e-9


def test_same_observer_is_tangent(mink3):
    with pytest.raises(TangencyError):
        probe.build_probe_plan(scenario(mink3, a_second=[0.0, 0.0]))


def test_target_on_observer_is_tangent(mink3):
    with pytest.raises(TangencyError):
        probe.build_probe_plan(scenario(mink3, w=[0.3, 0.0, 0.0]))


def test_target_outside_diamond(mink3):
    with pytest.raises(DomainError):
        probe.build_probe_plan(scenario(mink3, w=[0.5, 0.6, 0.0]))


# lightlike section -------------------------------------------------------------------------

def test_section_is_null_everywhere(shipped):
    spec, plan, A, m = shipped
    P = plan.section.reshape(-1, 3)
    q = -P[:, 0] ** 2 + np.sum(P[:, 1:] ** 2, axis=1)
    assert np.max(np.abs(q)) < 1e-12


def test_section_at_detector_event_is_return_velocity(shipped):
    spec, plan, A, m = shipped
    c = plan.points.shape[0] // 2
    assert np.array_equal(plan.points[c, c], plan.e)
    assert np.array_equal(plan.section[c, c], plan.gamma_dot)
    assert abs(plan.gamma_dot @ spec.metric_batch(plan.e[None])[0] @ plan.gamma_dot) < 1e-12


def test_section_is_flow_invariant_on_warped_metric(warped3):
    e = np.array([0.5, 0.1, 0.0])
    gdot = 0.5 * null_vector(warped3, e, [1.0, 0.2])
    X = e + np.array([[0.0, 0.0, 0.0], [0.02, 0.03, -0.02], [-0.03, 0.01, 0.04]])
    P = probe.lightlike_section(warped3, gdot, e, X)
    g = warped3.metric_batch(X)
    assert np.max(np.abs(np.einsum("ki,kij,kj->k", P, g, P))) < 1e-12
    for x, p in zip(X, P):
        xs, ps = flow_to(warped3, x, p, 0.05)
        assert np.max(np.abs(probe.lightlike_section(warped3, gdot, e, xs[None])[0] - ps)) < 1e-7


# measurement --------------------------------------------------------------------------------

def test_zero_kernel_gives_zero_measurement(shipped):
    spec, plan, A, m = shipped
    assert not np.any(probe.measure(spec, zero_kernel(3), plan).values)


def test_kernel_away_from_crossing_gives_zero(shipped):
    spec, plan, A, m = shipped
    # supported only after the beams have separated again
    far = builtin_kernel(spec, (plan.z1 + [0.25, -0.1, -0.1], plan.z1 + [0.45, 0.1, 0.1]), 0.2, 0.5, 0.1)
    assert len(probe.intersections(spec, far, plan)) == 0
    assert not np.any(probe.measure(spec, far, plan).values)


def test_single_intersection_near_target(shipped):
    spec, plan, A, m = shipped
    z = probe.intersections(spec, A, plan)
    assert len(z) == 1
    assert np.linalg.norm(z[0] - plan.z1) < 2.5 * plan.scenario.eps


def test_measurement_is_finite_and_nonzero(shipped):
    spec, plan, A, m = shipped
    assert np.all(np.isfinite(m.values))
    assert np.max(np.abs(m.values)) > 0


def test_support_in_causal_future_of_interaction(shipped):
    spec, plan, A, m = shipped
    idx = np.argwhere(m.values != 0)
    X = plan.points[idx[:, 0], idx[:, 1]]
    # the beams are eps-thick, so the interaction is an eps-neighbourhood of z1
    assert np.all(probe.in_future_of(spec, plan.z1, X, tol=plan.scenario.eps))
    idx = np.argwhere(m.values == 0)
    assert len(idx) > 0


def test_detection_follows_return_geodesic(shipped):
    spec, plan, A, m = shipped
    cells = probe.detect_singular_support(m)
    assert len(cells) > 0
    assert np.max(probe.ridge_distance_cells(spec, plan, cells)) <= 2.0
    assert probe.ridge_coverage(spec, plan, cells, dilation=2.0) == 1.0
    assert np.max(probe.cone_offsets_cells(plan, cells)) < 2.0


def test_source_swap_symmetry(shipped):
    spec, plan, A, m = shipped
    assert np.max(np.abs(probe.measure(spec, A, plan, swap=True).values - m.values)) < 1e-8


def test_loss_vanishes_on_section(shipped):
    spec, plan, A, m = shipped
    assert m.meta["loss_max"] == 0.0
    l12, l21 = probe.loss_on_section(spec, A, plan)
    assert not np.any(l12) and not np.any(l21)


@pytest.mark.slow
def test_kernel_locality(shipped):
    spec, plan, A, m = shipped
    cut = probe.localized_kernel(A, plan.z1, 0.03)
    loc = probe.measure(spec, cut, plan).values
    assert np.max(np.abs(loc)) < 1e-3 * np.max(np.abs(m.values))


# detection on synthetic data ----------------------------------------------------------------

def test_synthetic_ridge_detected_on_line():
    i, j = np.mgrid[0:33, 0:33].astype(float)
    d = i - (0.5 * j + 5.0)
    S = np.maximum(0.0, 1.0 - np.abs(d)) + 0.2 * np.exp(-((i - 16) ** 2 + (j - 16) ** 2) / 200.0)
    cells = probe.detect_singular_support(S)
    assert len(cells) > 10
    dist = np.abs(cells[:, 0] - 0.5 * cells[:, 1] - 5.0) / np.sqrt(1.25)
    assert np.max(dist) <= 1.0


def test_smooth_gaussian_has_no_detection():
    i, j = np.mgrid[0:33, 0:33].astype(float)
    S = np.exp(-((i - 16) ** 2 + (j - 16) ** 2) / 128.0)
    assert len(probe.detect_singular_support(S)) == 0


def test_zero_measurement_raises():
    with pytest.raises(EmptyDetection):
        probe.detect_singular_support(np.zeros((17, 17)))


def test_small_detector_rejected():
    with pytest.raises(ValueError):
        probe.detect_singular_support(np.ones((16, 16)))


# recovery ----------------------------------------------------------------------------------

def test_unreachable_observer_recovers_one(shipped):
    spec, plan, A, m = shipped
    fam = ObserverFamily(spec, [[0.85, 0.0]])
    rec = probe.recover_observation_times(spec, A, plan, fam)
    assert rec[0].truth == 1.0
    assert rec[0].recovered == 1.0
    assert rec[0].detected == 0


@pytest.mark.slow
def test_distinct_targets_give_distinct_profiles(shipped):
    spec, plan, A, m = shipped
    fam = ObserverFamily(spec, [[0.0, 0.0], [0.09, 0.0]])
    plan2 = probe.build_probe_plan(scenario(spec, w=[0.4, 0.2, 0.0], t_source=0.1))
    A2 = probe.default_probe_kernel(spec, plan2)
    r1 = probe.recover_observation_times(spec, A, plan, fam)
    r2 = probe.recover_observation_times(spec, A2, plan2, fam)
    for r in r1 + r2:
        assert r.delta_steps <= 2
    assert [r.truth for r in r1] == pytest.approx([0.8, 0.5 + np.hypot(0.21, 0.0)], abs=1e-5)
    assert all(abs(a.recovered - b.recovered) > 0.1 for a, b in zip(r1, r2))


# conformal rescaling ------------------------------------------------------------------------

DIRS = [[1.0, 0.2, 0.0], [1.0, 0.0, 0.2]]


def test_identical_metric_has_zero_residual(mink3):
    rep = probe.conformal_consistency_check(mink3, conformal_minkowski(3, 0.0), W, DIRS)
    assert rep["max_residual"] < 1e-8


def test_constant_factor_preserves_paths(mink3):
    rep = probe.conformal_consistency_check(mink3, conformal_minkowski(3, 0.4), W, DIRS)
    assert rep["max_residual"] < 1e-6


def test_varying_factor_bends_paths(mink3, conformal3):
    rep = probe.conformal_consistency_check(mink3, conformal3, W, DIRS)
    assert rep["paths"][0]["residual_per_length"] > max(1e-3, CONFORMAL_FLOOR)
