import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from scipy.optimize import minimize

from relboltz.causal_obs import (TAU_TOL, CausalDiamond, ObserverFamily, check_observer_bounds,
                                 earliest_obs_set, observation_time_minus, observation_time_plus,
                                 shortcut_check, time_separation)
from relboltz.errors import DegenerateInput
from relboltz.geodesics import Worldline
from relboltz.spacetime import conformal_minkowski, diagonal_warped, minkowski

coord = st.floats(-0.8, 0.8, allow_nan=False)


def polyline_tau(x, y, k=3):
    """Longest piecewise-linear causal path from x to y with k interior vertices."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    n = len(x)

    def neg_length(v):
        pts = np.vstack([x, v.reshape(k, n), y])
        d = np.diff(pts, axis=0)
        q = d[:, 0] ** 2 - np.sum(d[:, 1:] ** 2, axis=1)
        if np.any(d[:, 0] <= 0) or np.any(q < 0):
            return 10.0
        return -np.sum(np.sqrt(q))

    # start from a bent path so the optimiser has to find the chord
    t = np.linspace(0, 1, k + 2)[1:-1, None]
    start = x + t * (y - x)
    start[:, 1:] += 0.1 * np.sin(np.pi * t)
    res = minimize(neg_length, start.ravel(), method="Nelder-Mead",
                   options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 40000, "maxfev": 40000})
    return -res.fun


def test_time_separation_chord_example(mink2):
    tau = time_separation(mink2, [0.0, 0.0], [2.0, 1.0])
    assert tau == pytest.approx(math.sqrt(3), abs=1e-12)
    assert polyline_tau([0.0, 0.0], [2.0, 1.0]) == pytest.approx(tau, abs=1e-6)


def test_shooting_backend_matches_analytic(mink3):
    y = [2.0, 1.0, 0.5]
    r = time_separation(mink3, [0.0, 0.0, 0.0], y, backend="shooting", return_result=True)
    assert r.converged
    assert r.tau == pytest.approx(math.sqrt(4 - 1.25), abs=1e-9)


def test_constant_conformal_factor_scales_tau():
    spec = conformal_minkowski(3, 0.4)
    y = [2.0, 1.0, 0.5]
    expect = math.exp(0.2) * math.sqrt(2.75)
    assert time_separation(spec, [0, 0, 0], y) == pytest.approx(expect, abs=1e-12)
    assert time_separation(spec, [0, 0, 0], y, backend="shooting") == pytest.approx(expect, abs=1e-9)


def test_analytic_backend_rejects_curved(warped3):
    with pytest.raises(ValueError):
        time_separation(warped3, [0, 0, 0], [1, 0, 0], backend="analytic")


@pytest.mark.parametrize("y", [[1.0, 2.0], [0.0, 0.0], [-1.0, 0.0], [1.0, 1.0]])
def test_zero_separation_cases(mink2, y):
    assert time_separation(mink2, [0.0, 0.0], y) == 0.0


def test_warped_spacelike_pair_resolves_to_zero(warped3):
    r = time_separation(warped3, [0.0, 0.0, 0.0], [0.5, 0.9, 0.2], return_result=True)
    assert r.tau == 0.0 and r.converged


def test_warped_pair_is_antisymmetric_and_below_flat_bound(warped3):
    x, y = np.array([0.0, 0.0, 0.0]), np.array([1.5, 0.3, 0.2])
    tau = time_separation(warped3, x, y)
    assert tau > 0
    assert time_separation(warped3, y, x) == 0.0
    # a(t) >= 1 stretches space, so the separation cannot exceed the flat one
    assert tau <= time_separation(minkowski(3), x, y) + 1e-12


def test_reverse_triangle_on_warped_chain(warped3):
    x, y, z = np.array([0.0, 0.0, 0.0]), np.array([0.6, 0.2, 0.0]), np.array([1.3, 0.1, 0.3])
    txy, tyz, txz = (time_separation(warped3, a, b) for a, b in ((x, y), (y, z), (x, z)))
    assert txy > 0 and tyz > 0
    assert txz >= txy + tyz - 1e-8


@settings(max_examples=60, deadline=None)
@given(st.lists(coord, min_size=3, max_size=3), st.lists(coord, min_size=3, max_size=3))
def test_chronology_antisymmetric(x, y):
    spec = minkowski(3)
    if time_separation(spec, x, y) > 0:
        assert time_separation(spec, y, x) == 0.0


timelike_step = st.tuples(st.floats(0.05, 1.0), st.floats(0.0, 0.95), st.floats(0.0, 2 * math.pi))


def _step(x, step):
    dt, speed, angle = step
    return np.asarray(x) + np.array([dt, dt * speed * math.cos(angle), dt * speed * math.sin(angle)])


@settings(max_examples=60, deadline=None)
@given(st.lists(coord, min_size=3, max_size=3), timelike_step, timelike_step)
def test_reverse_triangle_inequality(x, s1, s2):
    spec = minkowski(3)
    y = _step(x, s1)
    z = _step(y, s2)
    a, b = time_separation(spec, x, y), time_separation(spec, y, z)
    assert a > 0 and b > 0
    assert time_separation(spec, x, z) >= a + b - 1e-12


# observation times ---------------------------------------------------------------------

@pytest.mark.parametrize("x", [[-0.5, 0.2, 0.0], [0.1, -0.3, 0.1], [0.3, 0.4, -0.2]])
def test_plus_time_matches_cone_oracle(mink3, x):
    a = np.array([0.0, 0.0])
    mu = Worldline.coordinate(a)
    expect = min(1.0, x[0] + np.linalg.norm(a - x[1:]))
    assert observation_time_plus(mink3, mu, x) == pytest.approx(expect, abs=2e-6)


def test_minus_time_matches_cone_oracle(mink3):
    x = [0.3, 0.4, -0.2]
    mu = Worldline.coordinate([0.0, 0.0])
    expect = x[0] - math.hypot(0.4, 0.2)
    assert observation_time_minus(mink3, mu, x) == pytest.approx(expect, abs=2e-6)


def test_plus_time_on_observer_is_vertex(mink3):
    mu = Worldline.coordinate([0.2, 0.1])
    assert observation_time_plus(mink3, mu, [0.4, 0.2, 0.1]) == pytest.approx(0.4, abs=2e-6)


def test_far_event_is_never_observed(mink3):
    mu = Worldline.coordinate([0.0, 0.0])
    assert observation_time_plus(mink3, mu, [0.5, 0.8, 0.0]) == 1.0
    assert observation_time_minus(mink3, mu, [-0.5, 0.8, 0.0]) == -1.0


@settings(max_examples=30, deadline=None)
@given(st.floats(-0.9, 0.3), st.floats(-0.5, 0.5), st.floats(0.0, 0.4))
def test_plus_time_translates_with_event(t0, x0, dt):
    spec = minkowski(2)
    mu = Worldline.coordinate([0.0])
    f0 = observation_time_plus(spec, mu, [t0, x0])
    f1 = observation_time_plus(spec, mu, [t0 + dt, x0])
    assume(f1 < 1.0 - 1e-5)
    assert f1 == pytest.approx(f0 + dt, abs=3e-6)


@settings(max_examples=20, deadline=None)
@given(st.floats(-0.9, 0.5), st.floats(-0.5, 0.5), st.floats(-0.5, 0.5))
def test_earliest_observation_is_null(t0, x0, x1):
    spec = minkowski(3)
    mu = Worldline.coordinate([0.1, -0.1])
    x = [t0, x0, x1]
    f = observation_time_plus(spec, mu, x)
    assume(f < 1.0)
    # f sits within the bisection tolerance of the cone, so tau there is O(sqrt(s_tol))
    lo = observation_time_plus(spec, mu, x, s_tol=1e-14)
    assert time_separation(spec, x, mu(lo - 1e-13)) <= TAU_TOL
    assert abs(lo - f) < 2e-6


def test_plus_time_on_warped_metric(warped3):
    mu = Worldline.coordinate([0.3, 0.0])
    f = observation_time_plus(warped3, mu, [0.0, 0.0, 0.0], s_tol=1e-6)
    # null ray: dx/dt = 1/a(t) with a = 1 + 0.1 t, so x(t) = 10 log(1 + 0.1 t)
    expect = 10.0 * (math.exp(0.3 / 10.0) - 1.0)
    assert f == pytest.approx(expect, abs=1e-5)


# observer families --------------------------------------------------------------------------

def test_default_family_layout(mink3):
    fam = ObserverFamily.default(mink3, 0.09, 33)
    assert len(fam) == 33
    assert np.all(fam.a_grid[:, 1] == 0)
    assert np.allclose(fam.a_grid[fam.hat_index], 0.0)


def test_family_dimension_checked(mink3):
    with pytest.raises(ValueError):
        ObserverFamily(mink3, [[0.0, 0.0, 0.0]])


def test_observer_bounds(mink3):
    d = CausalDiamond(mink3, -0.9, 0.9)
    assert check_observer_bounds(mink3, ObserverFamily.default(mink3, 0.09, 5), d)
    assert not check_observer_bounds(mink3, ObserverFamily.default(mink3, 0.5, 5), d)


def test_diamond_membership(mink3):
    d = CausalDiamond(mink3, -0.9, 0.9)
    assert d.contains([0.5, 0.3, 0.0])
    assert not d.contains([0.5, 0.5, 0.0])
    with pytest.raises(ValueError):
        CausalDiamond(mink3, 0.5, 0.5)


def test_earliest_obs_set_matches_oracle(mink3):
    fam = ObserverFamily.default(mink3, 0.09, 7)
    w = np.array([0.2, 0.3, 0.1])
    obs = earliest_obs_set(mink3, fam, w)
    assert len(obs) == len(fam)
    for o in obs:
        expect = min(1.0, w[0] + np.linalg.norm(o.a - w[1:]))
        assert o.f_plus == pytest.approx(expect, abs=2e-6)
        assert o.event[0] == pytest.approx(o.f_plus)


def test_earliest_obs_of_point_on_central_observer(mink3):
    fam = ObserverFamily.default(mink3, 0.09, 7)
    w = np.array([0.2, 0.0, 0.0])
    obs = earliest_obs_set(mink3, fam, w)
    assert np.allclose(obs[fam.hat_index].event, w, atol=2e-6)


# shortcuts --------------------------------------------------------------------------------

def test_collinear_null_segments_have_no_shortcut(mink3):
    assert not shortcut_check(mink3, [0, 0, 0], [0.5, 0.5, 0], [1.0, 1.0, 0])


def test_broken_null_path_has_shortcut(mink3):
    assert shortcut_check(mink3, [0, 0, 0], [1, 1, 0], [2, 1, 1])
    assert time_separation(mink3, [0, 0, 0], [2, 1, 1]) == pytest.approx(math.sqrt(2))


def test_shortcut_degenerate_input(mink3):
    with pytest.raises(DegenerateInput):
        shortcut_check(mink3, [0, 0, 0], [0, 0, 0], [1, 1, 0])
