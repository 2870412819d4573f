import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from immersionlab.dynamics import (
    LORENZ_ELLIPSOID_LEVEL, DomainSpec, SystemDef, catalog, closed_form_flow_check, get_system, integrate,
    lorenz_ellipsoid_level, rational_flow_unit_interval, reverse,
)
from immersionlab.errors import IntegrationDiverged, UnsupportedOperation

BENCHMARKS = [s for s in catalog() if s.origin == "benchmark"]
CLOSED = [s for s in catalog() if s.closed_form_flow is not None]


def test_catalog_has_the_eight_benchmarks():
    names = {s.name for s in BENCHMARKS}
    assert names == {"quadratic1d", "sine1d", "cubic1d", "rational1d", "limitcycle2d", "duffing",
                     "vanderpol", "lorenz"}


def test_duffing_equilibria_listed():
    pts = sorted(tuple(s.points[0]) for s in get_system("duffing").equilibria())
    assert pts == [(-1.0, 0.0), (0.0, 0.0), (1.0, 0.0)]


def test_limit_cycle_system_lists_unit_circle():
    cyc = [s for s in get_system("limitcycle2d").known_limit_sets if s.kind == "periodic_orbit"][0]
    assert np.allclose(np.linalg.norm(cyc.points, axis=1), 1.0)


def test_lorenz_nonzero_equilibria():
    lor = get_system("lorenz")
    c = math.sqrt(72.0)
    for sgn in (1, -1):
        assert np.linalg.norm(lor.f([sgn * c, sgn * c, 27.0])) <= 1e-10
    assert len(lor.equilibria()) == 3


@pytest.mark.parametrize("system", catalog(), ids=lambda s: s.name)
def test_listed_equilibria_are_zeros_of_the_field(system):
    for eq in system.equilibria():
        assert np.linalg.norm(system.f(eq.points[0])) <= 1e-10


@pytest.mark.parametrize("system", catalog(), ids=lambda s: s.name)
def test_listed_equilibria_are_fixed_points_of_integrate(system):
    for eq in system.equilibria():
        traj = integrate(system, eq.points[0], 1.0)
        assert np.linalg.norm(traj.last - eq.points[0]) <= 1e-8


def test_quadratic_from_origin_matches_tanh():
    traj = integrate(get_system("quadratic1d"), [0.0], 1.0, 1e-3)
    assert abs(traj.last[0] + math.tanh(1.0)) <= 1e-6
    assert len(traj.states) == 1001


def test_zero_horizon_returns_the_initial_state():
    traj = integrate(get_system("duffing"), [0.3, -0.2], 0.0)
    assert traj.states.shape == (1, 2)
    assert np.array_equal(traj.states[0], [0.3, -0.2])


def test_duffing_settles_on_a_sink():
    last = integrate(get_system("duffing"), [2.0, 0.0], 50.0).last
    assert min(np.linalg.norm(last - [1, 0]), np.linalg.norm(last - [-1, 0])) <= 1e-3


def test_partial_last_step_hits_the_horizon_exactly():
    traj = integrate(get_system("decay1d"), [1.0], 0.0105, 1e-3)
    assert traj.times[-1] == pytest.approx(0.0105, abs=1e-15)
    assert traj.last[0] == pytest.approx(math.exp(-0.021), abs=1e-14)


def test_backward_direction_runs_time_negative():
    traj = integrate(get_system("decay1d"), [1.0], 1.0, direction="backward")
    assert traj.times[-1] == pytest.approx(-1.0)
    assert traj.last[0] == pytest.approx(math.exp(2.0), rel=1e-10)


def test_finite_time_blowup_raises_with_last_time():
    with pytest.raises(IntegrationDiverged) as info:
        integrate(get_system("quadratic1d"), [1.5], 5.0)
    # x' = x^2 - 1 from 1.5 blows up at t = atanh(1/1.5)... = 0.5 ln 5
    assert 0.5 < info.value.last_time <= 0.5 * math.log(5.0) + 1e-2


def test_domain_exit_truncates_and_flags():
    drift = SystemDef("drift", 1, lambda X: np.ones_like(X), DomainSpec.box([(0.0, 1.0)]))
    traj = integrate(drift, [0.5], 10.0)
    assert traj.exited_domain
    assert drift.domain.contains(traj.states).all()
    assert traj.times[-1] == pytest.approx(0.5, abs=2e-3)


def test_rk4_is_fourth_order_on_quadratic():
    s = get_system("quadratic1d")
    exact = s.flow(2.0, [0.5])[0, 0]
    errs = [abs(integrate(s, [0.5], 2.0, dt).last[0] - exact) for dt in (1e-2, 5e-3)]
    assert errs[0] / errs[1] >= 8.0


@pytest.mark.parametrize("system", BENCHMARKS[:-1], ids=lambda s: s.name)
def test_semigroup_under_integration(system):
    xi = np.asarray(system.seed_box)[:, 0] * 0.5 + 0.25
    a = integrate(system, integrate(system, xi, 2.0).last, 3.0).last
    b = integrate(system, xi, 5.0).last
    assert np.linalg.norm(a - b) <= 1e-6


def test_reversal_is_an_involution():
    s = get_system("vanderpol")
    rr = reverse(reverse(s))
    assert rr.name == "vanderpol"
    a = integrate(s, [0.4, -0.3], 2.0).states
    b = integrate(rr, [0.4, -0.3], 2.0).states
    assert np.abs(a - b).max() <= 1e-9


def test_reversed_field_is_negated():
    s = get_system("duffing")
    x = np.array([[0.3, 0.7]])
    assert np.array_equal(reverse(s).f(x), -s.f(x))


@pytest.mark.parametrize("system", CLOSED, ids=lambda s: s.name)
def test_closed_form_flows_agree_with_rk4(system):
    # states above +1 blow up in finite time on x' = x^2 - 1
    box = [(-2.0, 0.9)] if system.name == "quadratic1d" else None
    assert closed_form_flow_check(system, samples=10, rng_seed=0, box=box) <= 1e-6


def test_closed_form_check_requires_a_closed_form():
    with pytest.raises(UnsupportedOperation):
        closed_form_flow_check(get_system("duffing"))


def test_rational_printed_solution_matches_integrator():
    s = get_system("rational1d")
    assert abs(rational_flow_unit_interval(2.0, 0.5) - integrate(s, [0.5], 2.0).last[0]) <= 1e-6
    assert abs(rational_flow_unit_interval(2.0, 0.5) - s.flow(2.0, [0.5])[0, 0]) <= 1e-12


@pytest.mark.parametrize("system", CLOSED, ids=lambda s: s.name)
def test_flow_at_time_zero_is_identity(system):
    x = np.asarray(system.seed_box)[:, 0] * 0.3 + 0.1
    assert np.array_equal(system.flow(0.0, x)[0], x)


def test_quadratic_closed_form_on_interval():
    s = get_system("quadratic1d")
    xs = np.linspace(-0.9, 0.9, 7)
    for t in np.linspace(0.0, 5.0, 11):
        rk = np.array([integrate(s, [x], t).last[0] for x in xs]) if t > 0 else xs
        assert np.abs(s.flow(t, xs[:, None])[:, 0] - rk).max() <= 1e-6


def test_closed_form_solves_the_ode():
    for s in CLOSED:
        x = np.asarray(s.seed_box)[:, 0] * 0.4 + 0.05
        for t in (0.3, 1.7):
            h = 1e-5
            deriv = (s.flow(t + h, x) - s.flow(t - h, x)) / (2 * h)
            assert np.linalg.norm(deriv - s.f(s.flow(t, x))) <= 1e-6, s.name


def test_lorenz_stays_inside_its_ellipsoid():
    lor = get_system("lorenz")
    traj = integrate(lor, [1.0, 1.0, 1.0], 50.0)
    assert not traj.exited_domain
    assert lorenz_ellipsoid_level() < LORENZ_ELLIPSOID_LEVEL


def test_excluded_point_is_not_in_domain():
    d = DomainSpec.box_minus_points([(-1, 1), (-1, 1)], [(0.0, 0.0)])
    assert not d.contains([0.0, 0.0])
    assert d.contains([1e-6, 0.0])
    assert list(d.contains(np.array([[0.0, 0.0], [0.5, 0.5], [2.0, 0.0]]))) == [False, True, False]


def test_trajectory_csv_header_and_precision():
    traj = integrate(get_system("limitcycle2d"), [0.5, 0.0], 0.002)
    lines = traj.to_csv().splitlines()
    assert lines[0] == "t,x1,x2"
    assert len(lines) == 4
    assert float(lines[2].split(",")[1]) == traj.states[1, 0]


@settings(max_examples=30, deadline=None)
@given(x=st.floats(-0.95, 0.95), s=st.floats(0.0, 2.0), t=st.floats(0.0, 2.0))
def test_closed_form_semigroup_cubic(x, s, t):
    sys_ = get_system("cubic1d")
    lhs = sys_.flow(s + t, [x])
    rhs = sys_.flow(t, sys_.flow(s, [x]))
    assert np.abs(lhs - rhs).max() <= 1e-12


@settings(max_examples=30, deadline=None)
@given(pts=st.lists(st.tuples(st.floats(-3, 3), st.floats(-3, 3)), min_size=1, max_size=20))
def test_box_membership_batch_matches_single(pts):
    d = DomainSpec.box([(-1, 2), (-2, 1)])
    X = np.array(pts, dtype=float)
    assert list(d.contains(X)) == [d.contains(p) for p in X]


def test_batch_propagation_flags_blowup():
    from immersionlab.dynamics import propagate
    prop = propagate(get_system("quadratic1d"), [[1.5], [0.0]], 2.0)
    assert prop.diverged.tolist() == [True, False]
    assert np.isfinite(prop.states).all()
