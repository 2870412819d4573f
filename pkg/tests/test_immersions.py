import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from immersionlab.dynamics import DomainSpec, get_system
from immersionlab.errors import DomainViolation
from immersionlab.immersions import (
    ImmersionCandidate, collapse_witness, default_xi_grid, exact_catalog, get_candidate,
    injectivity_probe, propagator, verify_immersion,
)

CANDIDATES = exact_catalog()
T_GRID = np.linspace(0.0, 5.0, 20)


def test_catalog_generators():
    A = {c.name: c.generator_A for c in CANDIDATES}
    for name in ("quadratic1d", "sine1d", "cubic1d"):
        assert A[name].tolist() == [[-2.0]]
    assert A["limitcycle2d"].tolist() == [[0, -1, 0], [1, 0, 0], [0, 0, -2]]
    assert A["rational1d"].tolist() == [[0, 1], [0, 0]]
    assert {c.continuity for c in CANDIDATES if c.name != "rational1d"} == {"continuous"}
    assert get_candidate("rational1d").continuity == "discontinuous"


def test_point_values():
    assert get_candidate("quadratic1d")([0.0])[0, 0] == -1.0
    assert get_candidate("limitcycle2d")([1.0, 0.0])[0].tolist() == [1.0, 0.0, 0.0]
    assert get_candidate("rational1d")([0.5])[0].tolist() == [0.0, 3.0]


def test_rational_equilibria_use_the_identity_branch():
    F = get_candidate("rational1d")
    assert F(np.array([[-1.0], [0.0], [1.0]])).tolist() == [[-1.0, 0.0], [0.0, 0.0], [1.0, 0.0]]


def test_generator_shape_is_checked():
    with pytest.raises(ValueError):
        ImmersionCandidate("bad", "cubic1d", 2, lambda X: X, [[1.0]])


def test_quadratic_identity_at_one_point():
    c = get_candidate("quadratic1d")
    rep = verify_immersion(c, [[0.0]], [1.0])
    assert rep.max_residual <= 1e-9
    assert c(c.system.flow(1.0, [0.0]))[0, 0] == pytest.approx(-math.exp(-2.0), abs=1e-12)


@pytest.mark.parametrize("cand", CANDIDATES, ids=lambda c: c.name)
def test_time_zero_residual_is_exactly_zero(cand):
    for closed in (True, False):
        rep = verify_immersion(cand, t_grid=[0.0], use_closed_form=closed)
        assert rep.max_residual == 0.0


@pytest.mark.parametrize("cand", CANDIDATES, ids=lambda c: c.name)
def test_full_grid_residuals(cand):
    assert verify_immersion(cand, default_xi_grid(cand, 20), T_GRID).max_residual <= 1e-6
    assert verify_immersion(cand, default_xi_grid(cand, 20), T_GRID, 1e-3, use_closed_form=False).max_residual <= 1e-5


def test_rational_linear_growth():
    c = get_candidate("rational1d")
    for t in np.linspace(0.0, 5.0, 11):
        z = c(c.system.flow(t, [0.5]))[0]
        assert np.abs(z - [3.0 * t, 3.0]).max() <= 1e-6


def test_excluded_point_raises_domain_violation():
    with pytest.raises(DomainViolation) as info:
        verify_immersion(get_candidate("cubic1d"), [[1.0], [0.0]], [1.0])
    assert info.value.point == [0.0]
    with pytest.raises(DomainViolation):
        verify_immersion(get_candidate("limitcycle2d"), [[0.0, 0.0]], [1.0])


@pytest.mark.parametrize("cand", CANDIDATES, ids=lambda c: c.name)
def test_generator_consistency_by_central_differences(cand):
    h = 1e-5
    X = default_xi_grid(cand, 20)[1:-1]
    F0 = cand(X)
    dF = (cand(cand.system.flow(h, X)) - cand(cand.system.flow(-h, X))) / (2 * h)
    assert np.abs(dF - F0 @ cand.generator_A.T).max() <= 1e-4


@settings(max_examples=40, deadline=None)
@given(t1=st.floats(0, 3), t2=st.floats(0, 3), idx=st.integers(0, len(CANDIDATES) - 1))
def test_matrix_exponential_semigroup(t1, t2, idx):
    A = CANDIDATES[idx].generator_A
    lhs = propagator(A, t1 + t2)
    rhs = propagator(A, t1) @ propagator(A, t2)
    assert np.abs(lhs - rhs).max() <= 1e-10 * max(1.0, np.abs(lhs).max())


@settings(max_examples=25, deadline=None)
@given(x=st.floats(-2.5, 2.5).filter(lambda v: abs(v) > 0.05), t=st.floats(0, 5))
def test_cubic_identity_holds_anywhere_off_the_origin(x, t):
    rep = verify_immersion(get_candidate("cubic1d"), [[x]], [t])
    assert rep.max_residual <= 1e-6


def test_injectivity_probe_finds_even_function_collision():
    sq = ImmersionCandidate("square", "cubic1d", 1, lambda X: X ** 2, [[2.0]], sample_box=((-1.0, 1.0),))
    res = injectivity_probe(sq, 1000, rng_seed=0)
    assert res.verdict == "collision"
    a, b = res.pair
    assert abs(a[0] ** 2 - b[0] ** 2) <= 1e-3
    assert a[0] * b[0] < 0 and abs(a[0] - b[0]) >= 0.1


def test_injectivity_probe_limit_cycle_annulus():
    def annulus(X):
        r = np.linalg.norm(X, axis=1)
        return (r >= 0.1) & (r <= 3.0)

    res = injectivity_probe(get_candidate("limitcycle2d"), 5000, 0, box=[(-3, 3), (-3, 3)], region=annulus)
    assert res.verdict == "no_collision_found"


def test_injectivity_probe_discontinuous_map():
    res = injectivity_probe(get_candidate("rational1d"), 5000, 0, box=[(-3, 3)])
    assert res.verdict == "no_collision_found"


def test_cubic_map_is_not_one_to_one():
    assert injectivity_probe(get_candidate("cubic1d"), 2000, 0).verdict == "collision"


def test_injectivity_probe_needs_two_samples():
    with pytest.raises(ValueError):
        injectivity_probe(get_candidate("cubic1d"), 1)


def test_collapse_witness_examples():
    cubic = get_candidate("cubic1d")
    sets = [ls for ls in get_system("cubic1d").known_limit_sets if ls.points[0, 0] != 0.0]
    assert collapse_witness(cubic, sets).max_distance <= 1e-6

    sine = get_candidate("sine1d")
    pi_only = [ls for ls in get_system("sine1d").known_limit_sets if sine.domain.contains(ls.points).all()]
    table = collapse_witness(sine, pi_only)
    assert table.distances.shape == (1, 1) and table.distances[0, 0] == 0.0

    quad = get_candidate("quadratic1d")
    with pytest.raises(DomainViolation):
        collapse_witness(quad, get_system("quadratic1d").known_limit_sets)


def test_continuous_candidates_collapse_their_limit_sets():
    for cand in CANDIDATES:
        if cand.continuity != "continuous":
            continue
        inside = [ls for ls in cand.system.known_limit_sets if cand.domain.contains(ls.points).all()]
        if len(inside) >= 2:
            assert collapse_witness(cand, inside).max_distance <= 1e-6, cand.name


def test_discontinuous_candidate_separates_its_limit_sets():
    c = get_candidate("rational1d")
    assert collapse_witness(c, c.system.known_limit_sets).max_distance > 0.5


def test_report_exports():
    rep = verify_immersion(get_candidate("limitcycle2d"), default_xi_grid(get_candidate("limitcycle2d"), 3), [0, 1])
    lines = rep.to_csv().splitlines()
    assert lines[0] == "xi1,xi2,t,residual"
    assert len(lines) == 7
    doc = json.loads(rep.to_json())
    assert doc["schema_version"] == 1 and len(doc["samples"]) == 6
    assert all(s["residual"] >= 0 for s in doc["samples"])


def test_candidate_domains_are_consistent():
    assert not get_candidate("quadratic1d").domain.contains([1.0])
    assert not get_candidate("sine1d").domain.contains([0.0])
    assert get_candidate("sine1d").domain.contains([math.pi])
    assert isinstance(get_candidate("rational1d").domain, DomainSpec)
