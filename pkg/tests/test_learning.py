import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import comb

from immersionlab.dynamics import get_system
from immersionlab.errors import DegenerateData, EmptyDomain, ResamplingExhausted
from immersionlab.immersions import exact_catalog, get_candidate
from immersionlab.learning import (
    Dictionary, best_fit_residual, box_lattice, collapse_metric, exclusion_test, fit_embedding,
    holdout_identity_check, principal_log_generator, sample_pairs, sweep, trend_ok,
)

DUFF_BOX = [(-2.0, 2.0), (-2.0, 2.0)]


def test_single_pair_on_a_degenerate_box():
    data = sample_pairs(get_system("decay1d"), [(1.0, 1.0)], 1, 0.1, 0)
    assert data.X.tolist() == [[1.0]]
    assert data.X_plus[0, 0] == pytest.approx(math.exp(-0.2), abs=1e-12)


@pytest.mark.parametrize("N,tau", [(0, 0.1), (10, 0.0), (10, -1.0)])
def test_sample_pairs_rejects_bad_arguments(N, tau):
    with pytest.raises(ValueError):
        sample_pairs(get_system("decay1d"), [(-1, 1)], N, tau)


def test_box_outside_the_domain_is_empty():
    with pytest.raises(EmptyDomain):
        sample_pairs(get_system("lorenz"), [(1e3, 1e3 + 1)] * 3, 5, 0.1)


def test_all_samples_blowing_up_exhausts_resampling():
    with pytest.raises(ResamplingExhausted):
        sample_pairs(get_system("quadratic1d"), [(1.5, 2.0)], 5, 2.0)


def test_duffing_samples_are_finite_and_seeded():
    a = sample_pairs(get_system("duffing"), DUFF_BOX, 200, 0.1, 7)
    b = sample_pairs(get_system("duffing"), DUFF_BOX, 200, 0.1, 7)
    c = sample_pairs(get_system("duffing"), DUFF_BOX, 200, 0.1, 8)
    assert np.isfinite(a.X_plus).all()
    assert np.array_equal(a.X_plus, b.X_plus)
    assert not np.array_equal(a.X, c.X)


def test_monomial_layout():
    d = Dictionary.monomials(2, 2)
    assert d.labels()[:3] == ["1", "x1^1", "x2^1"]
    assert d.eval([[2.0, 3.0]])[0].tolist() == [1, 2, 3, 4, 6, 9]
    assert d.constant_index == 0


@settings(max_examples=30, deadline=None)
@given(dim=st.integers(1, 4), degree=st.integers(1, 5))
def test_monomial_count_matches_binomial(dim, degree):
    assert Dictionary.monomials(dim, degree).basis_count == comb(dim + degree, degree, exact=True)


def test_rbf_dictionary_shape():
    d = Dictionary.gaussian_rbf([[0.0, 0.0], [1.0, 1.0]], 0.5)
    assert d.basis_count == 3
    assert d.eval([[0.0, 0.0]])[0, 1] == 1.0


def test_rank_deficient_data_is_reported():
    data = sample_pairs(get_system("decay1d"), [(1.0, 1.0)], 20, 0.1)
    with pytest.raises(DegenerateData) as info:
        fit_embedding(data, Dictionary.monomials(1, 1), 1)
    assert info.value.rank == 1 and info.value.required == 2


def test_fit_is_deterministic_for_a_seed():
    s = get_system("duffing")
    e1 = fit_embedding(sample_pairs(s, DUFF_BOX, 300, 0.1, 3), Dictionary.monomials(2, 3), 4)
    e2 = fit_embedding(sample_pairs(s, DUFF_BOX, 300, 0.1, 3), Dictionary.monomials(2, 3), 4)
    assert e1.to_json() == e2.to_json()


def test_decay_generator_is_recovered():
    emb = fit_embedding(sample_pairs(get_system("decay1d"), [(-1, 1)], 50, 0.1), Dictionary.monomials(1, 1), 1)
    assert emb.fit_residual <= 1e-10
    assert emb.A[0, 0] == pytest.approx(-2.0, abs=1e-8)


def test_rotation_generator_is_recovered():
    emb = fit_embedding(sample_pairs(get_system("rotation2d"), [(-2, 2)] * 2, 50, 0.1),
                        Dictionary.monomials(2, 1), 2)
    assert np.abs(emb.A - [[0, -1], [1, 0]]).max() <= 1e-6


def test_embedding_dimension_bounds():
    data = sample_pairs(get_system("decay1d"), [(-1, 1)], 20, 0.1)
    with pytest.raises(ValueError):
        fit_embedding(data, Dictionary.monomials(1, 1), 3)


def test_principal_log_refuses_negative_real_eigenvalues():
    assert principal_log_generator(np.array([[-1.0]]), 0.1) is None
    assert principal_log_generator(np.array([[math.exp(-0.2)]]), 0.1)[0, 0] == pytest.approx(-2.0)


def test_embedding_json_has_schema_version():
    emb = fit_embedding(sample_pairs(get_system("decay1d"), [(-1, 1)], 20, 0.1), Dictionary.monomials(1, 1), 1)
    doc = json.loads(emb.to_json())
    assert doc["schema_version"] == 1 and doc["dictionary"]["kind"] == "monomials"


def test_collapse_metric_reference_values():
    s = get_system("duffing")
    sample = box_lattice(DUFF_BOX)
    assert collapse_metric(lambda X: np.ones((len(np.atleast_2d(X)), 1)), s.known_limit_sets, sample) == 0.0
    assert collapse_metric(lambda X: np.atleast_2d(X)[:, :1], s.known_limit_sets, sample) == pytest.approx(0.5)


def test_collapse_metric_needs_two_sets():
    with pytest.raises(ValueError):
        collapse_metric(lambda X: X, get_system("decay1d").known_limit_sets, [[0.0]])


def test_exact_candidates_collapse_the_sets_inside_their_domain():
    for cand in exact_catalog():
        if cand.continuity != "continuous":
            continue
        sets = [ls for ls in cand.system.known_limit_sets if cand.domain.contains(ls.points).all()]
        if len(sets) < 2:
            continue
        sample = box_lattice(cand.sample_box, domain=cand.domain)
        assert collapse_metric(cand, sets, sample) <= 1e-6, cand.name


def test_box_lattice_size_and_corners():
    P = box_lattice(DUFF_BOX, 1000)
    assert len(P) >= 1000
    assert [-2.0, -2.0] in P.tolist() and [2.0, 2.0] in P.tolist()


def test_single_cell_sweep_matches_a_direct_fit():
    s = get_system("duffing")
    d = Dictionary.monomials(2, 2)
    rep = sweep(s, d, 3, [0.1], [200], [4], DUFF_BOX)
    emb = fit_embedding(sample_pairs(s, DUFF_BOX, 200, 0.1, 4), d, 3)
    (rec,) = rep.records
    assert rec.status == "OK"
    assert rec.fit_residual == emb.fit_residual
    assert rec.collapse_metric == collapse_metric(emb, s.known_limit_sets, box_lattice(DUFF_BOX, domain=s.domain))


def test_sweep_with_one_limit_set_is_not_applicable():
    rep = sweep(get_system("decay1d"), Dictionary.monomials(1, 1), 1, [0.1], [20], [0], [(-1, 1)])
    assert rep.records[0].status == "NOT_APPLICABLE"
    assert rep.to_csv().splitlines()[0] == "tau,N,seed,fit_residual,collapse_metric,spread,status"


def test_sweep_records_failed_cells():
    rep = sweep(get_system("decay1d"), Dictionary.monomials(1, 3), 1, [0.1], [2], [0], [(-1, 1)])
    assert rep.records[0].status == "FAILED"


def test_parallel_sweep_matches_serial():
    s = get_system("duffing")
    args = (s, Dictionary.monomials(2, 2), 3, [0.1], [100, 200], [0, 1], DUFF_BOX)
    assert sweep(*args).to_csv() == sweep(*args, workers=3).to_csv()


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=6))
def test_sorted_descending_sequences_pass_the_trend(values):
    assert trend_ok(sorted(values, reverse=True))


def test_trend_allows_one_small_inversion_only():
    assert trend_ok([0.5, 0.51, 0.3])
    assert not trend_ok([0.5, 0.6, 0.3])
    assert not trend_ok([0.5, 0.51, 0.3, 0.31])


def test_exclusion_objective_grows_with_nested_data():
    rep = exclusion_test(get_system("duffing"), lambda X: np.atleast_2d(X)[:, :1], 0.1, [100, 1000, 3000],
                         DUFF_BOX, seeds=(0, 1))
    assert rep.distinguishes
    for seed in (0, 1):
        obj = [r.objective for r in rep.by_seed(seed)]
        assert all(b >= a for a, b in zip(obj, obj[1:]))
        assert rep.by_seed(seed)[-1].rms >= 1e-3


def test_exclusion_of_an_exact_map_is_near_zero():
    rep = exclusion_test(get_system("quadratic1d"), get_candidate("quadratic1d"), 0.1, [100, 1000], [(-3.0, 0.9)])
    assert max(r.rms for r in rep.rows) <= 1e-6


def test_exclusion_rejects_empty_sample_sizes():
    with pytest.raises(ValueError):
        exclusion_test(get_system("duffing"), lambda X: X, 0.1, [0, 10], DUFF_BOX)


def test_best_fit_residual_of_an_exact_linear_map():
    X = np.random.default_rng(0).normal(size=(30, 2))
    K, rms, obj = best_fit_residual(lambda Z: Z, X, X @ np.array([[1.0, 2.0], [0.0, 1.0]]).T)
    assert rms <= 1e-12 and obj <= 1e-12
    assert np.allclose(K, [[1.0, 2.0], [0.0, 1.0]])


def test_holdout_identity_for_the_cubic_map():
    res = holdout_identity_check(get_system("cubic1d"), get_candidate("cubic1d"), [(0.2, 2.0)],
                                 taus=[0.25, 0.125], n_samples=500, n_holdout=30, dt=1e-3, fit_tol=1e-8)
    assert res.passed
    assert res.generator[0, 0] == pytest.approx(-2.0, abs=1e-6)


def test_monomial_degree_zero_is_rejected():
    with pytest.raises(ValueError):
        Dictionary.monomials(2, 0)
