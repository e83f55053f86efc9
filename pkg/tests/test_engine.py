from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from conftest import random_cohort
from localbias.cohort import Cohort
from localbias.engine import (
    Hyperparams,
    _State,
    bias_term,
    clustering_cost,
    empty_cluster_repair,
    fit,
    fit_from,
    init_centroids,
    is_one_move_stable,
    severity_term,
    sq_distances,
    total_objective,
)


def test_clustering_cost_examples(make_cohort):
    two = make_cohort([(0, 0), (2, 0)], "AB")
    assert clustering_cost(two, [0, 0], [[1, 0]]) == 2.0
    assert clustering_cost(two, [0, 1], [[0, 0], [2, 0]]) == 0.0
    one = make_cohort([(3, 4), (0, 0)], "AB")
    assert clustering_cost(one, [0, 1], [[0, 0], [0, 0]]) == 25.0


def test_clustering_cost_dimension_mismatch(make_cohort):
    c = make_cohort([(0, 0), (2, 0)], "AB")
    with pytest.raises(ValueError):
        clustering_cost(c, [0, 0], [[1, 0, 0]])
    with pytest.raises(ValueError):
        clustering_cost(c, [0, 0, 0], [[1, 0]])


def test_bias_term_examples(make_cohort):
    c = make_cohort([(0,)] * 4, "AABB", correct=[1, 0, 1, 1])
    assert bias_term(c, [0, 0, 0, 0]) == 0.5
    # cluster 1 has only group A -> contributes nothing
    c2 = make_cohort([(0,)] * 4, "AABB", correct=[1, 0, 1, 0])
    assert bias_term(c2, [1, 1, 0, 0], k=2) == 0.0
    c3 = make_cohort([(0,)] * 8, "AABBAABB", correct=[1, 0, 1, 0, 1, 1, 1, 1])
    assert bias_term(c3, [0, 0, 0, 0, 1, 1, 1, 1]) == 0.0


def test_severity_term_examples(make_cohort):
    c = make_cohort([(0,)] * 3, "AAB", severity=[4, 6, 10])
    assert severity_term(c, [0, 0, 0]) == 0.0
    c = make_cohort([(0,)] * 3, "ABB", severity=[5, 3, 4])
    assert severity_term(c, [0, 0, 0]) == 4.0
    c = make_cohort([(0,)] * 3, "AAB", severity=[2, 3, 0])
    assert severity_term(c, [0, 0, 1]) == 25.0


def test_total_objective_example(make_cohort):
    # L_c = 1 + 9 = 10, L_b = |0.5 - 1| = 0.5, L_s = (5 - 7)^2 = 4
    c = make_cohort([(1,), (3,), (0,), (0,)], "AABB", correct=[1, 0, 1, 1], severity=[5, 0, 3, 4])
    h = Hyperparams(k=2, lam=-30, gamma=50)
    assert total_objective(c, [0, 0, 0, 0], [[0.0]], h) == 195.0
    assert total_objective(c, [0, 0, 0, 0], [[0.0]], Hyperparams(k=2)) == 10.0


def test_total_objective_zero(make_cohort):
    c = make_cohort([(0,), (0,)], "AB", correct=[1, 1], severity=[1, 1])
    assert total_objective(c, [0, 0], [[0.0]], Hyperparams(k=2, lam=-30, gamma=50)) == 0.0


@pytest.mark.parametrize("kwargs", [dict(k=1), dict(lam=1.0), dict(gamma=-1.0), dict(max_iter=0), dict(restarts=0), dict(seed=-1)])
def test_hyperparams_validation(kwargs):
    with pytest.raises(ValueError):
        Hyperparams(**kwargs)


def test_init_k_equals_n_is_permutation(make_cohort):
    pts = [(0, 0), (1, 0), (5, 5), (2, 7)]
    c = make_cohort(pts, "AABB")
    cent = init_centroids(c, Hyperparams(k=4, seed=3))
    assert sorted(map(tuple, cent.tolist())) == sorted(map(tuple, np.asarray(pts, float).tolist()))


def test_init_is_deterministic():
    c = random_cohort(np.random.default_rng(0), 50, 3)
    h = Hyperparams(k=5, seed=123)
    assert np.array_equal(init_centroids(c, h), init_centroids(c, h))


@pytest.mark.parametrize("seed", range(25))
def test_init_never_duplicates_a_chosen_point(make_cohort, seed):
    c = make_cohort([(0, 0), (0, 0), (9, 9)], "AAB")
    cent = init_centroids(c, Hyperparams(k=2, seed=seed))
    assert [9.0, 9.0] in cent.tolist()


def test_init_k_greater_than_n(make_cohort):
    c = make_cohort([(0, 0), (1, 1)], "AB")
    with pytest.raises(ValueError):
        init_centroids(c, Hyperparams(k=3))
    with pytest.raises(ValueError):
        fit(c, Hyperparams(k=3))


def _state(cohort, assignment, k):
    return _State.build(cohort, np.asarray(assignment), k)


def test_repair_moves_farthest_point(make_cohort):
    c = make_cohort([(0, 0), (3, 0)], "AB")
    centroids = np.array([[0.5, 0.0], [10.0, 10.0]])
    st_ = _state(c, [0, 0], 2)
    empty_cluster_repair(st_, sq_distances(c.X, centroids), c)
    assert st_.assignment.tolist() == [0, 1]


def test_repair_is_identity_without_empty_clusters(make_cohort):
    c = make_cohort([(0, 0), (3, 0), (4, 0)], "ABA")
    st_ = _state(c, [0, 1, 1], 2)
    before = (st_.assignment.copy(), st_.n_a.copy(), st_.s_a.copy())
    empty_cluster_repair(st_, sq_distances(c.X, np.array([[0.0, 0], [3.5, 0]])), c)
    assert np.array_equal(st_.assignment, before[0])
    assert np.array_equal(st_.n_a, before[1])


def test_repair_tie_takes_lowest_index(make_cohort):
    c = make_cohort([(-1, 0), (1, 0), (5, 5)], "ABA", severity=[1.0, 2.0, 3.0])
    st_ = _state(c, [0, 0, 2], 3)
    empty_cluster_repair(st_, sq_distances(c.X, np.array([[0.0, 0], [9, 9], [5, 5]])), c)
    assert st_.assignment.tolist() == [1, 0, 2]
    # incremental statistics follow the move
    assert st_.n_a.tolist() == [0, 1, 1] and st_.n_b.tolist() == [1, 0, 0]
    assert st_.s_a.tolist() == [0.0, 1.0, 3.0]


def test_two_blobs_recovered(make_cohort):
    pts = [(0, 0), (0, 1), (1, 0), (10, 10), (10, 11), (11, 10)]
    c = make_cohort(pts, "ABABAB")
    res = fit(c, Hyperparams(k=2, seed=0, restarts=3))
    labels = res.assignment
    assert len(set(labels[:3])) == 1 and len(set(labels[3:])) == 1 and labels[0] != labels[3]
    # each blob: squared distances to (1/3, 1/3) -> 2/9 + 5/9 + 5/9 = 4/3
    assert res.l_c == pytest.approx(8 / 3, rel=1e-12)


@pytest.mark.parametrize("seed", range(8))
def test_reduces_to_lloyd(seed):
    rng = np.random.default_rng(seed)
    c = random_cohort(rng, 120, 4)
    h = Hyperparams(k=4, seed=seed, restarts=1)
    init = init_centroids(c, h)
    ours = fit_from(c, h, init)
    ref_labels, ref_centroids, _ = oracles.lloyd(c.X, init)
    assert np.array_equal(ours.assignment, ref_labels)
    assert np.allclose(ours.centroids, ref_centroids, rtol=0, atol=1e-12)


@pytest.mark.parametrize("seed", range(6))
def test_brute_force_bound_and_stability(seed):
    rng = np.random.default_rng(100 + seed)
    c = random_cohort(rng, 10, 2)
    h = Hyperparams(k=2, lam=-30, gamma=50, seed=seed)
    res = fit(c, h)
    best = oracles.brute_force_minimum(c.X, c.is_a, c.correct, c.severity, 2, h.lam, h.gamma)
    assert best <= res.objective + 1e-9
    assert is_one_move_stable(c, res)


def test_result_invariants():
    rng = np.random.default_rng(7)
    c = random_cohort(rng, 80, 3)
    h = Hyperparams(k=4, lam=-40, gamma=20, seed=1, restarts=3)
    res = fit(c, h)
    assert res.assignment.min() >= 0 and res.assignment.max() < 4
    assert np.bincount(res.assignment, minlength=4).min() > 0
    assert res.objective == pytest.approx(res.l_c + h.lam * res.l_b + h.gamma * res.l_s, rel=1e-9)
    # decomposition: from-scratch oracles agree with maintained statistics
    cent = oracles.mean_centroids(c.X, res.assignment, 4)
    assert res.l_c == pytest.approx(oracles.inertia(c.X, res.assignment, cent), rel=1e-9)
    assert res.l_b == pytest.approx(oracles.accuracy_gap_sum(c.is_a, c.correct, res.assignment, 4), rel=1e-9, abs=1e-12)
    assert res.l_s == pytest.approx(oracles.severity_gap_sum(c.is_a, c.severity, res.assignment, 4), rel=1e-9, abs=1e-12)
    assert np.allclose(res.centroids, cent, atol=1e-12)


def test_trace_is_monotone():
    rng = np.random.default_rng(11)
    c = random_cohort(rng, 150, 3)
    res = fit_from(c, Hyperparams(k=5, lam=-100, gamma=100), init_centroids(c, Hyperparams(k=5, seed=2)))
    assert np.all(np.diff(res.trace) <= 1e-9)
    assert res.trace[-1] == pytest.approx(res.objective, rel=1e-12)


def test_determinism():
    c = random_cohort(np.random.default_rng(5), 100, 3)
    h = Hyperparams(k=3, lam=-20, gamma=60, seed=9, restarts=4)
    a, b = fit(c, h), fit(c, h)
    assert np.array_equal(a.assignment, b.assignment)
    assert np.array_equal(a.centroids, b.centroids)
    assert (a.objective, a.l_c, a.l_b, a.l_s, a.iterations, a.restart) == (b.objective, b.l_c, b.l_b, b.l_s, b.iterations, b.restart)


def test_restarts_pick_lowest_objective():
    c = random_cohort(np.random.default_rng(8), 60, 2)
    h = Hyperparams(k=3, lam=-10, gamma=5, seed=4, restarts=5)
    best = fit(c, h)
    singles = [fit(c, replace(h, seed=4 + r, restarts=1)).objective for r in range(5)]
    assert best.objective == min(singles)
    assert best.restart == singles.index(min(singles))


def test_max_iter_cap():
    c = random_cohort(np.random.default_rng(3), 200, 2)
    res = fit(c, Hyperparams(k=6, seed=0, restarts=1, max_iter=1))
    assert res.iterations == 1


@settings(max_examples=30, deadline=None)
@given(
    seed=st.integers(0, 10_000),
    scale=st.floats(0.1, 10.0),
    k=st.integers(2, 4),
)
def test_severity_term_is_quadratically_homogeneous(seed, scale, k):
    rng = np.random.default_rng(seed)
    c = random_cohort(rng, 30, 2)
    assignment = rng.integers(0, k, c.n)
    scaled = Cohort.from_arrays(c.X, c.is_a, c.correct, c.severity * scale)
    assert severity_term(scaled, assignment, k) == pytest.approx(scale**2 * severity_term(c, assignment, k), rel=1e-9, abs=1e-9)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), lam=st.floats(-100, 0), gam=st.floats(0, 100), k=st.integers(2, 5))
def test_fit_monotone_and_stable_property(seed, lam, gam, k):
    c = random_cohort(np.random.default_rng(seed), 40, 3)
    res = fit(c, Hyperparams(k=k, lam=lam, gamma=gam, seed=seed, restarts=2))
    assert np.all(np.diff(res.trace) <= 1e-9)
    assert is_one_move_stable(c, res)
