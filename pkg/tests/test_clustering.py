import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from jsdm.channel_model import CovarianceMatrix, UserGeometry, one_ring_covariance, ula
from jsdm.clustering import (
    ROUNDING_A,
    ROUNDING_B,
    AdviceGraph,
    Partition,
    build_advice_graph,
    cluster_users,
    disagreement_cost,
    dol_similarity,
    exact_cluster,
    pivot_cluster,
    pivot_cluster_runs,
    disagreement_costs,
    round_distances,
    similarity_matrix,
    solve_cluster_lp,
)

from conftest import random_psd


def random_graph(rng, n, p_pos=0.5):
    L = np.where(rng.random((n, n)) < p_pos, 1, -1)
    L = np.triu(L, 1)
    return AdviceGraph(L + L.T)


def set_partitions(items):
    """All set partitions by recursive insertion (independent of the implementation)."""
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for sub in set_partitions(rest):
        for i in range(len(sub)):
            yield sub[:i] + [[first] + sub[i]] + sub[i + 1 :]
        yield [[first]] + sub


def recount(clusters, labels):
    where = {u: ci for ci, c in enumerate(clusters) for u in c}
    n = labels.shape[0]
    cost = 0
    for u in range(n):
        for v in range(u + 1, n):
            same = where[u] == where[v]
            if labels[u, v] > 0 and not same:
                cost += 1
            if labels[u, v] < 0 and same:
                cost += 1
    return cost


def brute_optimum(g):
    return min(recount(p, g.labels) for p in set_partitions(list(range(g.size))))


# similarity


def test_dol_self_similarity(rng):
    R = random_psd(rng, 4)
    assert abs(dol_similarity(R, R) - 1) < 1e-12


def test_dol_orthogonal():
    assert dol_similarity(np.diag([1.0, 0.0]), np.diag([0.0, 1.0])) == 0.0


def test_dol_hand_value():
    assert abs(dol_similarity(np.diag([1.0, 0.0]), np.diag([1.0, 1.0])) - 1 / np.sqrt(2)) < 1e-12


def test_dol_rejects_zero():
    with pytest.raises(ValueError):
        dol_similarity(np.zeros((2, 2)), np.eye(2))


@given(st.integers(0, 2**32 - 1), st.floats(0.01, 100))
def test_dol_symmetric_and_scale_invariant(seed, c):
    rng = np.random.default_rng(seed)
    A, B = random_psd(rng, 4, 2), random_psd(rng, 4, 3)
    d = dol_similarity(A, B)
    assert 0 <= d <= 1
    assert abs(d - dol_similarity(B, A)) < 1e-12
    assert abs(d - dol_similarity(c * A, B)) < 1e-12


def test_similarity_matrix_invariants():
    arr = ula(16)
    covs = [one_ring_covariance(UserGeometry(a, 0.1), arr) for a in (-0.5, 0.0, 0.02, 0.7)]
    S = similarity_matrix(covs)
    np.testing.assert_allclose(S, S.T, atol=0)
    np.testing.assert_allclose(np.diag(S), 1.0, atol=1e-10)
    assert S.min() >= -1e-10 and S.max() <= 1 + 1e-10


# advice graph


def test_advice_all_similar():
    S = np.ones((4, 4))
    g = build_advice_graph(S, 0.5)
    iu = np.triu_indices(4, 1)
    assert np.all(g.labels[iu] == 1)


def test_advice_all_dissimilar():
    S = np.eye(4)
    g = build_advice_graph(S, 0.95)
    assert np.all(g.labels[np.triu_indices(4, 1)] == -1)


def test_advice_threshold_is_strict():
    S = np.array([[1, 0.96, 0.94], [0.96, 1, 0.95], [0.94, 0.95, 1]])
    g = build_advice_graph(S, 0.95)
    assert g.labels[0, 1] == 1 and g.labels[0, 2] == -1 and g.labels[1, 2] == -1


@pytest.mark.parametrize("bad", [0.0, 1.0, -0.2, 1.5])
def test_advice_rejects_threshold(bad):
    with pytest.raises(ValueError):
        build_advice_graph(np.eye(3), bad)


# LP


@pytest.mark.parametrize("mode", ["full", "lazy"])
def test_lp_all_positive(mode):
    g = AdviceGraph(np.ones((5, 5), dtype=np.int8))
    sol = solve_cluster_lp(g, mode)
    assert abs(sol.objective) < 1e-9
    assert np.max(np.abs(sol.x)) < 1e-9


@pytest.mark.parametrize("mode", ["full", "lazy"])
def test_lp_all_negative(mode):
    g = AdviceGraph(-np.ones((5, 5), dtype=np.int8))
    sol = solve_cluster_lp(g, mode)
    off = ~np.eye(5, dtype=bool)
    assert abs(sol.objective) < 1e-9
    np.testing.assert_allclose(sol.x[off], 1.0, atol=1e-9)


def test_lp_lower_bounds_exact_k5():
    rng = np.random.default_rng(5)
    for _ in range(50):
        g = random_graph(rng, 5)
        sol = solve_cluster_lp(g)
        assert sol.objective <= brute_optimum(g) + 1e-7


def test_lp_modes_agree():
    rng = np.random.default_rng(9)
    for _ in range(10):
        g = random_graph(rng, 9)
        a, b = solve_cluster_lp(g, "full"), solve_cluster_lp(g, "lazy")
        assert abs(a.objective - b.objective) < 1e-7
        assert b.max_triangle_violation() < 1e-6


def test_lp_objective_matches_x():
    g = random_graph(np.random.default_rng(2), 7)
    sol = solve_cluster_lp(g)
    iu, ju = np.triu_indices(7, 1)
    lab, x = g.labels[iu, ju], sol.x[iu, ju]
    assert abs(np.sum(np.where(lab > 0, x, 1 - x)) - sol.objective) < 1e-8


# rounding


def test_rounding_values():
    g = AdviceGraph(np.ones((2, 2), dtype=np.int8))
    for x, want in [(0.10, 0.0), (0.60, 1.0), (0.34975, 0.25)]:
        p = round_distances(np.array([[0, x], [x, 0]]), g)
        assert abs(p[0, 1] - want) < 1e-12


def test_rounding_negative_is_identity():
    g = AdviceGraph(-np.ones((2, 2), dtype=np.int8))
    p = round_distances(np.array([[0, 0.3], [0.3, 0]]), g)
    assert abs(p[0, 1] - 0.3) < 1e-15


def test_rounding_rejects_bad_interval():
    g = AdviceGraph(np.ones((2, 2), dtype=np.int8))
    with pytest.raises(ValueError):
        round_distances(np.zeros((2, 2)), g, a=0.5, b=0.5)


@given(st.lists(st.floats(0, 1), min_size=2, max_size=30))
def test_rounding_monotone_positive(xs):
    xs = np.sort(np.array(xs))
    g = AdviceGraph(np.ones((2, 2), dtype=np.int8))
    ps = [round_distances(np.array([[0, x], [x, 0]]), g)[0, 1] for x in xs]
    assert np.all(np.diff(ps) >= 0)


@pytest.mark.parametrize("sign", [1, -1])
def test_rounding_endpoints(sign):
    g = AdviceGraph(sign * np.ones((2, 2), dtype=np.int8))
    assert round_distances(np.zeros((2, 2)), g)[0, 1] == 0.0
    assert round_distances(np.array([[0, 1.0], [1.0, 0]]), g)[0, 1] == 1.0


def test_rounding_constants():
    assert (ROUNDING_A, ROUNDING_B) == (0.19, 0.5095)


# pivoting


def test_pivot_zero_probabilities(rng):
    assert pivot_cluster(np.zeros((6, 6)), rng).num_clusters == 1


def test_pivot_unit_probabilities(rng):
    p = np.ones((6, 6))
    np.fill_diagonal(p, 0)
    assert pivot_cluster(p, rng).num_clusters == 6


@given(st.integers(0, 2**32 - 1), st.integers(1, 12))
def test_pivot_always_partitions(seed, n):
    rng = np.random.default_rng(seed)
    p = rng.random((n, n))
    p = (p + p.T) / 2
    part = pivot_cluster(p, rng)
    members = sorted(u for c in part.clusters for u in c)
    assert members == list(range(n))


# cost and exact solver


def test_cost_consistent_graph_zero():
    truth = [[0, 3], [1, 2, 4]]
    L = -np.ones((5, 5), dtype=np.int8)
    for c in truth:
        for u, v in itertools.combinations(c, 2):
            L[u, v] = L[v, u] = 1
    g = AdviceGraph(L)
    assert disagreement_cost(Partition.from_clusters(truth), g) == 0


def test_cost_singletons_all_positive():
    g = AdviceGraph(np.ones((6, 6), dtype=np.int8))
    assert disagreement_cost(Partition(np.arange(6)), g) == 15


def test_cost_matches_recount():
    rng = np.random.default_rng(11)
    for _ in range(20):
        g = random_graph(rng, 6)
        part = Partition(rng.integers(0, 3, 6))
        assert disagreement_cost(part, g) == recount(part.clusters, g.labels)


def test_exact_single_vertex():
    g = AdviceGraph(np.zeros((1, 1), dtype=np.int8))
    part = exact_cluster(g)
    assert part.num_clusters == 1 and disagreement_cost(part, g) == 0


def test_exact_triangle():
    g = AdviceGraph.from_pairs(3, [(0, 1), (0, 2)])
    assert disagreement_cost(exact_cluster(g), g) == 1
    assert brute_optimum(g) == 1


def test_exact_negative_pair():
    g = AdviceGraph(-np.ones((2, 2), dtype=np.int8))
    part = exact_cluster(g)
    assert part.num_clusters == 2 and disagreement_cost(part, g) == 0


def test_exact_rejects_large():
    with pytest.raises(ValueError):
        exact_cluster(AdviceGraph(np.ones((13, 13), dtype=np.int8)))


def test_bell_numbers():
    from jsdm.clustering import _restricted_growth_strings

    for n, bell in [(1, 1), (2, 2), (3, 5), (4, 15), (5, 52), (6, 203), (7, 877)]:
        rows = _restricted_growth_strings(n)
        assert rows.shape == (bell, n)
        assert len({tuple(r) for r in rows}) == bell


@given(st.integers(0, 2**32 - 1), st.integers(2, 7))
def test_lp_exact_any_ordering(seed, n):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, n, rng.uniform(0.2, 0.8))
    lp = solve_cluster_lp(g).objective
    best = disagreement_cost(exact_cluster(g), g)
    assert best == brute_optimum(g)
    assert lp <= best + 1e-7
    other = Partition(rng.integers(0, n, n))
    assert best <= disagreement_cost(other, g)


# pipeline


def test_identical_users_one_cluster():
    arr = ula(16)
    covs = [one_ring_covariance(UserGeometry(0.3, 0.1), arr)] * 6
    for seed in range(5):
        part, info = cluster_users(covs, 0.95, rng=np.random.default_rng(seed))
        assert part.num_clusters == 1 and info["cost"] == 0


def test_separated_users_split():
    arr = ula(32)
    covs = [one_ring_covariance(UserGeometry(a, np.deg2rad(2)), arr) for a in (-0.8, -0.8, 0.8, 0.8)]
    part, _ = cluster_users(covs, 0.95, rng=np.random.default_rng(0))
    assert part.clusters == [[0, 1], [2, 3]]


def test_partition_canonical_labels():
    assert Partition(np.array([5, 5, 2, 9])).labels.tolist() == [0, 0, 1, 2]
    with pytest.raises(ValueError):
        Partition.from_clusters([[0, 1], [1, 2]])
    with pytest.raises(ValueError):
        Partition.from_clusters([[0], [2]], size=3)


def test_covariance_objects_accepted():
    a = CovarianceMatrix.from_matrix(np.diag([1.0, 0.0]))
    b = CovarianceMatrix.from_matrix(np.diag([1.0, 1.0]))
    assert abs(dol_similarity(a, b) - 1 / np.sqrt(2)) < 1e-12


# batched pivoting


def test_batched_runs_are_partitions_with_matching_costs():
    rng = np.random.default_rng(4)
    g = random_graph(rng, 9)
    p = round_distances(solve_cluster_lp(g), g)
    labels = pivot_cluster_runs(p, 200, rng)
    assert np.all(labels >= 0)
    costs = disagreement_costs(labels, g)
    for row, c in zip(labels, costs):
        assert c == disagreement_cost(Partition(row), g)


def test_batched_runs_match_single_pass_distribution():
    rng = np.random.default_rng(6)
    while True:
        g = random_graph(rng, 8)
        x = solve_cluster_lp(g).x
        if np.any((x > 1e-6) & (x < 1 - 1e-6)):
            break
    p = round_distances(x, g)
    batch = disagreement_costs(pivot_cluster_runs(p, 20_000, rng), g)
    single = np.array([disagreement_cost(pivot_cluster(p, rng), g) for _ in range(20_000)])
    se = np.sqrt(batch.var() / batch.size + single.var() / single.size)
    assert abs(batch.mean() - single.mean()) < 4 * se
    # cluster-count distribution agrees as well
    nb = np.array([len(set(r)) for r in pivot_cluster_runs(p, 20_000, rng)])
    ns = np.array([pivot_cluster(p, rng).num_clusters for _ in range(20_000)])
    se = np.sqrt(nb.var() / nb.size + ns.var() / ns.size)
    assert abs(nb.mean() - ns.mean()) < 4 * se


def test_batched_extremes(rng):
    assert np.all(pivot_cluster_runs(np.zeros((5, 5)), 10, rng) == 0)
    ones = np.ones((5, 5))
    np.fill_diagonal(ones, 0)
    labels = pivot_cluster_runs(ones, 10, rng)
    assert all(len(set(r)) == 5 for r in labels)


def test_partition_equality_ignores_label_names():
    a = Partition(np.array([5, 5, 2, 7]))
    b = Partition.from_clusters([[0, 1], [2], [3]])
    assert a == b and hash(a) == hash(b)
    assert a != Partition(np.array([0, 1, 1, 2]))
