import itertools

import numpy as np
import pytest

from mrslam.exchange import CandidateMatch
from mrslam.geometry import Pose
from mrslam.graph import EdgeKind, GraphError, Measurement, MultiRobotPoseGraph, PoseKey
from mrslam.prioritization import (
    ReducedGraph,
    SelectionVector,
    base_laplacian,
    build_reduced_graph,
    candidate_supergradient,
    exhaustive_select,
    fiedler,
    greedy_select,
    lambda2,
    spectral_select,
    weighted_laplacian,
)


def chain_graph(robots: int, length: int) -> MultiRobotPoseGraph:
    graph = MultiRobotPoseGraph()
    for robot in range(robots):
        for frame in range(length):
            graph.add_vertex(PoseKey(robot, frame))
        for frame in range(length - 1):
            graph.add_edge(
                Measurement(
                    PoseKey(robot, frame),
                    PoseKey(robot, frame + 1),
                    Pose.identity(),
                    kappa=1.0,
                    tau=1.0,
                    kind=EdgeKind.ODOMETRY,
                )
            )
    return graph


def selection_from_indices(rg: ReducedGraph, indices, budget) -> SelectionVector:
    omega = np.zeros(rg.candidate_count)
    omega[list(indices)] = 1.0
    return SelectionVector(omega=omega, budget=budget)


def laplacian_summation_oracle(rg: ReducedGraph, omega: np.ndarray) -> np.ndarray:
    """Entrywise sum of per-edge Laplacians, written independently."""
    n = rg.vertex_count
    L = np.zeros((n, n))

    def add_edge(i, j, w):
        L[i, i] += w
        L[j, j] += w
        L[i, j] -= w
        L[j, i] -= w

    for i, j in rg.local_edges:
        add_edge(i, j, 1.0)
    for i, j in rg.fixed_global_edges:
        add_edge(i, j, 1.0)
    for idx, (i, j, score) in enumerate(rg.candidate_edges):
        add_edge(i, j, omega[idx] * score)
    return L


def random_reduced_graph(rng, vertices=None, candidates=None) -> ReducedGraph:
    n = int(vertices if vertices is not None else rng.integers(8, 30))
    m = int(candidates if candidates is not None else rng.integers(3, 10))
    # Two odometry chains as the measured base, then random cross candidates.
    half = n // 2
    local = [(i, i + 1) for i in range(half - 1)]
    local += [(i, i + 1) for i in range(half, n - 1)]
    pairs = set()
    while len(pairs) < m:
        i = int(rng.integers(0, half))
        j = int(rng.integers(half, n))
        pairs.add((i, j))
    cand = [(i, j, float(rng.uniform(0.05, 1.0))) for i, j in sorted(pairs)]
    return ReducedGraph(
        vertex_count=n, local_edges=local, fixed_global_edges=[], candidate_edges=cand
    )


def test_build_reduced_graph_counts():
    graph = chain_graph(2, 3)
    candidates = [CandidateMatch(PoseKey(0, 2), PoseKey(1, 0), 0.8)]
    rg = build_reduced_graph(graph, candidates)
    assert rg.vertex_count == 6
    assert len(rg.local_edges) == 4
    assert len(rg.fixed_global_edges) == 0
    assert rg.candidate_count == 1
    assert rg.candidate_pairs == [(PoseKey(0, 2), PoseKey(1, 0))]


def test_build_reduced_graph_dedups_keeping_max_score():
    graph = chain_graph(2, 3)
    candidates = [
        CandidateMatch(PoseKey(0, 2), PoseKey(1, 0), 0.4),
        CandidateMatch(PoseKey(1, 0), PoseKey(0, 2), 0.9),
    ]
    rg = build_reduced_graph(graph, candidates)
    assert rg.candidate_count == 1
    assert rg.candidate_edges[0][2] == pytest.approx(0.9)


def test_build_reduced_graph_unknown_endpoint():
    graph = chain_graph(2, 3)
    with pytest.raises(GraphError):
        build_reduced_graph(graph, [CandidateMatch(PoseKey(0, 2), PoseKey(1, 99), 0.5)])


def test_same_robot_candidate_rejected():
    with pytest.raises(ValueError):
        CandidateMatch(PoseKey(0, 1), PoseKey(0, 2), 0.5)


def test_fixed_inter_loop_goes_to_fixed_global():
    graph = chain_graph(2, 3)
    graph.add_edge(
        Measurement(PoseKey(0, 1), PoseKey(1, 1), Pose.identity(), 1.0, 1.0, EdgeKind.INTER_LOOP)
    )
    rg = build_reduced_graph(graph, [])
    assert len(rg.fixed_global_edges) == 1
    assert len(rg.local_edges) == 4


def test_incident_edge_sets():
    rg = ReducedGraph(4, [(0, 1), (1, 2)], [(2, 3)], [(0, 3, 0.5)])
    assert rg.incident_edges(1) == [("local", 0), ("local", 1)]
    assert rg.incident_edges(3) == [("fixed_global", 0), ("candidate", 0)]
    assert rg.incident_edges(0) == [("local", 0), ("candidate", 0)]


def test_weighted_laplacian_single_edge():
    rg = ReducedGraph(2, [(0, 1)], [], [])
    L = weighted_laplacian(rg, SelectionVector(np.zeros(0), 0))
    assert np.allclose(L, [[1, -1], [-1, 1]])


def test_weighted_laplacian_candidate_additivity():
    rg = ReducedGraph(2, [(0, 1)], [], [(0, 1, 0.5)])
    L = weighted_laplacian(rg, SelectionVector(np.ones(1), 1))
    assert np.allclose(L, [[1.5, -1.5], [-1.5, 1.5]])


def test_weighted_laplacian_matches_summation_oracle():
    rng = np.random.default_rng(21)
    for _ in range(10):
        rg = random_reduced_graph(rng)
        omega = rng.uniform(0, 1, rg.candidate_count)
        L = weighted_laplacian(rg, SelectionVector(omega, 3))
        assert np.allclose(L, laplacian_summation_oracle(rg, omega), atol=1e-12)
        assert np.allclose(L, L.T)
        assert np.allclose(L.sum(axis=1), 0.0, atol=1e-12)


def test_weighted_laplacian_linear_in_omega():
    rng = np.random.default_rng(22)
    rg = random_reduced_graph(rng)
    base = base_laplacian(rg)
    w1 = rng.uniform(0, 0.5, rg.candidate_count)
    w2 = rng.uniform(0, 0.5, rg.candidate_count)
    lhs = (
        weighted_laplacian(rg, SelectionVector(w1, 1))
        + weighted_laplacian(rg, SelectionVector(w2, 1))
        - base
    )
    rhs = weighted_laplacian(rg, SelectionVector(w1 + w2, 1))
    assert np.allclose(lhs, rhs, atol=1e-12)


def test_fiedler_complete_pair():
    lam, v = fiedler(np.array([[1.0, -1.0], [-1.0, 1.0]]))
    assert lam == pytest.approx(2.0, abs=1e-12)
    assert abs(v.sum()) < 1e-9


def test_fiedler_path_and_cycle():
    # P3 spectrum {0, 1, 3}; C4 spectrum {0, 2, 2, 4}.
    p3 = np.array([[1.0, -1.0, 0.0], [-1.0, 2.0, -1.0], [0.0, -1.0, 1.0]])
    assert fiedler(p3)[0] == pytest.approx(1.0, abs=1e-12)
    rg = ReducedGraph(4, [(0, 1), (1, 2), (2, 3), (0, 3)], [], [])
    lam, _ = fiedler(base_laplacian(rg))
    assert lam == pytest.approx(2.0, abs=1e-12)


def test_fiedler_matches_dense_oracle_and_residual():
    rng = np.random.default_rng(23)
    for _ in range(20):
        rg = random_reduced_graph(rng)
        omega = rng.uniform(0, 1, rg.candidate_count)
        L = weighted_laplacian(rg, SelectionVector(omega, 2))
        lam, v = fiedler(L)
        oracle = np.sort(np.linalg.eigvalsh(L))[1]
        assert lam == pytest.approx(oracle, abs=1e-10)
        assert np.linalg.norm(L @ v - lam * v) <= 1e-8 * max(np.linalg.norm(L), 1.0)
        assert abs(v @ np.ones(len(v))) < 1e-8


def test_fiedler_methods_agree_on_overlap_sizes():
    rng = np.random.default_rng(24)
    for n in (40, 80, 160):
        rg = random_reduced_graph(rng, vertices=n, candidates=6)
        L = weighted_laplacian(rg, SelectionVector(np.ones(6), 6))
        lam_dense, _ = fiedler(L, method="dense")
        lam_ii, v_ii = fiedler(L, method="inverse_iteration")
        assert lam_ii == pytest.approx(lam_dense, abs=1e-8)
        assert np.linalg.norm(L @ v_ii - lam_ii * v_ii) <= 1e-7 * max(np.linalg.norm(L), 1.0)


def test_fiedler_rejects_tiny_matrices():
    with pytest.raises(ValueError):
        fiedler(np.zeros((1, 1)))


def test_greedy_select_examples():
    rg = ReducedGraph(4, [(0, 1), (2, 3)], [], [(0, 2, 0.9), (0, 3, 0.5), (1, 2, 0.7)])
    assert greedy_select(rg, 2).selected_indices() == [0, 2]
    assert greedy_select(rg, 0).selected_indices() == []
    assert greedy_select(rg, 10).selected_indices() == [0, 1, 2]


def test_greedy_ties_break_by_lower_index():
    rg = ReducedGraph(4, [(0, 1), (2, 3)], [], [(0, 2, 0.7), (0, 3, 0.7), (1, 2, 0.7)])
    assert greedy_select(rg, 2).selected_indices() == [0, 1]


def test_selection_budget_invariant():
    rng = np.random.default_rng(25)
    for _ in range(10):
        rg = random_reduced_graph(rng)
        budget = int(rng.integers(1, rg.candidate_count + 2))
        for select in (greedy_select, spectral_select):
            sel = select(rg, budget)
            assert sel.is_binary()
            assert len(sel.selected_indices()) == min(budget, rg.candidate_count)


def test_supergradient_matches_finite_differences():
    rng = np.random.default_rng(26)
    checked = 0
    for _ in range(20):
        rg = random_reduced_graph(rng)
        omega = rng.uniform(0.2, 0.8, rg.candidate_count)
        L = weighted_laplacian(rg, SelectionVector(omega, 3))
        values = np.linalg.eigvalsh(L)
        if values[2] - values[1] <= 1e-6:  # skip near-degenerate lambda_2
            continue
        lam, v = fiedler(L)
        grad = candidate_supergradient(rg, v)
        eps = 1e-6
        for idx in range(rg.candidate_count):
            shifted = omega.copy()
            shifted[idx] += eps
            lam_plus = fiedler(weighted_laplacian(rg, SelectionVector(shifted, 3)))[0]
            shifted[idx] -= 2 * eps
            lam_minus = fiedler(weighted_laplacian(rg, SelectionVector(shifted, 3)))[0]
            fd = (lam_plus - lam_minus) / (2 * eps)
            assert grad[idx] == pytest.approx(fd, abs=1e-5)
        checked += 1
    assert checked >= 5


def test_lambda2_monotone_in_added_candidates():
    rng = np.random.default_rng(27)
    for _ in range(20):
        rg = random_reduced_graph(rng)
        m = rg.candidate_count
        subset = [i for i in range(m) if rng.random() < 0.5]
        lam_before = lambda2(rg, selection_from_indices(rg, subset, m))
        remaining = [i for i in range(m) if i not in subset]
        if not remaining:
            continue
        extra = int(rng.choice(remaining))
        lam_after = lambda2(rg, selection_from_indices(rg, subset + [extra], m))
        assert lam_after >= lam_before - 1e-10


def test_spectral_selects_all_when_budget_saturates():
    rng = np.random.default_rng(28)
    rg = random_reduced_graph(rng)
    sel = spectral_select(rg, rg.candidate_count + 3)
    assert sel.selected_indices() == list(range(rg.candidate_count))
    full = lambda2(rg, sel)
    assert full == pytest.approx(lambda2(rg, selection_from_indices(rg, range(rg.candidate_count), 1)))


def test_spectral_dominates_greedy():
    rng = np.random.default_rng(29)
    for _ in range(20):
        rg = random_reduced_graph(rng)
        budget = int(rng.integers(1, max(2, rg.candidate_count)))
        lam_spectral = lambda2(rg, spectral_select(rg, budget))
        lam_greedy = lambda2(rg, greedy_select(rg, budget))
        assert lam_spectral >= lam_greedy - 1e-12


def test_two_chain_instance_spectral_beats_greedy():
    # Two four-pose chains. Two high-score candidates join the same end region;
    # one lower-score candidate joins the far ends. With budget 2 the best pair
    # spans the graph; greedy takes the redundant parallel pair.
    rg = ReducedGraph(
        vertex_count=8,
        local_edges=[(0, 1), (1, 2), (2, 3), (4, 5), (5, 6), (6, 7)],
        fixed_global_edges=[],
        candidate_edges=[(3, 7, 0.9), (2, 6, 0.85), (0, 4, 0.6)],
    )
    exhaustive = exhaustive_select(rg, 2)
    best_pair = set(exhaustive.selected_indices())
    assert 2 in best_pair  # the far-end edge is part of the optimum
    greedy = greedy_select(rg, 2)
    assert greedy.selected_indices() == [0, 1]
    spectral = spectral_select(rg, 2)
    assert lambda2(rg, spectral) == pytest.approx(lambda2(rg, exhaustive), abs=1e-9)
    assert lambda2(rg, greedy) < lambda2(rg, exhaustive) - 1e-6


def test_bootstrap_selects_top_score_connector_first():
    # Disconnected chains; the graph must be connected before ascent, using the
    # highest-score candidate crossing the cut.
    rg = ReducedGraph(
        vertex_count=6,
        local_edges=[(0, 1), (1, 2), (3, 4), (4, 5)],
        fixed_global_edges=[],
        candidate_edges=[(0, 3, 0.3), (1, 4, 0.95), (2, 5, 0.7), (0, 4, 0.6)],
    )
    sel = spectral_select(rg, 3)
    assert 1 in sel.selected_indices()
    assert len(sel.selected_indices()) == 3


def test_spectral_degrades_to_greedy_when_unconnectable():
    # Three chains, candidates only between the first two: lambda_2 stays 0.
    rg = ReducedGraph(
        vertex_count=9,
        local_edges=[(0, 1), (1, 2), (3, 4), (4, 5), (6, 7), (7, 8)],
        fixed_global_edges=[],
        candidate_edges=[(0, 3, 0.9), (1, 4, 0.8), (2, 5, 0.7)],
    )
    sel = spectral_select(rg, 2)
    greedy = greedy_select(rg, 2)
    assert sel.selected_indices() == greedy.selected_indices()


def test_exhaustive_small_cases():
    rg = ReducedGraph(4, [(0, 1), (2, 3)], [], [(0, 2, 0.9)])
    assert exhaustive_select(rg, 1).selected_indices() == [0]
    rg2 = ReducedGraph(4, [(0, 1), (2, 3)], [], [(0, 2, 0.9), (1, 3, 0.8)])
    assert exhaustive_select(rg2, 2).selected_indices() == [0, 1]


def test_exhaustive_rejects_huge_enumerations():
    cand = [(0, i + 1, 0.5) for i in range(60)]
    rg = ReducedGraph(61, [(i, i + 1) for i in range(60)], [], cand)
    with pytest.raises(ValueError):
        exhaustive_select(rg, 30)


def test_spectral_near_optimal_on_small_instances():
    rng = np.random.default_rng(31)
    hits = 0
    total = 0
    for _ in range(25):
        rg = random_reduced_graph(rng, candidates=int(rng.integers(4, 9)))
        budget = int(rng.integers(1, 4))
        lam_best = lambda2(rg, exhaustive_select(rg, budget))
        lam_spec = lambda2(rg, spectral_select(rg, budget))
        assert lam_spec <= lam_best + 1e-9
        total += 1
        if lam_spec >= lam_best - 1e-9:
            hits += 1
    assert hits / total >= 0.7
