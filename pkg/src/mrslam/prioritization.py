"""Budgeted inter-robot loop-closure candidate prioritization.

The reduced multi-robot pose graph carries unit-weight edges for everything
already measured (odometry, intra-robot loops, verified inter-robot loops) and
score-weighted edges for the unverified candidates. Selection picks a budgeted
subset of candidates, either greedily by score or by maximizing the algebraic
connectivity (second-smallest Laplacian eigenvalue) of the augmented graph.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from .exchange import CandidateMatch
from .graph import EdgeKind, GraphError, MultiRobotPoseGraph, PoseKey

# Dense eigendecomposition below this size; shifted inverse iteration above.
_DENSE_EIG_LIMIT = 512

# Eigenvalues within this distance of lambda_2 are treated as one cluster when
# picking the ascent direction.
_EIG_CLUSTER_GAP = 1e-6


@dataclass
class ReducedGraph:
    """Index-space topology over which candidate prioritization is posed."""

    vertex_count: int
    local_edges: list[tuple[int, int]]
    fixed_global_edges: list[tuple[int, int]]
    candidate_edges: list[tuple[int, int, float]]
    keys: list[PoseKey] = field(default_factory=list)
    candidate_pairs: list[tuple[PoseKey, PoseKey]] = field(default_factory=list)

    def __post_init__(self) -> None:
        for name, edges in (("local", self.local_edges), ("fixed_global", self.fixed_global_edges)):
            seen: set[tuple[int, int]] = set()
            for i, j in edges:
                self._check_pair(i, j, name)
                if (i, j) in seen:
                    raise ValueError(f"duplicate {name} edge ({i}, {j})")
                seen.add((i, j))
        seen_c: set[tuple[int, int]] = set()
        for i, j, score in self.candidate_edges:
            self._check_pair(i, j, "candidate")
            if not 0.0 <= score <= 1.0:
                raise ValueError(f"candidate score {score} outside [0, 1]")
            if (i, j) in seen_c:
                raise ValueError(f"duplicate candidate edge ({i}, {j})")
            seen_c.add((i, j))

    def _check_pair(self, i: int, j: int, name: str) -> None:
        if not (0 <= i < self.vertex_count and 0 <= j < self.vertex_count):
            raise ValueError(f"{name} edge ({i}, {j}) out of range")
        if i == j:
            raise ValueError(f"{name} self-loop at vertex {i}")

    @property
    def candidate_count(self) -> int:
        return len(self.candidate_edges)

    def candidate_scores(self) -> np.ndarray:
        return np.array([s for _, _, s in self.candidate_edges])

    def incident_edges(self, vertex: int) -> list[tuple[str, int]]:
        """delta(i): (edge list name, index) pairs of edges touching a vertex."""
        incident = []
        for name, edges in (("local", self.local_edges), ("fixed_global", self.fixed_global_edges)):
            incident.extend((name, idx) for idx, (i, j) in enumerate(edges) if vertex in (i, j))
        incident.extend(
            ("candidate", idx) for idx, (i, j, _) in enumerate(self.candidate_edges) if vertex in (i, j)
        )
        return incident


@dataclass
class SelectionVector:
    """Per-candidate selection weights with a budget.

    Binary after rounding; fractional in [0, 1] while the relaxation runs.
    """

    omega: np.ndarray
    budget: int

    def __post_init__(self) -> None:
        self.omega = np.asarray(self.omega, dtype=float)

    def selected_indices(self) -> list[int]:
        return [int(i) for i in np.flatnonzero(self.omega > 0.5)]

    def is_binary(self, tol: float = 1e-12) -> bool:
        return bool(np.all((np.abs(self.omega) <= tol) | (np.abs(self.omega - 1.0) <= tol)))


def build_reduced_graph(
    graph: MultiRobotPoseGraph, candidates: list[CandidateMatch]
) -> ReducedGraph:
    """Project a pose graph plus scored candidates into dense index space.

    Duplicate candidates on one vertex pair are merged keeping the highest
    score. Candidate endpoints must exist in the graph.
    """
    keys = sorted(graph.vertices)
    index = {key: i for i, key in enumerate(keys)}

    def as_edge(a: PoseKey, b: PoseKey) -> tuple[int, int]:
        i, j = index[a], index[b]
        return (i, j) if i < j else (j, i)

    local: dict[tuple[int, int], None] = {}
    fixed: dict[tuple[int, int], None] = {}
    for edge in graph.edges:
        pair = as_edge(edge.from_key, edge.to_key)
        if edge.kind == EdgeKind.INTER_LOOP:
            fixed[pair] = None
        else:
            local[pair] = None
    best: dict[tuple[int, int], tuple[float, tuple[PoseKey, PoseKey]]] = {}
    for candidate in candidates:
        if candidate.vertex_a not in index:
            raise GraphError(f"candidate endpoint {candidate.vertex_a} not in graph")
        if candidate.vertex_b not in index:
            raise GraphError(f"candidate endpoint {candidate.vertex_b} not in graph")
        pair = as_edge(candidate.vertex_a, candidate.vertex_b)
        if pair not in best or candidate.score > best[pair][0]:
            best[pair] = (candidate.score, candidate.pair)
    ordered = sorted(best)
    return ReducedGraph(
        vertex_count=len(keys),
        local_edges=sorted(local),
        fixed_global_edges=sorted(fixed),
        candidate_edges=[(i, j, best[(i, j)][0]) for i, j in ordered],
        keys=keys,
        candidate_pairs=[best[pair][1] for pair in ordered],
    )


def _accumulate_edges(L: np.ndarray, edges: list[tuple[int, int]], weights: np.ndarray) -> None:
    if not edges:
        return
    rows = np.array([e[0] for e in edges])
    cols = np.array([e[1] for e in edges])
    np.add.at(L, (rows, rows), weights)
    np.add.at(L, (cols, cols), weights)
    np.subtract.at(L, (rows, cols), weights)
    np.subtract.at(L, (cols, rows), weights)


def base_laplacian(rg: ReducedGraph) -> np.ndarray:
    """Laplacian of the already-measured topology (unit edge weights)."""
    L = np.zeros((rg.vertex_count, rg.vertex_count))
    for edges in (rg.local_edges, rg.fixed_global_edges):
        _accumulate_edges(L, edges, np.ones(len(edges)))
    return L


def weighted_laplacian(rg: ReducedGraph, sel: SelectionVector) -> np.ndarray:
    """Augmented Laplacian: base plus score-weighted selected candidate edges."""
    if sel.omega.shape[0] != rg.candidate_count:
        raise ValueError(
            f"selection has {sel.omega.shape[0]} entries for {rg.candidate_count} candidates"
        )
    L = base_laplacian(rg)
    pairs = [(i, j) for i, j, _ in rg.candidate_edges]
    weights = sel.omega * rg.candidate_scores()
    _accumulate_edges(L, pairs, weights)
    return L


def _fiedler_dense(L: np.ndarray) -> tuple[float, np.ndarray]:
    values, vectors = np.linalg.eigh((L + L.T) / 2.0)
    lam2 = float(values[1])
    n = L.shape[0]
    ones = np.ones(n) / math.sqrt(n)
    cluster = [k for k in range(n) if abs(values[k] - lam2) <= max(1e-12, 1e-12 * abs(values[-1]))]
    best_vec = None
    best_norm = -1.0
    for k in cluster:
        v = vectors[:, k]
        v = v - ones * float(ones @ v)
        norm = float(np.linalg.norm(v))
        if norm > best_norm:
            best_norm = norm
            best_vec = v / norm if norm > 0 else v
    assert best_vec is not None
    return lam2, best_vec


def _fiedler_inverse_iteration(L: np.ndarray, max_iterations: int = 2000) -> tuple[float, np.ndarray]:
    n = L.shape[0]
    scale = max(float(np.trace(L)) / n, 1e-12)
    shift = 1e-8 * scale
    sparse_l = scipy.sparse.csc_matrix(L + shift * np.eye(n))
    solver = scipy.sparse.linalg.splu(sparse_l)
    ones = np.ones(n) / math.sqrt(n)
    x = np.arange(1, n + 1, dtype=float)
    x -= ones * float(ones @ x)
    x /= np.linalg.norm(x)
    lam_prev = math.inf
    lam = 0.0
    for _ in range(max_iterations):
        x = solver.solve(x)
        x -= ones * float(ones @ x)
        norm = float(np.linalg.norm(x))
        if norm == 0.0:
            raise ValueError("inverse iteration collapsed onto the all-ones kernel")
        x /= norm
        lam = float(x @ (L @ x))
        if abs(lam - lam_prev) <= 1e-13 * max(scale, 1.0):
            break
        lam_prev = lam
    return lam, x


def fiedler(L: np.ndarray, method: str = "auto") -> tuple[float, np.ndarray]:
    """Algebraic connectivity and a Fiedler vector orthogonal to the ones vector.

    Dense symmetric eigendecomposition up to 512 vertices; shifted inverse
    iteration with the all-ones kernel deflated beyond that (or on request).
    """
    L = np.asarray(L, dtype=float)
    if L.ndim != 2 or L.shape[0] != L.shape[1]:
        raise ValueError("Laplacian must be square")
    if L.shape[0] < 2:
        raise ValueError("algebraic connectivity needs at least 2 vertices")
    if method == "auto":
        method = "dense" if L.shape[0] <= _DENSE_EIG_LIMIT else "inverse_iteration"
    if method == "dense":
        return _fiedler_dense(L)
    if method == "inverse_iteration":
        return _fiedler_inverse_iteration(L)
    raise ValueError(f"unknown fiedler method {method!r}")


def lambda2(rg: ReducedGraph, sel: SelectionVector) -> float:
    return _lambda2_value(weighted_laplacian(rg, sel))


def _lambda2_value(L: np.ndarray) -> float:
    """Second-smallest eigenvalue only; cheaper than a full Fiedler pair."""
    if L.shape[0] <= _DENSE_EIG_LIMIT:
        return float(np.linalg.eigvalsh((L + L.T) / 2.0)[1])
    return _fiedler_inverse_iteration(L)[0]


def _lambda2_of_subset(rg: ReducedGraph, indices) -> float:
    omega = np.zeros(rg.candidate_count)
    omega[list(indices)] = 1.0
    return _lambda2_value(weighted_laplacian(rg, SelectionVector(omega, len(indices))))


def candidate_supergradient(rg: ReducedGraph, fiedler_vector: np.ndarray) -> np.ndarray:
    """Per-candidate derivative estimate of lambda_2: kappa_e (v_i - v_j)^2."""
    v = np.asarray(fiedler_vector, dtype=float)
    grad = np.empty(rg.candidate_count)
    for idx, (i, j, score) in enumerate(rg.candidate_edges):
        diff = v[i] - v[j]
        grad[idx] = score * diff * diff
    return grad


def greedy_select(rg: ReducedGraph, budget: int) -> SelectionVector:
    """Select the budget highest-scoring candidates, ties by lowest index."""
    m = rg.candidate_count
    omega = np.zeros(m)
    if budget > 0 and m > 0:
        scores = rg.candidate_scores()
        order = sorted(range(m), key=lambda i: (-scores[i], i))
        omega[order[: min(budget, m)]] = 1.0
    return SelectionVector(omega=omega, budget=budget)


def _binary_selection(indices: list[int], m: int, budget: int) -> SelectionVector:
    omega = np.zeros(m)
    omega[indices] = 1.0
    return SelectionVector(omega=omega, budget=budget)


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, x: int) -> int:
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a: int, b: int) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        self.parent[rb] = ra
        return True


def _project_capped_box(x: np.ndarray, cap: float, rounds: int = 100, tol: float = 1e-10) -> np.ndarray:
    """Alternating projection onto {y in [0,1]^k : sum(y) <= cap}."""
    y = np.clip(x, 0.0, 1.0)
    for _ in range(rounds):
        previous = y
        excess = y.sum() - cap
        if excess > 0.0:
            y = y - excess / y.shape[0]
        y = np.clip(y, 0.0, 1.0)
        if float(np.abs(y - previous).max()) < tol:
            break
    return y


def _ascent_direction(
    L: np.ndarray, rg: ReducedGraph, free: list[int]
) -> tuple[float, np.ndarray]:
    """lambda_2 and the steepest supergradient over the free candidates.

    With an eigenvalue cluster at lambda_2 (gap <= 1e-6), the cluster vector
    yielding the largest supergradient norm is used.
    """
    n = L.shape[0]
    if n <= _DENSE_EIG_LIMIT:
        values, vectors = np.linalg.eigh(L)
    else:
        lam, vec = _fiedler_inverse_iteration(L)
        values = np.array([0.0, lam])
        vectors = np.column_stack([np.ones(n) / math.sqrt(n), vec])
    lam2 = float(values[1])
    ones = np.ones(n) / math.sqrt(n)
    best_grad: np.ndarray | None = None
    best_norm = -1.0
    for k in range(1, len(values)):
        if values[k] - lam2 > _EIG_CLUSTER_GAP:
            break
        v = vectors[:, k]
        v = v - ones * float(ones @ v)
        norm = float(np.linalg.norm(v))
        if norm < 1e-9:
            continue
        v = v / norm
        grad_all = candidate_supergradient(rg, v)
        grad = grad_all[free]
        grad_norm = float(np.linalg.norm(grad))
        if grad_norm > best_norm:
            best_norm = grad_norm
            best_grad = grad
    if best_grad is None:
        best_grad = np.zeros(len(free))
    return lam2, best_grad


def _round_omega(omega: np.ndarray, free: list[int], scores: np.ndarray, count: int) -> list[int]:
    """Top entries of the relaxed selection; ties by score, then index."""
    return sorted(free, key=lambda idx: (-omega[idx], -scores[idx], idx))[:count]


def _swap_refine(
    rg: ReducedGraph,
    selected: set[int],
    locked: set[int],
    omega: np.ndarray,
    max_evaluations: int,
) -> tuple[set[int], float]:
    """1-exchange local search on binary selections, first improvement.

    Repairs the information lost by rounding a near-uniform relaxed optimum.
    Locked (bootstrap) edges are never swapped out. Deterministic: drop order
    prefers low relaxed weight then low score; insertion order the reverse.
    """
    scores = rg.candidate_scores()
    lam = _lambda2_of_subset(rg, selected)
    evaluations = 0
    improved = True
    while improved and evaluations < max_evaluations:
        improved = False
        outs = sorted(selected - locked, key=lambda i: (omega[i], scores[i], i))
        ins = sorted(
            (i for i in range(rg.candidate_count) if i not in selected),
            key=lambda i: (-omega[i], -scores[i], i),
        )
        for out_idx in outs:
            for in_idx in ins:
                trial = (selected - {out_idx}) | {in_idx}
                lam_trial = _lambda2_of_subset(rg, trial)
                evaluations += 1
                if lam_trial > lam + 1e-12:
                    selected, lam = trial, lam_trial
                    improved = True
                    break
                if evaluations >= max_evaluations:
                    break
            if improved or evaluations >= max_evaluations:
                break
    return selected, lam


def spectral_select(rg: ReducedGraph, budget: int) -> SelectionVector:
    """Maximize algebraic connectivity over budgeted candidate subsets.

    Projected supergradient ascent on the box-and-budget relaxation, warm
    started from the greedy selection, with greedy bootstrap edges forced in
    whenever the measured topology is disconnected. The relaxed result is
    rounded to the budget-many largest weights and then repaired by a bounded
    1-swap local search; the outcome is returned only when it does not lose to
    the greedy selection, so lambda_2(spectral) >= lambda_2(greedy) always
    holds.
    """
    m = rg.candidate_count
    if budget <= 0 or m == 0:
        return SelectionVector(omega=np.zeros(m), budget=budget)
    if budget >= m:
        return SelectionVector(omega=np.ones(m), budget=budget)

    greedy = greedy_select(rg, budget)
    lam_greedy = lambda2(rg, greedy)
    scores = rg.candidate_scores()

    components = _UnionFind(rg.vertex_count)
    for i, j in itertools.chain(rg.local_edges, rg.fixed_global_edges):
        components.union(i, j)
    candidate_order = sorted(range(m), key=lambda idx: (-scores[idx], idx))
    bootstrap: list[int] = []
    roots = {components.find(i) for i in range(rg.vertex_count)}
    if len(roots) > 1:
        for idx in candidate_order:
            i, j, _ = rg.candidate_edges[idx]
            if components.union(i, j):
                bootstrap.append(idx)
                if len(bootstrap) == budget:
                    break
        roots = {components.find(i) for i in range(rg.vertex_count)}
        if len(roots) > 1:
            # Even the full candidate set cannot connect the graph; lambda_2
            # is pinned at zero and the relaxation has no signal.
            return greedy

    if len(bootstrap) >= budget:
        seed_omega = np.zeros(m)
        seed_omega[bootstrap[:budget]] = 1.0
        swap_budget = 400 if rg.vertex_count <= 64 else max(60, 4 * m)
        refined, refined_lam = _swap_refine(
            rg, set(bootstrap[:budget]), set(), seed_omega, swap_budget
        )
        chosen = _binary_selection(sorted(refined), m, budget)
        return chosen if refined_lam >= lam_greedy - 1e-12 else greedy

    locked = set(bootstrap)
    free = [idx for idx in range(m) if idx not in locked]
    free_budget = budget - len(bootstrap)

    omega = np.zeros(m)
    omega[bootstrap] = 1.0
    for idx in greedy.selected_indices():
        if idx not in locked:
            omega[idx] = 1.0
    free_arr = np.array(free, dtype=int)
    omega[free_arr] = _project_capped_box(omega[free_arr], float(free_budget))

    best_rounded: set[int] = set(bootstrap) | set(_round_omega(omega, free, scores, free_budget))
    best_rounded_lam = _lambda2_of_subset(rg, best_rounded)

    # Per-eigendecomposition budgets keep large instances under the one-second
    # runtime bound; small instances are cheap enough for exhaustive polish.
    n = rg.vertex_count
    if n <= 64:
        ascent_evals, swap_evals = 2000, 400
    elif n <= 128:
        ascent_evals, swap_evals = 250, 120
    elif n <= 160:
        ascent_evals, swap_evals = 120, 80
    else:
        ascent_evals, swap_evals = 30, 30
    max_ascent_iterations = 50 if n <= 160 else 8
    evaluations = 0

    lam = lambda2(rg, SelectionVector(omega=omega, budget=budget))
    for _ in range(max_ascent_iterations):
        if evaluations >= ascent_evals:
            break
        L = weighted_laplacian(rg, SelectionVector(omega=omega, budget=budget))
        _, grad = _ascent_direction(L, rg, free)
        grad_norm = float(np.linalg.norm(grad))
        if grad_norm < 1e-15:
            break
        step = 1.0 / grad_norm
        improved = False
        lam_trial = lam
        trial_free = omega[free_arr]
        for _ in range(12):
            trial_free = _project_capped_box(omega[free_arr] + step * grad, float(free_budget))
            trial = omega.copy()
            trial[free_arr] = trial_free
            lam_trial = lambda2(rg, SelectionVector(omega=trial, budget=budget))
            evaluations += 1
            if lam_trial > lam:
                improved = True
                break
            step *= 0.5
        if not improved:
            break
        omega[free_arr] = trial_free
        relative_gain = (lam_trial - lam) / max(abs(lam), 1e-15)
        lam = lam_trial
        rounded = set(bootstrap) | set(_round_omega(omega, free, scores, free_budget))
        rounded_lam = _lambda2_of_subset(rg, rounded)
        evaluations += 1
        if rounded_lam > best_rounded_lam:
            best_rounded, best_rounded_lam = rounded, rounded_lam
        if relative_gain < 1e-6:
            break

    # Bootstrap edges are pinned through the relaxation but stay exchangeable
    # here: a swap that disconnected the graph would drop lambda_2 to zero and
    # is never an improvement, so connectivity maintains itself.
    max_evaluations = swap_evals if n <= 64 else min(swap_evals, max(60, 4 * m))
    starts = [best_rounded]
    if n <= 64:
        starts.append(set(greedy.selected_indices()))
    refined: set[int] = best_rounded
    refined_lam = -math.inf
    for start in starts:
        candidate_set, candidate_lam = _swap_refine(rg, start, set(), omega, max_evaluations)
        if candidate_lam > refined_lam:
            refined, refined_lam = candidate_set, candidate_lam
    chosen = _binary_selection(sorted(refined), m, budget)
    if refined_lam >= lam_greedy - 1e-12:
        return chosen
    return greedy


def exhaustive_select(rg: ReducedGraph, budget: int) -> SelectionVector:
    """Brute-force maximizer of lambda_2 over all budget-sized subsets.

    Test oracle for small instances; ties resolve to the lexicographically
    first subset. Refuses instances with more than 10^6 subsets.
    """
    m = rg.candidate_count
    if budget <= 0 or m == 0:
        return SelectionVector(omega=np.zeros(m), budget=budget)
    if budget >= m:
        return SelectionVector(omega=np.ones(m), budget=budget)
    if math.comb(m, budget) > 10**6:
        raise ValueError(f"C({m}, {budget}) subsets exceed the enumeration limit")
    best_subset: tuple[int, ...] | None = None
    best_lam = -math.inf
    for subset in itertools.combinations(range(m), budget):
        lam = lambda2(rg, _binary_selection(list(subset), m, budget))
        if lam > best_lam + 1e-15:
            best_lam = lam
            best_subset = subset
    assert best_subset is not None
    return _binary_selection(list(best_subset), m, budget)
