"""Robust multi-robot pose graph optimization.

Anchor selection and reference-frame propagation, spanning-tree
initialization, Levenberg-Marquardt minimization of the chordal pose-graph
objective

    sum_ij  kappa_ij ||R_j - R_i Rbar_ij||_F^2 + tau_ij ||t_j - t_i - R_i tbar_ij||^2

over the SE(3) product manifold, and graduated non-convexity with a truncated
least squares loss for loop-closure outlier rejection. The gauge is fixed by
eliminating the anchor vertex from the state, so the anchor pose is preserved
bit-exactly.
"""

from __future__ import annotations

import functools
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.integrate
import scipy.optimize
import scipy.sparse
import scipy.sparse.linalg
import scipy.stats

from .geometry import Pose, skew
from .graph import EdgeKind, Measurement, MultiRobotPoseGraph, PoseKey


class DisconnectedGraphError(ValueError):
    """The graph does not reach every vertex from the anchor."""

    def __init__(self, unreachable: list[PoseKey]):
        super().__init__(f"unreachable vertices: {', '.join(str(k) for k in unreachable)}")
        self.unreachable = unreachable


class SingularSystemError(RuntimeError):
    """The normal equations could not be solved."""


@dataclass
class AnchorState:
    """Per-robot record of which robot's origin defines the reference frame."""

    reference_frame_ids: dict[int, int] = field(default_factory=dict)
    origin_priors: dict[int, Pose] = field(default_factory=dict)

    def ensure_robot(self, robot_id: int, origin: Optional[Pose] = None) -> None:
        self.reference_frame_ids.setdefault(robot_id, robot_id)
        self.origin_priors.setdefault(robot_id, origin if origin is not None else Pose.identity())

    def adopt(self, robot_id: int, reference_frame_id: int) -> None:
        current = self.reference_frame_ids.get(robot_id, robot_id)
        if reference_frame_id > current:
            raise ValueError(
                f"robot {robot_id} cannot move from frame {current} to {reference_frame_id}"
            )
        self.reference_frame_ids[robot_id] = reference_frame_id


@dataclass
class AnchorChoice:
    anchor_robot_id: int
    anchor_key: PoseKey
    reference_frame_id: int


def select_anchor(participants: list[tuple[int, int]]) -> AnchorChoice:
    """Pick the rendezvous anchor and the reference frame everyone adopts.

    The participant whose current reference frame id is lowest (ties broken by
    lower robot id) supplies its first pose; every participant then shares that
    minimal reference frame id.
    """
    if not participants:
        raise ValueError("anchor selection requires at least one participant")
    anchor_robot, reference = min(participants, key=lambda p: (p[1], p[0]))
    return AnchorChoice(
        anchor_robot_id=anchor_robot,
        anchor_key=PoseKey(anchor_robot, 0),
        reference_frame_id=reference,
    )


def _anchor_prior(graph: MultiRobotPoseGraph, anchor: PoseKey) -> Pose:
    for key, prior in graph.anchors:
        if key == anchor:
            return prior
    return Pose.identity()


def initialize(graph: MultiRobotPoseGraph, anchor: PoseKey) -> dict[PoseKey, Pose]:
    """Spanning-tree initial estimates rooted at the anchor.

    The anchor takes its prior; every other vertex is the composition of
    measurements along a breadth-first tree that prefers odometry edges over
    loop closures and lower keys first.
    """
    if anchor not in graph.vertices:
        raise ValueError(f"anchor {anchor} not in graph")
    neighbors: dict[PoseKey, list[tuple[int, PoseKey, Measurement, bool]]] = {
        key: [] for key in graph.vertices
    }
    for edge in graph.edges:
        rank = 0 if edge.kind == EdgeKind.ODOMETRY else 1
        neighbors[edge.from_key].append((rank, edge.to_key, edge, True))
        neighbors[edge.to_key].append((rank, edge.from_key, edge, False))
    for adjacency in neighbors.values():
        adjacency.sort(key=lambda item: (item[0], item[1]))

    estimates: dict[PoseKey, Pose] = {anchor: _anchor_prior(graph, anchor)}
    queue: deque[PoseKey] = deque([anchor])
    while queue:
        current = queue.popleft()
        base = estimates[current]
        for _, neighbor, edge, forward in neighbors[current]:
            if neighbor in estimates:
                continue
            relative = edge.relative_pose if forward else edge.relative_pose.inverse()
            estimates[neighbor] = base.compose(relative)
            queue.append(neighbor)
    unreachable = sorted(set(graph.vertices) - set(estimates))
    if unreachable:
        raise DisconnectedGraphError(unreachable)
    return estimates


def objective_value(
    graph: MultiRobotPoseGraph,
    estimates: dict[PoseKey, Pose],
    edge_weights: Optional[np.ndarray] = None,
) -> float:
    """Exact pose-graph objective for the given estimates."""
    total = 0.0
    for index, edge in enumerate(graph.edges):
        try:
            pose_i = estimates[edge.from_key]
            pose_j = estimates[edge.to_key]
        except KeyError as missing:
            raise KeyError(f"missing estimate for vertex {missing.args[0]}") from None
        weight = 1.0 if edge_weights is None else float(edge_weights[index])
        if weight == 0.0:
            continue
        rot_residual = pose_j.rotation - pose_i.rotation @ edge.relative_pose.rotation
        trans_residual = (
            pose_j.translation
            - pose_i.translation
            - pose_i.rotation @ edge.relative_pose.translation
        )
        total += weight * (
            edge.kappa * float(np.sum(rot_residual * rot_residual))
            + edge.tau * float(trans_residual @ trans_residual)
        )
    return total


def edge_squared_residuals(
    graph: MultiRobotPoseGraph, estimates: dict[PoseKey, Pose]
) -> np.ndarray:
    """Per-edge chi-square residuals kappa ||.||_F^2 + tau ||.||^2, unweighted."""
    residuals = np.zeros(len(graph.edges))
    for index, edge in enumerate(graph.edges):
        pose_i = estimates[edge.from_key]
        pose_j = estimates[edge.to_key]
        rot_residual = pose_j.rotation - pose_i.rotation @ edge.relative_pose.rotation
        trans_residual = (
            pose_j.translation
            - pose_i.translation
            - pose_i.rotation @ edge.relative_pose.translation
        )
        residuals[index] = edge.kappa * float(np.sum(rot_residual * rot_residual)) + edge.tau * float(
            trans_residual @ trans_residual
        )
    return residuals


_GENERATORS = [skew(np.eye(3)[k]) for k in range(3)]


def _batch_se3_exp(deltas: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized exponential map: (F, 6) tangents to (F, 3, 3) + (F, 3)."""
    omega = deltas[:, :3]
    rho = deltas[:, 3:]
    count = deltas.shape[0]
    angle = np.linalg.norm(omega, axis=1)
    small = angle < 1e-8
    safe = np.where(small, 1.0, angle)
    k = np.zeros((count, 3, 3))
    k[:, 0, 1] = -omega[:, 2]
    k[:, 0, 2] = omega[:, 1]
    k[:, 1, 0] = omega[:, 2]
    k[:, 1, 2] = -omega[:, 0]
    k[:, 2, 0] = -omega[:, 1]
    k[:, 2, 1] = omega[:, 0]
    k2 = k @ k
    a = np.where(small, 1.0, np.sin(safe) / safe)
    b = np.where(small, 0.5, (1.0 - np.cos(safe)) / safe**2)
    c = np.where(small, 1.0 / 6.0, (safe - np.sin(safe)) / safe**3)
    eye = np.broadcast_to(np.eye(3), (count, 3, 3))
    rotation = eye + a[:, None, None] * k + b[:, None, None] * k2
    v_matrix = eye + b[:, None, None] * k + c[:, None, None] * k2
    translation = np.einsum("fab,fb->fa", v_matrix, rho)
    return rotation, translation


def edge_residual_and_jacobians(
    edge: Measurement, pose_i: Pose, pose_j: Pose, weight: float = 1.0
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stacked 12-vector residual and its Jacobians w.r.t. both endpoints.

    The state perturbation is right-multiplicative, delta = (theta, rho) with
    T(delta) = T * exp(delta). Rows are the weighted rotation residual (9,
    row-major) followed by the weighted translation residual (3).
    """
    sqrt_kappa = math.sqrt(weight * edge.kappa)
    sqrt_tau = math.sqrt(weight * edge.tau)
    r_i, t_i = pose_i.rotation, pose_i.translation
    r_j, t_j = pose_j.rotation, pose_j.translation
    rbar, tbar = edge.relative_pose.rotation, edge.relative_pose.translation

    residual = np.empty(12)
    residual[:9] = sqrt_kappa * (r_j - r_i @ rbar).reshape(-1)
    residual[9:] = sqrt_tau * (t_j - t_i - r_i @ tbar)

    jac_i = np.zeros((12, 6))
    jac_j = np.zeros((12, 6))
    for k, generator in enumerate(_GENERATORS):
        jac_i[:9, k] = -sqrt_kappa * (r_i @ generator @ rbar).reshape(-1)
        jac_j[:9, k] = sqrt_kappa * (r_j @ generator).reshape(-1)
    jac_i[9:, :3] = sqrt_tau * (r_i @ skew(tbar))
    jac_i[9:, 3:] = -sqrt_tau * r_i
    jac_j[9:, 3:] = sqrt_tau * r_j
    return residual, jac_i, jac_j


@dataclass
class OptimizationResult:
    estimates: dict[PoseKey, Pose]
    objective: float
    inlier_flags: dict[int, bool]
    iterations: int
    converged: bool
    objective_trace: list[float]


def _canonical_edge_order(graph: MultiRobotPoseGraph) -> list[int]:
    # Deterministic assembly independent of edge insertion order.
    return sorted(
        range(len(graph.edges)),
        key=lambda idx: (
            graph.edges[idx].from_key,
            graph.edges[idx].to_key,
            graph.edges[idx].kind.value,
        ),
    )


class _EdgeBatch:
    """Vectorized residual/Jacobian evaluation over the active edge set.

    The sparsity pattern of the normal equations is fixed for one optimize
    call, so row/column indices are built once and only the values change per
    iteration.
    """

    def __init__(
        self,
        graph: MultiRobotPoseGraph,
        active: list[int],
        vertex_row: dict[PoseKey, int],
        slot: dict[PoseKey, int],
        weights: Optional[np.ndarray],
    ):
        edges = [graph.edges[idx] for idx in active]
        count = len(edges)
        self.from_rows = np.array([vertex_row[e.from_key] for e in edges])
        self.to_rows = np.array([vertex_row[e.to_key] for e in edges])
        self.from_slots = np.array([slot.get(e.from_key, -1) for e in edges])
        self.to_slots = np.array([slot.get(e.to_key, -1) for e in edges])
        self.rbar = np.stack([e.relative_pose.rotation for e in edges])
        self.tbar = np.stack([e.relative_pose.translation for e in edges])
        w = np.ones(count) if weights is None else np.array([weights[i] for i in active])
        self.sqrt_kappa = np.sqrt(w * np.array([e.kappa for e in edges]))
        self.sqrt_tau = np.sqrt(w * np.array([e.tau for e in edges]))
        self.gen_rbar = [np.einsum("ab,ebc->eac", g, self.rbar) for g in _GENERATORS]
        self.skew_tbar = np.zeros((count, 3, 3))
        self.skew_tbar[:, 0, 1] = -self.tbar[:, 2]
        self.skew_tbar[:, 0, 2] = self.tbar[:, 1]
        self.skew_tbar[:, 1, 0] = self.tbar[:, 2]
        self.skew_tbar[:, 1, 2] = -self.tbar[:, 0]
        self.skew_tbar[:, 2, 0] = -self.tbar[:, 1]
        self.skew_tbar[:, 2, 1] = self.tbar[:, 0]

        # Hessian block pattern: (a, b) pairs over the free endpoints.
        offsets = np.arange(6)
        pattern_rows: list[np.ndarray] = []
        pattern_cols: list[np.ndarray] = []
        self._block_masks: list[np.ndarray] = []
        for slots_a, slots_b in (
            (self.from_slots, self.from_slots),
            (self.from_slots, self.to_slots),
            (self.to_slots, self.from_slots),
            (self.to_slots, self.to_slots),
        ):
            mask = (slots_a >= 0) & (slots_b >= 0)
            self._block_masks.append(mask)
            base_a = 6 * slots_a[mask]
            base_b = 6 * slots_b[mask]
            pattern_rows.append((base_a[:, None, None] + offsets[None, :, None] + np.zeros((1, 1, 6), dtype=int)).reshape(-1))
            pattern_cols.append((base_b[:, None, None] + np.zeros((1, 6, 1), dtype=int) + offsets[None, None, :]).reshape(-1))
        self.pattern_rows = np.concatenate(pattern_rows)
        self.pattern_cols = np.concatenate(pattern_cols)

    def residuals(self, rot: np.ndarray, trans: np.ndarray) -> np.ndarray:
        """(E, 12) weighted residuals for stacked vertex poses."""
        r_i = rot[self.from_rows]
        r_j = rot[self.to_rows]
        t_i = trans[self.from_rows]
        t_j = trans[self.to_rows]
        res_rot = self.sqrt_kappa[:, None, None] * (r_j - r_i @ self.rbar)
        res_tr = self.sqrt_tau[:, None] * (
            t_j - t_i - np.einsum("eab,eb->ea", r_i, self.tbar)
        )
        return np.concatenate([res_rot.reshape(len(r_i), 9), res_tr], axis=1)

    def objective(self, rot: np.ndarray, trans: np.ndarray) -> float:
        residual = self.residuals(rot, trans)
        return float(np.sum(residual * residual))

    def jacobians(self, rot: np.ndarray, trans: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(E, 12, 6) Jacobians for the from- and to-endpoint perturbations."""
        count = len(self.from_rows)
        r_i = rot[self.from_rows]
        r_j = rot[self.to_rows]
        jac_i = np.zeros((count, 12, 6))
        jac_j = np.zeros((count, 12, 6))
        for k in range(3):
            jac_i[:, :9, k] = -self.sqrt_kappa[:, None] * (r_i @ self.gen_rbar[k]).reshape(count, 9)
            jac_j[:, :9, k] = self.sqrt_kappa[:, None] * (r_j @ _GENERATORS[k]).reshape(count, 9)
        jac_i[:, 9:, :3] = self.sqrt_tau[:, None, None] * (r_i @ self.skew_tbar)
        jac_i[:, 9:, 3:] = -self.sqrt_tau[:, None, None] * r_i
        jac_j[:, 9:, 3:] = self.sqrt_tau[:, None, None] * r_j
        return jac_i, jac_j

    def normal_equations(
        self, rot: np.ndarray, trans: np.ndarray, n_state: int
    ) -> tuple[scipy.sparse.csc_matrix, np.ndarray]:
        residual = self.residuals(rot, trans)
        jac_i, jac_j = self.jacobians(rot, trans)
        gradient = np.zeros((n_state // 6, 6))
        for slots, jac in ((self.from_slots, jac_i), (self.to_slots, jac_j)):
            mask = slots >= 0
            contrib = np.einsum("erk,er->ek", jac[mask], residual[mask])
            np.add.at(gradient, slots[mask], contrib)
        values = []
        pairs = ((jac_i, jac_i), (jac_i, jac_j), (jac_j, jac_i), (jac_j, jac_j))
        for (jac_a, jac_b), mask in zip(pairs, self._block_masks):
            blocks = np.einsum("erk,erl->ekl", jac_a[mask], jac_b[mask])
            values.append(blocks.reshape(-1))
        hessian = scipy.sparse.coo_matrix(
            (np.concatenate(values), (self.pattern_rows, self.pattern_cols)),
            shape=(n_state, n_state),
        ).tocsc()
        return hessian, gradient.reshape(-1)


def optimize(
    graph: MultiRobotPoseGraph,
    initial: dict[PoseKey, Pose],
    anchor: PoseKey,
    edge_weights: Optional[np.ndarray] = None,
    max_iterations: int = 100,
    relative_tolerance: float = 1e-9,
    initial_damping: float = 1e-4,
) -> OptimizationResult:
    """Levenberg-Marquardt minimization with the anchor held bit-exactly fixed.

    edge_weights optionally scales each edge's information (used by the
    graduated non-convexity loop); weight-zero edges drop out entirely.
    """
    if anchor not in graph.vertices:
        raise ValueError(f"anchor {anchor} not in graph")
    missing = sorted(set(graph.vertices) - set(initial))
    if missing:
        raise ValueError(f"missing initial estimates: {', '.join(str(k) for k in missing)}")
    if edge_weights is not None and len(edge_weights) != len(graph.edges):
        raise ValueError("edge_weights must have one entry per edge")

    all_keys = sorted(graph.vertices)
    vertex_row = {key: idx for idx, key in enumerate(all_keys)}
    free_keys = [key for key in all_keys if key != anchor]
    slot = {key: idx for idx, key in enumerate(free_keys)}
    order = _canonical_edge_order(graph)
    active = [idx for idx in order if edge_weights is None or float(edge_weights[idx]) > 0.0]

    estimates = dict(initial)
    objective = objective_value(graph, estimates, edge_weights)
    trace = [objective]
    n_state = 6 * len(free_keys)
    if n_state == 0 or not active:
        return OptimizationResult(estimates, objective, _all_inliers(graph), 0, True, trace)

    batch = _EdgeBatch(graph, active, vertex_row, slot, edge_weights)
    rot = np.stack([estimates[key].rotation for key in all_keys])
    trans = np.stack([estimates[key].translation for key in all_keys])
    free_rows = np.array([vertex_row[key] for key in free_keys])

    damping = initial_damping
    iterations = 0
    converged = False
    improvement = math.inf
    for iterations in range(1, max_iterations + 1):
        hessian, gradient = batch.normal_equations(rot, trans, n_state)
        if not np.all(np.isfinite(hessian.data)) or not np.all(np.isfinite(gradient)):
            raise SingularSystemError("normal equations contain non-finite entries")

        accepted = False
        while damping <= 1e12:
            system = hessian + damping * scipy.sparse.identity(n_state, format="csc")
            try:
                step = scipy.sparse.linalg.splu(system).solve(-gradient)
            except RuntimeError as exc:
                raise SingularSystemError(str(exc)) from None
            if not np.all(np.isfinite(step)):
                raise SingularSystemError("singular normal system produced a non-finite step")
            deltas = step.reshape(-1, 6)
            update_rot, update_trans = _batch_se3_exp(deltas)
            trial_rot = rot.copy()
            trial_trans = trans.copy()
            trial_trans[free_rows] = trans[free_rows] + np.einsum(
                "fab,fb->fa", rot[free_rows], update_trans
            )
            trial_rot[free_rows] = rot[free_rows] @ update_rot
            trial_objective = batch.objective(trial_rot, trial_trans)
            if trial_objective < objective:
                rot, trans = trial_rot, trial_trans
                improvement = objective - trial_objective
                objective = trial_objective
                trace.append(objective)
                damping = max(damping / 10.0, 1e-15)
                accepted = True
                break
            damping *= 10.0
        if not accepted:
            break
        if improvement <= relative_tolerance * max(objective, 1.0):
            converged = True
            break
    else:
        iterations = max_iterations

    estimates = {
        key: estimates[key] if key == anchor else Pose(rotation=rot[row], translation=trans[row])
        for key, row in vertex_row.items()
    }
    objective = objective_value(graph, estimates, edge_weights)
    if not converged and iterations < max_iterations:
        # Ran out of useful steps: damping exhausted at a stationary point.
        converged = objective <= trace[0] * (1.0 + 1e-12)
    return OptimizationResult(
        estimates=estimates,
        objective=objective,
        inlier_flags=_all_inliers(graph),
        iterations=iterations,
        converged=converged,
        objective_trace=trace,
    )


def _all_inliers(graph: MultiRobotPoseGraph) -> dict[int, bool]:
    return {
        idx: True for idx, edge in enumerate(graph.edges) if edge.kind != EdgeKind.ODOMETRY
    }


def result_edges_csv(graph: MultiRobotPoseGraph, result: OptimizationResult) -> str:
    """Audit dump: one row per edge with its inlier flag and final residual."""
    residuals = edge_squared_residuals(graph, result.estimates)
    lines = ["from,to,kind,inlier,residual"]
    for index, edge in enumerate(graph.edges):
        inlier = result.inlier_flags.get(index, True)
        lines.append(
            f"{edge.from_key},{edge.to_key},{edge.kind.value},"
            f"{int(inlier)},{residuals[index]:.12g}"
        )
    return "\n".join(lines) + "\n"


@dataclass
class GncParams:
    """Graduated non-convexity schedule for the truncated least squares loss.

    tls_threshold is the squared residual cutoff in chi-square units; an edge
    whose final residual exceeds it is rejected as an outlier.
    """

    tls_threshold: float
    mu_update_factor: float = 1.4
    max_outer_iterations: int = 50
    convergence_tolerance: float = 1e-3

    def __post_init__(self) -> None:
        if self.tls_threshold <= 0 or self.mu_update_factor <= 1.0:
            raise ValueError("tls_threshold must be positive and mu_update_factor > 1")
        if self.max_outer_iterations <= 0 or self.convergence_tolerance <= 0:
            raise ValueError("iteration and tolerance parameters must be positive")

    @staticmethod
    def from_noise_model(quantile: float = 0.997, **kwargs) -> "GncParams":
        return GncParams(tls_threshold=tls_threshold_quantile(quantile), **kwargs)


@functools.lru_cache(maxsize=32)
def tls_threshold_quantile(quantile: float = 0.997) -> float:
    """Residual cutoff such that an inlier edge passes with the given probability.

    Under the declared noise model the edge residual kappa ||R_j - R_i
    Rbar||_F^2 + tau ||t_j - t_i - R_i tbar||^2 is distributed (to first
    order) as 2*X + Y with X, Y independent chi-square(3): the Frobenius norm
    of a small rotation error contributes twice its squared angle. The
    quantile of that mixture is computed by numeric convolution.
    """
    if not 0.0 < quantile < 1.0:
        raise ValueError("quantile must be in (0, 1)")
    chi2 = scipy.stats.chi2(df=3)

    def cdf(s: float) -> float:
        # P(2X + Y <= s) = E_X[ F_Y(s - 2X) ]
        def integrand(x: float) -> float:
            return chi2.pdf(x) * chi2.cdf(s - 2.0 * x)

        upper = s / 2.0
        value, _ = scipy.integrate.quad(integrand, 0.0, upper, limit=200)
        return value

    return float(scipy.optimize.brentq(lambda s: cdf(s) - quantile, 1e-6, 400.0))


def _tls_weights(residuals_sq: np.ndarray, mu: float, threshold_sq: float) -> np.ndarray:
    """Truncated-least-squares surrogate weights for the current mu."""
    lower = threshold_sq * mu / (mu + 1.0)
    upper = threshold_sq * (mu + 1.0) / mu
    weights = np.ones_like(residuals_sq)
    outliers = residuals_sq >= upper
    middle = (~outliers) & (residuals_sq > lower)
    weights[outliers] = 0.0
    if np.any(middle):
        r = np.sqrt(residuals_sq[middle])
        weights[middle] = np.sqrt(threshold_sq * mu * (mu + 1.0)) / r - mu
    return np.clip(weights, 0.0, 1.0)


def gnc_optimize(
    graph: MultiRobotPoseGraph,
    initial: dict[PoseKey, Pose],
    anchor: PoseKey,
    params: GncParams,
) -> OptimizationResult:
    """Graduated non-convexity over the truncated least squares loss.

    Alternates weighted optimization with TLS weight updates while the
    surrogate parameter mu anneals by mu_update_factor. Odometry edges always
    keep weight one. Loop-closure edges whose continuous weight ends above 0.5
    are flagged inliers, and a final re-optimization with hard binary weights
    makes the estimate identical to optimizing with the outliers removed.
    """
    robust = np.array([edge.kind != EdgeKind.ODOMETRY for edge in graph.edges])
    result = optimize(graph, initial, anchor)
    if not np.any(robust):
        return result

    residuals = edge_squared_residuals(graph, result.estimates)
    max_residual = float(residuals[robust].max())
    threshold = params.tls_threshold
    weights = np.ones(len(graph.edges))
    total_iterations = result.iterations

    if 2.0 * max_residual > threshold:
        mu = threshold / (2.0 * max_residual - threshold)
        for _ in range(params.max_outer_iterations):
            new_weights = np.ones(len(graph.edges))
            new_weights[robust] = _tls_weights(residuals[robust], mu, threshold)
            change = float(np.abs(new_weights - weights).max())
            weights = new_weights
            # Annealing solves are warm started, so cheap inner precision is
            # enough; the final refit below runs at full tolerance.
            result = optimize(
                graph,
                result.estimates,
                anchor,
                edge_weights=weights,
                max_iterations=25,
                relative_tolerance=1e-7,
            )
            total_iterations += result.iterations
            residuals = edge_squared_residuals(graph, result.estimates)
            binary = np.all((weights <= 1e-9) | (weights >= 1.0 - 1e-9))
            if change < params.convergence_tolerance and binary:
                break
            mu *= params.mu_update_factor

    final_weights = np.ones(len(graph.edges))
    final_weights[robust & (weights <= 0.5)] = 0.0
    refit = optimize(graph, result.estimates, anchor, edge_weights=final_weights)
    inlier_flags = {
        idx: bool(final_weights[idx] > 0.5)
        for idx, edge in enumerate(graph.edges)
        if edge.kind != EdgeKind.ODOMETRY
    }
    return OptimizationResult(
        estimates=refit.estimates,
        objective=refit.objective,
        inlier_flags=inlier_flags,
        iterations=total_iterations + refit.iterations,
        converged=refit.converged,
        objective_trace=refit.objective_trace,
    )
