"""Benchmark experiments: prioritization curves and exchange-policy sweeps.

The curve experiment replays the worst-case rendezvous offline: all
candidates are known up front, one budget-sized batch is verified per round,
and after every round the algebraic connectivity, pose-graph objective, and
ATE against the all-candidates reference estimate are recorded. Geometric
verification results are cached per candidate pair, so different
prioritization modes see identical measurements and their curves meet at the
same terminal state.
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import backend
from .exchange import (
    CandidateMatch,
    account_bytes,
    monolog_plan,
    vertex_cover_plan,
)
from .formats import ParseError, parse_g2o, parse_tum
from .graph import (
    MultiRobotPoseGraph,
    PoseKey,
    Trajectory,
    TrajectoryPoint,
    trajectory_from_estimates,
)
from .generators import clustered_candidates, worst_case_two_robot_scenario
from .metrics import ate_rmse
from .prioritization import (
    base_laplacian,
    build_reduced_graph,
    exhaustive_select,
    fiedler,
    greedy_select,
    spectral_select,
)
from .sim import Scenario, simulate_geometric_verification, simulate_odometry, simulate_place_recognition

CURVE_CSV_HEADER = ["mode", "seed", "percent_computed", "lambda2", "objective", "ate", "cumulative_bytes"]
EXCHANGE_CSV_HEADER = ["seed", "budget", "monolog_bytes", "cover_bytes"]

PRIORITIZATION_MODES = ("greedy", "spectral", "exhaustive")
EXCHANGE_MODES = ("monolog", "vertex_cover")


@dataclass
class ExperimentConfig:
    scenario_factory: Callable[[int], Scenario]
    prioritization_modes: tuple[str, ...] = ("greedy", "spectral")
    exchange_mode: str = "monolog"
    budget: int = 1
    seeds: tuple[int, ...] = (0,)
    budgets: tuple[int, ...] = tuple(range(1, 9))
    output_dir: Path | None = None

    def __post_init__(self) -> None:
        if not self.seeds:
            raise ValueError("at least one seed is required")
        for mode in self.prioritization_modes:
            if mode not in PRIORITIZATION_MODES:
                raise ValueError(f"unknown prioritization mode {mode!r}")
        if self.exchange_mode not in EXCHANGE_MODES:
            raise ValueError(f"unknown exchange mode {self.exchange_mode!r}")
        if self.budget < 1:
            raise ValueError("budget must be at least 1")


def default_curve_config(**kwargs) -> ExperimentConfig:
    return ExperimentConfig(scenario_factory=worst_case_two_robot_scenario, **kwargs)


class _CurveProblem:
    """The frozen single-rendezvous problem shared by every prioritization mode."""

    def __init__(self, scenario: Scenario):
        if sorted(scenario.trajectories) != [0, 1]:
            raise ValueError("curve experiment expects exactly robots 0 and 1")
        self.scenario = scenario
        self.graph = MultiRobotPoseGraph()
        for robot, traj in sorted(scenario.trajectories.items()):
            for point in traj:
                self.graph.add_vertex(point.key)
            rng = np.random.default_rng(np.random.SeedSequence((scenario.seed, 1, robot)))
            for edge in simulate_odometry(traj, scenario.odometry_noise, rng):
                self.graph.add_edge(edge)
        rng = np.random.default_rng(np.random.SeedSequence((scenario.seed, 2, 0)))
        self.candidates = simulate_place_recognition(
            scenario.trajectories[0],
            scenario.trajectories[1],
            scenario.place_recognition,
            rng,
        )
        if not self.candidates:
            raise ValueError("scenario produced no loop-closure candidates")
        self.gt_poses = {}
        for traj in scenario.trajectories.values():
            self.gt_poses.update(traj.pose_map())
        self.anchor = PoseKey(0, 0)
        self.graph.add_anchor(self.anchor, scenario.trajectories[0].points[0].pose)
        self._measurements = {
            c.pair: simulate_geometric_verification(
                c,
                self.gt_poses,
                scenario.verification_noise,
                scenario.place_recognition,
                np.random.default_rng(
                    np.random.SeedSequence(
                        (
                            scenario.seed,
                            3,
                            c.vertex_a.robot_id,
                            c.vertex_a.frame_id,
                            c.vertex_b.robot_id,
                            c.vertex_b.frame_id,
                        )
                    )
                ),
            )
            for c in self.candidates
        }
        self.reference = self.solve(with_pairs=[c.pair for c in self.candidates]).estimates

    def measurement(self, pair):
        return self._measurements[pair]

    def solve(self, with_pairs, warm_start=None):
        graph = self.graph.copy()
        for pair in sorted(with_pairs):
            measurement = self._measurements[pair]
            if measurement is not None:
                graph.add_edge(measurement)
        initial = warm_start if warm_start is not None else backend.initialize(graph, self.anchor)
        if self.scenario.robust:
            params = backend.GncParams(
                tls_threshold=backend.tls_threshold_quantile(self.scenario.gnc_quantile)
            )
            return backend.gnc_optimize(graph, initial, self.anchor, params)
        return backend.optimize(graph, initial, self.anchor)


def _select(mode: str, reduced, budget: int):
    if mode == "greedy":
        return greedy_select(reduced, budget)
    if mode == "spectral":
        return spectral_select(reduced, budget)
    return exhaustive_select(reduced, budget)


def run_curve_experiment(config: ExperimentConfig) -> list[dict]:
    """Percent-computed curves for each prioritization mode and seed."""
    rows: list[dict] = []
    for seed in config.seeds:
        scenario = config.scenario_factory(seed)
        problem = _CurveProblem(scenario)
        total = len(problem.candidates)
        reference_traj = trajectory_from_estimates(problem.reference)
        for mode in config.prioritization_modes:
            remaining = list(problem.candidates)
            verified: list = []
            fixed_graph = problem.graph.copy()
            cumulative_bytes = 0
            warm_start = None
            while remaining:
                reduced = build_reduced_graph(fixed_graph, remaining)
                selection = _select(mode, reduced, config.budget)
                chosen_pairs = sorted(
                    reduced.candidate_pairs[i] for i in selection.selected_indices()
                )
                by_pair = {c.pair: c for c in remaining}
                chosen = [by_pair[p] for p in chosen_pairs]
                if not chosen:
                    break
                plan = (
                    vertex_cover_plan(chosen)
                    if config.exchange_mode == "vertex_cover"
                    else monolog_plan(chosen)
                )
                cumulative_bytes += account_bytes(
                    plan,
                    scenario.sizes.vertex_payload_bytes,
                    scenario.sizes.overhead_bytes,
                )
                cumulative_bytes += len(chosen) * (
                    scenario.sizes.pose_record_bytes + scenario.sizes.overhead_bytes
                )
                for candidate in chosen:
                    measurement = problem.measurement(candidate.pair)
                    if measurement is not None:
                        fixed_graph.add_edge(measurement)
                        verified.append(candidate.pair)
                remaining = [c for c in remaining if c.pair not in set(chosen_pairs)]

                reduced_after = build_reduced_graph(fixed_graph, [])
                lambda2_now = fiedler(base_laplacian(reduced_after))[0]
                # Intermediate rounds warm start from the previous solution;
                # the terminal round solves cold so every mode lands on the
                # bit-identical all-candidates state.
                result = problem.solve(
                    with_pairs=verified,
                    warm_start=warm_start if remaining else None,
                )
                warm_start = result.estimates
                ate = ate_rmse(trajectory_from_estimates(result.estimates), reference_traj)
                rows.append(
                    {
                        "mode": mode,
                        "seed": seed,
                        "percent_computed": 100.0 * (total - len(remaining)) / total,
                        "lambda2": lambda2_now,
                        "objective": result.objective,
                        "ate": ate,
                        "cumulative_bytes": cumulative_bytes,
                    }
                )
    return rows


def run_exchange_experiment(config: ExperimentConfig) -> list[dict]:
    """Bytes under both exchange policies for a sweep of candidate budgets."""
    rows: list[dict] = []
    payload = 200_000
    overhead = 24
    for seed in config.seeds:
        candidates = clustered_candidates(seed)
        order = sorted(candidates, key=lambda c: (-c.score, c.pair))
        for budget in config.budgets:
            chosen = order[: min(budget, len(order))]
            monolog_bytes = account_bytes(monolog_plan(chosen), payload, overhead)
            cover_bytes = account_bytes(vertex_cover_plan(chosen), payload, overhead)
            rows.append(
                {
                    "seed": seed,
                    "budget": budget,
                    "monolog_bytes": monolog_bytes,
                    "cover_bytes": cover_bytes,
                }
            )
    return rows


def rows_to_csv(rows: list[dict], header: list[str]) -> str:
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=header, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        formatted = {}
        for key in header:
            value = row[key]
            if isinstance(value, float):
                formatted[key] = f"{value:.12g}"
            else:
                formatted[key] = value
        writer.writerow(formatted)
    return buffer.getvalue()


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def import_trajectory(path: str | Path, fmt: str) -> Trajectory:
    """Load a trajectory from a TUM text file or the vertices of a g2o file."""
    path = Path(path)
    text = path.read_text()
    if fmt == "tum":
        traj = parse_tum(text)
        if len(traj) == 0:
            raise ParseError(0, f"no trajectory records in {path}")
        return traj
    if fmt == "g2o":
        graph = parse_g2o(text)
        if not graph.vertices:
            raise ParseError(0, f"no vertices in {path}")
        points = []
        for key in sorted(graph.vertices):
            pose = graph.vertices[key]
            if pose is None:
                raise ParseError(0, f"vertex {key} has no estimate")
            points.append(TrajectoryPoint(float(key.frame_id), key, pose))
        return Trajectory(points)
    raise ValueError(f"unknown trajectory format {fmt!r}")
