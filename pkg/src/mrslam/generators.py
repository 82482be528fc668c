"""Synthetic trajectory and scenario generators with predictable topology.

Trajectories deliberately weave in y and z so that rigid alignment is never
degenerate (straight lines would make the ATE alignment collinear).
"""

from __future__ import annotations

import math

import numpy as np

from .exchange import CandidateMatch
from .geometry import Pose, rot_z
from .graph import PoseKey, Trajectory, TrajectoryPoint
from .sim import (
    CommunicationModel,
    ContactWindow,
    MessageSizes,
    NoiseModel,
    PlaceRecognitionModel,
    Scenario,
)


def _trajectory(points: list[np.ndarray], yaws: list[float], robot_id: int) -> Trajectory:
    return Trajectory(
        [
            TrajectoryPoint(float(i), PoseKey(robot_id, i), Pose(rotation=rot_z(yaw), translation=p))
            for i, (p, yaw) in enumerate(zip(points, yaws))
        ]
    )


def parallel_corridors(
    n_robots: int = 2,
    length: int = 30,
    step: float = 1.0,
    spacing: float = 1.5,
    pinch_depth: float = 0.0,
    wiggle: float = 0.15,
) -> dict[int, Trajectory]:
    """Robots drive parallel corridors along x, laterally offset by spacing.

    pinch_depth in [0, 1] pulls the corridors together around the middle of
    the run, concentrating the closest (highest-similarity) match pairs there.
    """
    out: dict[int, Trajectory] = {}
    for robot in range(n_robots):
        points, yaws = [], []
        for i in range(length):
            phase = i / max(length - 1, 1)
            gap = spacing * (1.0 - pinch_depth * math.exp(-((phase - 0.5) ** 2) / 0.02))
            y = robot * gap + wiggle * math.sin(0.7 * i + robot)
            z = 0.1 * math.sin(0.4 * i + 2.0 * robot)
            points.append(np.array([i * step, y, z]))
            yaws.append(0.2 * math.sin(0.5 * i + robot))
        out[robot] = _trajectory(points, yaws, robot)
    return out


def graded_corridors(
    n_robots: int = 2,
    length: int = 32,
    step: float = 1.0,
    gap_min: float = 0.1,
    gap_max: float = 1.3,
    z_wiggle: float = 0.12,
) -> dict[int, Trajectory]:
    """Corridors whose lateral gap widens linearly from the middle outward.

    Place-recognition scores then decay monotonically with distance from the
    midpoint: a greedy selector works outward round by round, while a spectral
    selector can jump straight to the informative far ends.
    """
    out: dict[int, Trajectory] = {}
    for robot in range(n_robots):
        points, yaws = [], []
        for i in range(length):
            phase = i / max(length - 1, 1)
            gap = gap_min + (gap_max - gap_min) * abs(2.0 * phase - 1.0)
            points.append(
                np.array([i * step, robot * gap, z_wiggle * math.sin(0.6 * i + 1.5 * robot)])
            )
            yaws.append(0.15 * math.sin(0.4 * i + robot))
        out[robot] = _trajectory(points, yaws, robot)
    return out


def crossing_loops(
    n_robots: int = 2,
    length: int = 36,
    radius: float = 8.0,
    overlap: float = 0.45,
) -> dict[int, Trajectory]:
    """Circular loops whose centers are pulled together so the arcs overlap."""
    out: dict[int, Trajectory] = {}
    separation = 2.0 * radius * (1.0 - overlap)
    for robot in range(n_robots):
        center = np.array([separation * robot, 0.0, 0.0])
        points, yaws = [], []
        for i in range(length):
            angle = 2.0 * math.pi * i / length + robot * math.pi
            points.append(
                center
                + np.array(
                    [radius * math.cos(angle), radius * math.sin(angle), 0.05 * math.sin(3 * angle)]
                )
            )
            yaws.append(angle + math.pi / 2.0)
        out[robot] = _trajectory(points, yaws, robot)
    return out


def star_rendezvous(
    n_robots: int = 3,
    length: int = 24,
    arm: float = 10.0,
) -> dict[int, Trajectory]:
    """Robots radiate from a shared hub and come back, meeting at the center."""
    out: dict[int, Trajectory] = {}
    half = length // 2
    for robot in range(n_robots):
        heading = 2.0 * math.pi * robot / n_robots
        direction = np.array([math.cos(heading), math.sin(heading), 0.0])
        points, yaws = [], []
        for i in range(length):
            reach = (i if i < half else (length - 1 - i)) / max(half - 1, 1)
            lateral = 0.2 * math.sin(0.8 * i + robot)
            points.append(
                direction * (arm * reach)
                + np.array([-direction[1], direction[0], 0.0]) * lateral
                + np.array([0.0, 0.0, 0.05 * math.sin(0.5 * i)])
            )
            yaws.append(heading + 0.1 * math.sin(i))
        out[robot] = _trajectory(points, yaws, robot)
    return out


def manhattan_grid(
    n_robots: int = 2,
    length: int = 40,
    block: float = 5.0,
    seed: int = 0,
) -> dict[int, Trajectory]:
    """Random axis-aligned walks on a city-block lattice, one per robot."""
    rng = np.random.default_rng(seed)
    headings = [np.array([1.0, 0, 0]), np.array([0, 1.0, 0]), np.array([-1.0, 0, 0]), np.array([0, -1.0, 0])]
    out: dict[int, Trajectory] = {}
    for robot in range(n_robots):
        position = np.array([block * robot, 0.0, 0.0])
        heading_idx = 0
        points, yaws = [], []
        for i in range(length):
            points.append(position + np.array([0.0, 0.0, 0.08 * math.sin(0.3 * i + robot)]))
            yaws.append(heading_idx * math.pi / 2.0)
            position = position + headings[heading_idx] * (block / 4.0)
            if rng.random() < 0.25:
                heading_idx = (heading_idx + int(rng.choice([-1, 1]))) % 4
        out[robot] = _trajectory(points, yaws, robot)
    return out


def shared_circuit(
    n_robots: int,
    length: int = 20,
    radius: float = 12.0,
    lateral_spacing: float = 0.3,
) -> dict[int, Trajectory]:
    """Every robot traverses the same loop, offset slightly outward.

    All pairs of robots revisit the same places, so place recognition finds
    candidates for any pair that is ever allowed to communicate.
    """
    out: dict[int, Trajectory] = {}
    for robot in range(n_robots):
        r = radius + lateral_spacing * robot
        points, yaws = [], []
        for i in range(length):
            angle = 2.0 * math.pi * i / length
            points.append(
                np.array([r * math.cos(angle), r * math.sin(angle), 0.06 * math.sin(2 * angle + robot)])
            )
            yaws.append(angle + math.pi / 2.0)
        out[robot] = _trajectory(points, yaws, robot)
    return out


def worst_case_two_robot_scenario(
    seed: int,
    length: int = 30,
    prioritization: str = "greedy",
    exchange: str = "monolog",
    budget: int | None = 1,
    rounds: int = 1,
    outlier_probability: float = 0.0,
) -> Scenario:
    """Two graded corridors that only meet at the end of their trajectories.

    The corridor gap widens from the middle outward, so similarity scores
    cluster at the midpoint: greedy prioritization crawls outward from there
    while spectral prioritization reaches the drifted far ends early.
    """
    trajectories = graded_corridors(
        n_robots=2, length=length, gap_min=0.1, gap_max=1.3
    )
    return Scenario(
        trajectories=trajectories,
        odometry_noise=NoiseModel(sigma_rotation=0.006, sigma_translation=0.06),
        verification_noise=NoiseModel(sigma_rotation=0.004, sigma_translation=0.02),
        place_recognition=PlaceRecognitionModel(
            match_radius=1.45,
            score_noise=0.03,
            outlier_probability=outlier_probability,
        ),
        communication=CommunicationModel(mode="worst_case"),
        sizes=MessageSizes(),
        budget=budget,
        rounds=rounds,
        seed=seed,
        prioritization=prioritization,
        exchange=exchange,
        robust=outlier_probability > 0.0,
    )


def staged_rendezvous_scenario(seed: int = 0, length: int = 18) -> Scenario:
    """Six robots on a shared circuit meeting as {0,4,5}, then {2,3,4}, then {1,2}.

    The contact schedule reproduces the staged reference-frame propagation
    worked example: after the three rendezvous every robot's reference frame
    is robot 0's, although no meeting ever contained robot 0 and robot 1
    together.
    """
    trajectories = shared_circuit(6, length=length, radius=10.0, lateral_spacing=0.25)
    third = length // 3
    schedule = [
        ContactWindow(start=third - 1, end=third, robots=(0, 4, 5)),
        ContactWindow(start=2 * third - 1, end=2 * third, robots=(2, 3, 4)),
        ContactWindow(start=length - 1, end=length, robots=(1, 2)),
    ]
    return Scenario(
        trajectories=trajectories,
        odometry_noise=NoiseModel(sigma_rotation=0.003, sigma_translation=0.02),
        verification_noise=NoiseModel(sigma_rotation=0.003, sigma_translation=0.015),
        place_recognition=PlaceRecognitionModel(match_radius=2.5, score_noise=0.03),
        communication=CommunicationModel(mode="schedule", schedule=schedule),
        budget=None,
        seed=seed,
        prioritization="greedy",
        exchange="vertex_cover",
        robust=False,
    )


def clustered_candidates(
    seed: int,
    n_clusters: int = 3,
    cluster_size: int = 4,
) -> list[CandidateMatch]:
    """Candidates grouped around shared hub keyframes on the higher robot.

    Cluster c pairs hub (robot 1, frame c) with cluster_size distinct robot-0
    keyframes. Scores interleave across clusters (all first members, then all
    second members, ...) so a greedy budget sweep touches every cluster before
    deepening any one of them; the vertex-cover savings ratio is then
    non-decreasing in the budget.
    """
    rng = np.random.default_rng(seed)
    candidates = []
    base = 0.95
    for member in range(cluster_size):
        for cluster in range(n_clusters):
            score = base - 0.08 * member - 0.01 * cluster - 0.002 * float(rng.random())
            candidates.append(
                CandidateMatch(
                    PoseKey(0, cluster * cluster_size + member),
                    PoseKey(1, cluster),
                    max(0.0, min(1.0, score)),
                )
            )
    return candidates
