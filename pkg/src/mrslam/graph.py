"""Multi-robot pose graph data model and trajectory utilities."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, NamedTuple, Optional

import numpy as np

from .geometry import Pose


class PoseKey(NamedTuple):
    """Identifies one keyframe: (robot_id, frame_id), ordered lexicographically."""

    robot_id: int
    frame_id: int

    def __str__(self) -> str:  # readable in dumps and error messages
        return f"r{self.robot_id}:k{self.frame_id}"


class EdgeKind(str, Enum):
    ODOMETRY = "odometry"
    INTRA_LOOP = "intra_loop"
    INTER_LOOP = "inter_loop"


@dataclass(frozen=True)
class Measurement:
    """Relative pose constraint between two keyframes.

    kappa and tau are the scalar rotation / translation information weights of
    the measurement; both must be strictly positive.
    """

    from_key: PoseKey
    to_key: PoseKey
    relative_pose: Pose
    kappa: float
    tau: float
    kind: EdgeKind

    def __post_init__(self) -> None:
        if self.kappa <= 0.0 or self.tau <= 0.0:
            raise ValueError(f"non-positive information weights on {self.from_key}->{self.to_key}")
        if self.kind == EdgeKind.ODOMETRY:
            if self.from_key.robot_id != self.to_key.robot_id:
                raise ValueError(f"odometry edge across robots: {self.from_key}->{self.to_key}")
            if self.to_key.frame_id != self.from_key.frame_id + 1:
                raise ValueError(f"odometry edge must advance one frame: {self.from_key}->{self.to_key}")
        elif self.kind == EdgeKind.INTER_LOOP:
            if self.from_key.robot_id == self.to_key.robot_id:
                raise ValueError(f"inter-robot edge within one robot: {self.from_key}->{self.to_key}")
        elif self.kind == EdgeKind.INTRA_LOOP:
            if self.from_key.robot_id != self.to_key.robot_id:
                raise ValueError(f"intra-robot edge across robots: {self.from_key}->{self.to_key}")


def infer_edge_kind(from_key: PoseKey, to_key: PoseKey) -> EdgeKind:
    """Edge kind implied by the two endpoint keys."""
    if from_key.robot_id != to_key.robot_id:
        return EdgeKind.INTER_LOOP
    if abs(to_key.frame_id - from_key.frame_id) == 1:
        return EdgeKind.ODOMETRY
    return EdgeKind.INTRA_LOOP


class GraphError(ValueError):
    """A pose graph operation referenced missing vertices or broke an invariant."""


@dataclass
class MultiRobotPoseGraph:
    """Keyed vertices with optional estimates, measured edges, and anchor priors."""

    vertices: dict[PoseKey, Optional[Pose]] = field(default_factory=dict)
    edges: list[Measurement] = field(default_factory=list)
    anchors: list[tuple[PoseKey, Pose]] = field(default_factory=list)

    def add_vertex(self, key: PoseKey, estimate: Optional[Pose] = None) -> None:
        if key in self.vertices:
            raise GraphError(f"duplicate vertex {key}")
        self.vertices[key] = estimate

    def add_edge(self, measurement: Measurement) -> None:
        if measurement.from_key not in self.vertices:
            raise GraphError(f"edge endpoint {measurement.from_key} not in graph")
        if measurement.to_key not in self.vertices:
            raise GraphError(f"edge endpoint {measurement.to_key} not in graph")
        self.edges.append(measurement)

    def add_anchor(self, key: PoseKey, prior: Pose) -> None:
        if key not in self.vertices:
            raise GraphError(f"anchor {key} not in graph")
        self.anchors.append((key, prior))

    def robot_ids(self) -> list[int]:
        return sorted({key.robot_id for key in self.vertices})

    def keys_of_robot(self, robot_id: int) -> list[PoseKey]:
        return sorted(key for key in self.vertices if key.robot_id == robot_id)

    def edges_of_kind(self, kind: EdgeKind) -> list[Measurement]:
        return [e for e in self.edges if e.kind == kind]

    def copy(self) -> "MultiRobotPoseGraph":
        return MultiRobotPoseGraph(
            vertices=dict(self.vertices),
            edges=list(self.edges),
            anchors=list(self.anchors),
        )

    def validate(self) -> None:
        """Check well-formedness: endpoints present, odometry chains intact."""
        for edge in self.edges:
            if edge.from_key not in self.vertices or edge.to_key not in self.vertices:
                raise GraphError(f"dangling edge {edge.from_key}->{edge.to_key}")
        for anchor_key, _ in self.anchors:
            if anchor_key not in self.vertices:
                raise GraphError(f"dangling anchor {anchor_key}")
        for robot_id in self.robot_ids():
            frames = sorted(key.frame_id for key in self.vertices if key.robot_id == robot_id)
            expected = set(range(frames[0], frames[-1] + 1))
            if set(frames) != expected:
                raise GraphError(f"robot {robot_id} has gaps in its frame ids")
            odom_pairs = {
                (e.from_key.frame_id, e.to_key.frame_id)
                for e in self.edges
                if e.kind == EdgeKind.ODOMETRY and e.from_key.robot_id == robot_id
            }
            wanted = {(f, f + 1) for f in frames[:-1]}
            if odom_pairs != wanted:
                raise GraphError(f"robot {robot_id} odometry edges do not form a single path")


class TrajectoryPoint(NamedTuple):
    stamp: float
    key: PoseKey
    pose: Pose


@dataclass
class Trajectory:
    """Time-ordered ground-truth or estimated poses, possibly for several robots."""

    points: list[TrajectoryPoint] = field(default_factory=list)

    def __post_init__(self) -> None:
        last: dict[int, float] = {}
        for point in self.points:
            robot = point.key.robot_id
            if robot in last and point.stamp <= last[robot]:
                raise ValueError(f"timestamps not strictly increasing for robot {robot}")
            last[robot] = point.stamp

    def __len__(self) -> int:
        return len(self.points)

    def __iter__(self):
        return iter(self.points)

    def robot_ids(self) -> list[int]:
        return sorted({p.key.robot_id for p in self.points})

    def for_robot(self, robot_id: int) -> "Trajectory":
        return Trajectory([p for p in self.points if p.key.robot_id == robot_id])

    def pose_map(self) -> dict[PoseKey, Pose]:
        return {p.key: p.pose for p in self.points}

    def translations(self) -> np.ndarray:
        return np.array([p.pose.translation for p in self.points])


def trajectory_from_poses(
    poses: Iterable[Pose],
    robot_id: int = 0,
    start_time: float = 0.0,
    dt: float = 1.0,
) -> Trajectory:
    """Wrap a pose sequence as a trajectory with evenly spaced timestamps."""
    points = [
        TrajectoryPoint(start_time + i * dt, PoseKey(robot_id, i), pose)
        for i, pose in enumerate(poses)
    ]
    return Trajectory(points)


def trajectory_from_estimates(estimates: dict[PoseKey, Pose]) -> Trajectory:
    """View a keyed estimate map as a trajectory (key order, unit timestamps)."""
    return Trajectory(
        [TrajectoryPoint(float(i), key, estimates[key]) for i, key in enumerate(sorted(estimates))]
    )


def split_trajectory(traj: Trajectory, n: int) -> list[Trajectory]:
    """Split a single trajectory into n contiguous per-robot segments.

    Segments keep their original order and timestamps; keys are relabelled with
    robot ids 0..n-1 and frame ids restarting at 0. When the length is not
    divisible by n, earlier segments take the remainder.
    """
    if n < 1:
        raise ValueError("robot count must be >= 1")
    if n > len(traj):
        raise ValueError(f"cannot split {len(traj)} poses into {n} segments")
    base, rem = divmod(len(traj), n)
    segments: list[Trajectory] = []
    cursor = 0
    for robot_id in range(n):
        size = base + (1 if robot_id < rem else 0)
        chunk = traj.points[cursor : cursor + size]
        cursor += size
        segments.append(
            Trajectory(
                [
                    TrajectoryPoint(p.stamp, PoseKey(robot_id, i), p.pose)
                    for i, p in enumerate(chunk)
                ]
            )
        )
    return segments
