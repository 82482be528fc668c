"""Text interchange formats: g2o pose graphs, TUM trajectories, candidate CSV.

Vertex ids in g2o files encode the pose key as robot_id * 10^8 + frame_id,
which keeps dumps human-readable and leaves room for 10^8 keyframes per robot.
The 6x6 information block of an edge is reduced to the scalar pair (tau,
kappa) by averaging the translational and rotational diagonal blocks; writing
emits the corresponding isotropic block.
"""

from __future__ import annotations

import csv
import io
from typing import Iterable, TextIO

import numpy as np

from .exchange import CandidateMatch, TransmissionPlan
from .geometry import Pose
from .graph import (
    GraphError,
    Measurement,
    MultiRobotPoseGraph,
    PoseKey,
    Trajectory,
    TrajectoryPoint,
    infer_edge_kind,
)

ROBOT_ID_STRIDE = 10**8


class ParseError(ValueError):
    """Malformed input line; carries the 1-based line number."""

    def __init__(self, line_number: int, message: str):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


def key_to_g2o_id(key: PoseKey) -> int:
    if key.frame_id >= ROBOT_ID_STRIDE:
        raise ValueError(f"frame id {key.frame_id} exceeds the g2o id scheme")
    return key.robot_id * ROBOT_ID_STRIDE + key.frame_id


def g2o_id_to_key(vertex_id: int) -> PoseKey:
    if vertex_id < 0:
        raise ValueError(f"negative g2o vertex id {vertex_id}")
    return PoseKey(vertex_id // ROBOT_ID_STRIDE, vertex_id % ROBOT_ID_STRIDE)


def _info_matrix_from_upper(values: list[float]) -> np.ndarray:
    info = np.zeros((6, 6))
    pos = 0
    for row in range(6):
        for col in range(row, 6):
            info[row, col] = values[pos]
            info[col, row] = values[pos]
            pos += 1
    return info


def _upper_from_info_matrix(info: np.ndarray) -> list[float]:
    return [info[row, col] for row in range(6) for col in range(row, 6)]


def parse_g2o(source: str | TextIO) -> MultiRobotPoseGraph:
    """Parse VERTEX_SE3:QUAT / EDGE_SE3:QUAT / FIX records into a pose graph."""
    if isinstance(source, str):
        lines: Iterable[str] = source.splitlines()
    else:
        lines = source
    graph = MultiRobotPoseGraph()
    pending_edges: list[tuple[int, Measurement]] = []
    pending_anchors: list[tuple[int, PoseKey]] = []
    for line_number, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        tag = fields[0]
        if tag == "VERTEX_SE3:QUAT":
            if len(fields) != 9:
                raise ParseError(line_number, f"expected 9 fields, got {len(fields)}")
            try:
                vertex_id = int(fields[1])
                numbers = [float(x) for x in fields[2:]]
            except ValueError as exc:
                raise ParseError(line_number, str(exc)) from None
            key = g2o_id_to_key(vertex_id)
            if key in graph.vertices:
                raise ParseError(line_number, f"duplicate vertex {key}")
            try:
                pose = Pose.from_quat(*numbers)
            except ValueError as exc:
                raise ParseError(line_number, str(exc)) from None
            graph.vertices[key] = pose
        elif tag == "EDGE_SE3:QUAT":
            if len(fields) != 31:
                raise ParseError(line_number, f"expected 31 fields, got {len(fields)}")
            try:
                from_id = int(fields[1])
                to_id = int(fields[2])
                numbers = [float(x) for x in fields[3:]]
            except ValueError as exc:
                raise ParseError(line_number, str(exc)) from None
            from_key = g2o_id_to_key(from_id)
            to_key = g2o_id_to_key(to_id)
            info = _info_matrix_from_upper(numbers[7:])
            try:
                np.linalg.cholesky(info)
            except np.linalg.LinAlgError:
                raise ParseError(line_number, "information block is not positive definite") from None
            tau = float(np.mean(np.diag(info)[:3]))
            kappa = float(np.mean(np.diag(info)[3:]))
            try:
                pose = Pose.from_quat(*numbers[:7])
                measurement = Measurement(
                    from_key=from_key,
                    to_key=to_key,
                    relative_pose=pose,
                    kappa=kappa,
                    tau=tau,
                    kind=infer_edge_kind(from_key, to_key),
                )
            except ValueError as exc:
                raise ParseError(line_number, str(exc)) from None
            pending_edges.append((line_number, measurement))
        elif tag == "FIX":
            if len(fields) != 2:
                raise ParseError(line_number, f"expected 2 fields, got {len(fields)}")
            try:
                vertex_id = int(fields[1])
            except ValueError as exc:
                raise ParseError(line_number, str(exc)) from None
            pending_anchors.append((line_number, g2o_id_to_key(vertex_id)))
        else:
            raise ParseError(line_number, f"unsupported record {tag!r}")
    for line_number, measurement in pending_edges:
        try:
            graph.add_edge(measurement)
        except GraphError as exc:
            raise ParseError(line_number, str(exc)) from None
    for line_number, key in pending_anchors:
        if key not in graph.vertices:
            raise ParseError(line_number, f"FIX references unknown vertex {key}")
        prior = graph.vertices[key]
        graph.anchors.append((key, prior if prior is not None else Pose.identity()))
    return graph


def write_g2o(graph: MultiRobotPoseGraph) -> str:
    """Serialize a pose graph; inverse of :func:`parse_g2o` up to float formatting."""
    out = io.StringIO()
    for key in sorted(graph.vertices):
        estimate = graph.vertices[key]
        pose = estimate if estimate is not None else Pose.identity()
        tx, ty, tz, qx, qy, qz, qw = pose.to_quat()
        out.write(
            f"VERTEX_SE3:QUAT {key_to_g2o_id(key)} "
            f"{tx:.12g} {ty:.12g} {tz:.12g} {qx:.17g} {qy:.17g} {qz:.17g} {qw:.17g}\n"
        )
    for edge in graph.edges:
        tx, ty, tz, qx, qy, qz, qw = edge.relative_pose.to_quat()
        info = np.diag([edge.tau] * 3 + [edge.kappa] * 3)
        upper = " ".join(f"{v:.12g}" for v in _upper_from_info_matrix(info))
        out.write(
            f"EDGE_SE3:QUAT {key_to_g2o_id(edge.from_key)} {key_to_g2o_id(edge.to_key)} "
            f"{tx:.12g} {ty:.12g} {tz:.12g} {qx:.17g} {qy:.17g} {qz:.17g} {qw:.17g} {upper}\n"
        )
    for key, _prior in graph.anchors:
        out.write(f"FIX {key_to_g2o_id(key)}\n")
    return out.getvalue()


def parse_tum(source: str | TextIO, robot_id: int = 0) -> Trajectory:
    """Parse TUM trajectory text: timestamp tx ty tz qx qy qz qw per line."""
    if isinstance(source, str):
        lines: Iterable[str] = source.splitlines()
    else:
        lines = source
    points: list[TrajectoryPoint] = []
    frame = 0
    for line_number, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if len(fields) != 8:
            raise ParseError(line_number, f"expected 8 fields, got {len(fields)}")
        try:
            stamp = float(fields[0])
            pose = Pose.from_quat(*(float(x) for x in fields[1:]))
        except ValueError as exc:
            raise ParseError(line_number, str(exc)) from None
        points.append(TrajectoryPoint(stamp, PoseKey(robot_id, frame), pose))
        frame += 1
    try:
        return Trajectory(points)
    except ValueError as exc:
        raise ParseError(0, str(exc)) from None


def write_tum(traj: Trajectory) -> str:
    out = io.StringIO()
    for point in traj:
        tx, ty, tz, qx, qy, qz, qw = point.pose.to_quat()
        out.write(f"{point.stamp:.9f} {tx:.9f} {ty:.9f} {tz:.9f} {qx:.9f} {qy:.9f} {qz:.9f} {qw:.9f}\n")
    return out.getvalue()


CANDIDATE_CSV_HEADER = ["robot_a", "frame_a", "robot_b", "frame_b", "score"]


def write_candidates_csv(candidates: Iterable[CandidateMatch], stream: TextIO) -> None:
    writer = csv.writer(stream)
    writer.writerow(CANDIDATE_CSV_HEADER)
    for candidate in candidates:
        writer.writerow(
            [
                candidate.vertex_a.robot_id,
                candidate.vertex_a.frame_id,
                candidate.vertex_b.robot_id,
                candidate.vertex_b.frame_id,
                f"{candidate.score:.9f}",
            ]
        )


def read_candidates_csv(stream: TextIO) -> list[CandidateMatch]:
    reader = csv.reader(stream)
    header = next(reader, None)
    if header != CANDIDATE_CSV_HEADER:
        raise ParseError(1, f"expected header {CANDIDATE_CSV_HEADER}, got {header}")
    candidates = []
    for line_number, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 5:
            raise ParseError(line_number, f"expected 5 columns, got {len(row)}")
        try:
            candidates.append(
                CandidateMatch(
                    vertex_a=PoseKey(int(row[0]), int(row[1])),
                    vertex_b=PoseKey(int(row[2]), int(row[3])),
                    score=float(row[4]),
                )
            )
        except ValueError as exc:
            raise ParseError(line_number, str(exc)) from None
    return candidates


PLAN_CSV_HEADER = ["robot_id", "frame_id", "destination", "bytes"]


def write_plan_csv(plan: TransmissionPlan, bytes_per_transfer: int, stream: TextIO) -> None:
    """Audit dump of a transmission plan: one row per transfer."""
    writer = csv.writer(stream)
    writer.writerow(PLAN_CSV_HEADER)
    for key, destination in plan.transfers:
        writer.writerow([key.robot_id, key.frame_id, destination, bytes_per_transfer])
