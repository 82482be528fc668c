"""Deterministic event-driven simulation of multi-robot rendezvous SLAM.

Robots replay ground-truth trajectories at one keyframe per step, accumulate
noisy odometry, and exchange heartbeats while in communication range. When
neighbors are available (and a cooldown has elapsed) a rendezvous runs the
full pipeline: broker election, descriptor bookkeeping, simulated place
recognition, candidate prioritization, transmission planning, simulated
geometric verification, anchor selection, pose-graph aggregation, robust
optimization, and estimate broadcast. Every message is accounted in a byte
ledger. A fixed scenario seed makes the whole run bit-reproducible.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from . import backend
from .exchange import CandidateMatch, elect_broker, monolog_plan, vertex_cover_plan
from .geometry import Pose, se3_exp
from .graph import (
    EdgeKind,
    Measurement,
    MultiRobotPoseGraph,
    PoseKey,
    Trajectory,
    TrajectoryPoint,
)
from .metrics import umeyama_alignment
from .prioritization import (
    base_laplacian,
    build_reduced_graph,
    fiedler,
    greedy_select,
    spectral_select,
)

# Information weights come from the noise model as 1/sigma^2; a zero sigma
# (noise-free runs) is floored to keep the weights finite.
_SIGMA_FLOOR = 1e-6


@dataclass
class NoiseModel:
    sigma_rotation: float = 0.0
    sigma_translation: float = 0.0

    def __post_init__(self) -> None:
        if self.sigma_rotation < 0 or self.sigma_translation < 0:
            raise ValueError("noise sigmas must be non-negative")

    @property
    def kappa(self) -> float:
        return 1.0 / max(self.sigma_rotation, _SIGMA_FLOOR) ** 2

    @property
    def tau(self) -> float:
        return 1.0 / max(self.sigma_translation, _SIGMA_FLOOR) ** 2

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return np.concatenate(
            [
                rng.normal(0.0, 1.0, 3) * self.sigma_rotation,
                rng.normal(0.0, 1.0, 3) * self.sigma_translation,
            ]
        )


@dataclass
class PlaceRecognitionModel:
    match_radius: float = 2.0
    score_noise: float = 0.05
    outlier_probability: float = 0.0
    registration_failure_probability: float = 0.0
    gross_error_min: float = 2.0
    gross_error_max: float = 10.0

    def __post_init__(self) -> None:
        if self.match_radius < 0:
            raise ValueError("match radius must be non-negative")
        for p in (self.outlier_probability, self.registration_failure_probability):
            if not 0.0 <= p <= 1.0:
                raise ValueError("probabilities must lie in [0, 1]")

    def score_of_distance(self, distance: float, rng: np.random.Generator) -> float:
        if self.match_radius <= 0:
            return 0.0
        raw = math.exp(-distance / (self.match_radius / 3.0)) + rng.normal(0.0, self.score_noise)
        return float(min(1.0, max(0.0, raw)))


@dataclass
class MessageSizes:
    descriptor_bytes: int = 4096
    vertex_payload_bytes: int = 200_000
    pose_record_bytes: int = 64
    overhead_bytes: int = 24


@dataclass
class ContactWindow:
    start: int
    end: int  # exclusive
    robots: tuple[int, ...]

    def __post_init__(self) -> None:
        if self.end <= self.start:
            raise ValueError("contact window must have positive length")
        self.robots = tuple(sorted(self.robots))


@dataclass
class CommunicationModel:
    mode: str = "range"  # range | schedule | worst_case
    radius: float = 5.0
    schedule: list[ContactWindow] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.mode not in ("range", "schedule", "worst_case"):
            raise ValueError(f"unknown communication mode {self.mode!r}")
        if self.mode == "schedule":
            by_pair: dict[tuple[int, int], list[tuple[int, int]]] = {}
            for window in self.schedule:
                for i, a in enumerate(window.robots):
                    for b in window.robots[i + 1 :]:
                        by_pair.setdefault((a, b), []).append((window.start, window.end))

    def pairs_in_range(
        self, step: int, positions: dict[int, np.ndarray], final_step: int
    ) -> set[tuple[int, int]]:
        robots = sorted(positions)
        pairs: set[tuple[int, int]] = set()
        if self.mode == "worst_case":
            if step == final_step:
                pairs.update((a, b) for i, a in enumerate(robots) for b in robots[i + 1 :])
            return pairs
        if self.mode == "schedule":
            for window in self.schedule:
                if window.start <= step < window.end:
                    members = [r for r in window.robots if r in positions]
                    pairs.update(
                        (a, b) for i, a in enumerate(members) for b in members[i + 1 :]
                    )
            return pairs
        for i, a in enumerate(robots):
            for b in robots[i + 1 :]:
                if float(np.linalg.norm(positions[a] - positions[b])) <= self.radius:
                    pairs.add((a, b))
        return pairs


@dataclass
class Scenario:
    trajectories: dict[int, Trajectory]
    odometry_noise: NoiseModel = field(default_factory=NoiseModel)
    verification_noise: NoiseModel = field(default_factory=NoiseModel)
    place_recognition: PlaceRecognitionModel = field(default_factory=PlaceRecognitionModel)
    communication: CommunicationModel = field(default_factory=CommunicationModel)
    sizes: MessageSizes = field(default_factory=MessageSizes)
    budget: Optional[int] = None  # None selects every candidate
    rounds: int = 1
    seed: int = 0
    prioritization: str = "greedy"  # greedy | spectral
    exchange: str = "monolog"  # monolog | vertex_cover
    rendezvous_cooldown: int = 5
    heartbeat_timeout: int = 2
    robust: bool = True
    gnc_quantile: float = 0.997
    optimizer_max_iterations: int = 100

    def __post_init__(self) -> None:
        if self.prioritization not in ("greedy", "spectral"):
            raise ValueError(f"unknown prioritization mode {self.prioritization!r}")
        if self.exchange not in ("monolog", "vertex_cover"):
            raise ValueError(f"unknown exchange mode {self.exchange!r}")
        if self.budget is not None and self.budget < 0:
            raise ValueError("budget must be non-negative")
        if self.rounds < 1:
            raise ValueError("rounds must be at least 1")
        for robot_id, traj in self.trajectories.items():
            if any(p.key.robot_id != robot_id for p in traj):
                raise ValueError(f"trajectory for robot {robot_id} holds foreign keys")


class LedgerRecord(NamedTuple):
    time: int
    sender: int
    receiver: int
    kind: str
    bytes: int


MESSAGE_KINDS = (
    "heartbeat",
    "descriptor",
    "vertex_payload",
    "registration_result",
    "pose_graph",
    "estimates",
)


@dataclass
class MessageLedger:
    records: list[LedgerRecord] = field(default_factory=list)

    def add(self, record: LedgerRecord) -> None:
        if record.kind not in MESSAGE_KINDS:
            raise ValueError(f"unknown message kind {record.kind!r}")
        if record.bytes < 0:
            raise ValueError("message bytes must be non-negative")
        if self.records and record.time < self.records[-1].time:
            raise ValueError("ledger times must be non-decreasing")
        self.records.append(record)

    def total_bytes(self, kind: Optional[str] = None) -> int:
        return sum(r.bytes for r in self.records if kind is None or r.kind == kind)

    def between(self, a: int, b: int, kind: Optional[str] = None) -> list[LedgerRecord]:
        return [
            r
            for r in self.records
            if {r.sender, r.receiver} == {a, b} and (kind is None or r.kind == kind)
        ]

    def to_csv(self) -> str:
        lines = ["time,sender,receiver,kind,bytes"]
        lines.extend(
            f"{r.time},{r.sender},{r.receiver},{r.kind},{r.bytes}" for r in self.records
        )
        return "\n".join(lines) + "\n"


@dataclass
class RendezvousRecord:
    step: int
    participants: tuple[int, ...]
    broker: int
    anchor_robot: int
    reference_frame_id: int
    candidates_generated: int
    candidates_selected: int
    candidates_verified: int
    lambda2_before: float
    lambda2_after: float
    objective: float
    ate: dict[int, float]
    cumulative_bytes: int

    def __post_init__(self) -> None:
        if not self.candidates_verified <= self.candidates_selected <= self.candidates_generated:
            raise ValueError("rendezvous counters must satisfy verified <= selected <= generated")


TRACE_CSV_HEADER = (
    "step,participants,broker,anchor_robot,reference_frame_id,"
    "candidates_generated,candidates_selected,candidates_verified,"
    "lambda2_before,lambda2_after,objective,ate,cumulative_bytes"
)


def trace_to_csv(trace: list[RendezvousRecord]) -> str:
    lines = [TRACE_CSV_HEADER]
    for r in trace:
        participants = "|".join(str(p) for p in r.participants)
        ate = "|".join(f"{robot}:{value:.9f}" for robot, value in sorted(r.ate.items()))
        lines.append(
            f"{r.step},{participants},{r.broker},{r.anchor_robot},{r.reference_frame_id},"
            f"{r.candidates_generated},{r.candidates_selected},{r.candidates_verified},"
            f"{r.lambda2_before:.12g},{r.lambda2_after:.12g},{r.objective:.12g},"
            f"{ate},{r.cumulative_bytes}"
        )
    return "\n".join(lines) + "\n"


def simulate_odometry(
    traj: Trajectory, noise: NoiseModel, seed: int | np.random.Generator
) -> list[Measurement]:
    """Noisy consecutive relative poses of one robot's trajectory.

    The ground-truth relative pose is right-perturbed by exp(eps) with eps ~
    N(0, diag(sigma_R^2 I, sigma_t^2 I)); the information weights are the
    inverse variances.
    """
    if len(traj) < 2:
        raise ValueError("odometry needs at least two poses")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    measurements = []
    for prev, curr in zip(traj.points, traj.points[1:]):
        relative = prev.pose.inverse().compose(curr.pose)
        relative = relative.compose(se3_exp(noise.sample(rng)))
        measurements.append(
            Measurement(
                from_key=prev.key,
                to_key=curr.key,
                relative_pose=relative,
                kappa=noise.kappa,
                tau=noise.tau,
                kind=EdgeKind.ODOMETRY,
            )
        )
    return measurements


def simulate_place_recognition(
    traj_a: Trajectory,
    traj_b: Trajectory,
    params: PlaceRecognitionModel,
    seed: int | np.random.Generator,
) -> list[CandidateMatch]:
    """Distance-oracle place recognition between two robots' trajectories.

    Every cross-robot pose pair closer than the match radius yields a true
    candidate scored by exp(-d / (r/3)) plus clamped Gaussian noise. Each true
    candidate additionally spawns, with the configured outlier probability, a
    spurious candidate between random far-apart keyframes (distance > 2r),
    scored at the model's value for d = r/2.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    radius = params.match_radius
    candidates: list[CandidateMatch] = []
    if radius <= 0:
        return candidates
    far_pairs = []
    true_pairs = []
    for pa in traj_a:
        for pb in traj_b:
            d = float(np.linalg.norm(pa.pose.translation - pb.pose.translation))
            if d < radius:
                true_pairs.append((pa.key, pb.key, d))
            elif d > 2.0 * radius:
                far_pairs.append((pa.key, pb.key))
    seen: set[tuple[PoseKey, PoseKey]] = set()
    for key_a, key_b, d in true_pairs:
        score = params.score_of_distance(d, rng)
        candidate = CandidateMatch(key_a, key_b, score)
        if candidate.pair in seen:
            continue
        seen.add(candidate.pair)
        candidates.append(candidate)
        if far_pairs and rng.random() < params.outlier_probability:
            pick = far_pairs[int(rng.integers(len(far_pairs)))]
            spurious = CandidateMatch(
                pick[0], pick[1], params.score_of_distance(radius / 2.0, rng)
            )
            if spurious.pair not in seen:
                seen.add(spurious.pair)
                candidates.append(spurious)
    return candidates


class PayloadNotDeliveredError(RuntimeError):
    """Geometric verification ran without the keyframe payload in place."""


def simulate_geometric_verification(
    candidate: CandidateMatch,
    gt_poses: dict[PoseKey, Pose],
    noise: NoiseModel,
    params: PlaceRecognitionModel,
    seed: int | np.random.Generator,
) -> Optional[Measurement]:
    """Relative-pose registration oracle: noisy truth, gross error, or rejection.

    True candidates (ground-truth distance below the match radius) return the
    true relative pose with odometry-model noise, or None with the configured
    registration failure probability. Spurious candidates return a uniformly
    random pose whose translation error exceeds five sigma_t.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    pose_a = gt_poses[candidate.vertex_a]
    pose_b = gt_poses[candidate.vertex_b]
    true_relative = pose_a.inverse().compose(pose_b)
    distance = float(np.linalg.norm(pose_a.translation - pose_b.translation))
    if distance < params.match_radius:
        if rng.random() < params.registration_failure_probability:
            return None
        measured = true_relative.compose(se3_exp(noise.sample(rng)))
    else:
        floor = max(params.gross_error_min, 5.0 * noise.sigma_translation * 1.01)
        high = max(params.gross_error_max, floor * 2.0)
        direction = rng.normal(size=3)
        direction /= max(float(np.linalg.norm(direction)), 1e-12)
        magnitude = float(rng.uniform(floor, high))
        axis = rng.normal(size=3)
        axis /= max(float(np.linalg.norm(axis)), 1e-12)
        angle = float(rng.uniform(0.2, math.pi * 0.9))
        measured = Pose(
            rotation=se3_exp(np.concatenate([axis * angle, np.zeros(3)])).rotation,
            translation=true_relative.translation + direction * magnitude,
        )
    return Measurement(
        from_key=candidate.vertex_a,
        to_key=candidate.vertex_b,
        relative_pose=measured,
        kappa=noise.kappa,
        tau=noise.tau,
        kind=EdgeKind.INTER_LOOP,
    )


@dataclass
class _RobotState:
    robot_id: int
    truth: Trajectory
    odometry: list[Measurement] = field(default_factory=list)
    estimates: dict[PoseKey, Pose] = field(default_factory=dict)
    frames_created: int = 0
    reference_frame_id: int = -1
    reference_history: list[int] = field(default_factory=list)
    # Descriptor bookkeeping: highest frame id received from each peer.
    descriptor_watermarks: dict[int, int] = field(default_factory=dict)
    known_frames: dict[int, int] = field(default_factory=dict)  # peer -> frame count known
    inter_measurements: dict[tuple[PoseKey, PoseKey], Measurement] = field(default_factory=dict)
    verified_pairs: set[tuple[PoseKey, PoseKey]] = field(default_factory=set)
    rejected_pairs: set[tuple[PoseKey, PoseKey]] = field(default_factory=set)
    last_rendezvous_step: Optional[int] = None

    def __post_init__(self) -> None:
        if self.reference_frame_id < 0:
            self.reference_frame_id = self.robot_id
            self.reference_history = [self.robot_id]

    def adopt_reference(self, reference_frame_id: int) -> None:
        if reference_frame_id > self.reference_frame_id:
            raise ValueError(
                f"robot {self.robot_id} reference frame may only decrease "
                f"({self.reference_frame_id} -> {reference_frame_id})"
            )
        self.reference_frame_id = reference_frame_id
        self.reference_history.append(reference_frame_id)


def descriptor_bookkeeping(sender: _RobotState, receiver: _RobotState) -> list[int]:
    """Frames the sender must transmit: everything above the receiver's watermark."""
    watermark = receiver.descriptor_watermarks.get(sender.robot_id, -1)
    return [frame for frame in range(watermark + 1, sender.frames_created)]


@dataclass
class SimulationResult:
    trace: list[RendezvousRecord]
    ledger: MessageLedger
    graphs: dict[int, MultiRobotPoseGraph]
    estimates: dict[int, dict[PoseKey, Pose]]
    reference_frames: dict[int, int]
    reference_histories: dict[int, list[int]]
    converged: bool = True
    # Merged graph and solver output of the last rendezvous, for audit dumps.
    last_optimization: Optional[tuple[MultiRobotPoseGraph, backend.OptimizationResult]] = None


def run(scenario: Scenario) -> SimulationResult:
    return _Simulator(scenario).run()


class _Simulator:
    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self.sizes = scenario.sizes
        self._odometry_rngs = {
            robot: np.random.default_rng(np.random.SeedSequence((scenario.seed, 1, robot)))
            for robot in scenario.trajectories
        }
        self._rendezvous_counter = 0
        self.states = {
            robot: _RobotState(robot_id=robot, truth=traj)
            for robot, traj in sorted(scenario.trajectories.items())
        }
        self.gt_poses: dict[PoseKey, Pose] = {}
        for traj in scenario.trajectories.values():
            self.gt_poses.update(traj.pose_map())
        self.ledger = MessageLedger()
        self.trace: list[RendezvousRecord] = []
        self.total_steps = max(len(t) for t in scenario.trajectories.values())
        self.last_heartbeat: dict[tuple[int, int], int] = {}
        self.all_converged = True
        self.last_optimization: Optional[
            tuple[MultiRobotPoseGraph, backend.OptimizationResult]
        ] = None
        self.noisy_odometry = {
            robot: simulate_odometry(traj, scenario.odometry_noise, self._odometry_rngs[robot])
            if len(traj) >= 2
            else []
            for robot, traj in sorted(scenario.trajectories.items())
        }

    # ------------------------------------------------------------------ utils

    def _rendezvous_rng(self) -> np.random.Generator:
        rng = np.random.default_rng(
            np.random.SeedSequence((self.scenario.seed, 2, self._rendezvous_counter))
        )
        self._rendezvous_counter += 1
        return rng

    def _verification_rng(self, pair: tuple[PoseKey, PoseKey]) -> np.random.Generator:
        a, b = pair
        return np.random.default_rng(
            np.random.SeedSequence(
                (self.scenario.seed, 3, a.robot_id, a.frame_id, b.robot_id, b.frame_id)
            )
        )

    def _positions(self, step: int) -> dict[int, np.ndarray]:
        out = {}
        for robot, traj in self.scenario.trajectories.items():
            idx = min(step, len(traj) - 1)
            out[robot] = traj.points[idx].pose.translation
        return out

    # ------------------------------------------------------------- step phases

    def _create_keyframes(self, step: int) -> None:
        for robot, state in sorted(self.states.items()):
            if step >= len(state.truth):
                continue
            key = PoseKey(robot, step)
            if step == 0:
                state.estimates[key] = Pose.identity()
            else:
                edge = self.noisy_odometry[robot][step - 1]
                state.odometry.append(edge)
                state.estimates[key] = state.estimates[edge.from_key].compose(edge.relative_pose)
            state.frames_created = step + 1

    def _exchange_heartbeats(self, step: int, pairs: set[tuple[int, int]]) -> None:
        for a, b in sorted(pairs):
            for sender, receiver in ((a, b), (b, a)):
                self.ledger.add(
                    LedgerRecord(step, sender, receiver, "heartbeat", self.sizes.overhead_bytes)
                )
            self.last_heartbeat[(a, b)] = step

    def _neighbor_components(self, step: int) -> list[list[int]]:
        adjacency: dict[int, set[int]] = {r: set() for r in self.states}
        horizon = step - self.scenario.heartbeat_timeout
        for (a, b), last in self.last_heartbeat.items():
            if last > horizon:
                adjacency[a].add(b)
                adjacency[b].add(a)
        components: list[list[int]] = []
        unseen = set(self.states)
        while unseen:
            start = min(unseen)
            stack = [start]
            group = set()
            while stack:
                node = stack.pop()
                if node in group:
                    continue
                group.add(node)
                stack.extend(adjacency[node] - group)
            unseen -= group
            if len(group) > 1:
                components.append(sorted(group))
        return components

    # ------------------------------------------------------------- rendezvous

    def _broker_view_graph(
        self, broker: _RobotState, participants: list[int]
    ) -> MultiRobotPoseGraph:
        """Topology the broker can reconstruct from descriptors alone."""
        graph = MultiRobotPoseGraph()
        for robot in participants:
            count = broker.known_frames.get(robot, 0)
            for frame in range(count):
                graph.add_vertex(PoseKey(robot, frame))
            for frame in range(count - 1):
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
        participant_set = set(participants)
        for (a, b), _ in sorted(broker.inter_measurements.items()):
            if a.robot_id in participant_set and b.robot_id in participant_set:
                if a in graph.vertices and b in graph.vertices:
                    graph.add_edge(
                        Measurement(a, b, Pose.identity(), 1.0, 1.0, EdgeKind.INTER_LOOP)
                    )
        return graph

    def _generate_candidates(
        self, broker: _RobotState, participants: list[int], rng: np.random.Generator
    ) -> list[CandidateMatch]:
        candidates: list[CandidateMatch] = []
        excluded = broker.verified_pairs | broker.rejected_pairs
        for i, ra in enumerate(participants):
            for rb in participants[i + 1 :]:
                known_a = broker.known_frames.get(ra, 0)
                known_b = broker.known_frames.get(rb, 0)
                if known_a == 0 or known_b == 0:
                    continue
                traj_a = Trajectory(self.states[ra].truth.points[:known_a])
                traj_b = Trajectory(self.states[rb].truth.points[:known_b])
                found = simulate_place_recognition(
                    traj_a, traj_b, self.scenario.place_recognition, rng
                )
                candidates.extend(c for c in found if c.pair not in excluded)
        return candidates

    def _execute_rendezvous(self, step: int, participants: list[int]) -> None:
        scenario = self.scenario
        broker_id = elect_broker(set(participants))
        broker = self.states[broker_id]
        rng = self._rendezvous_rng()

        # Descriptor sync toward the broker, watermarked per sender.
        broker.known_frames[broker_id] = broker.frames_created
        for sender_id in sorted(participants):
            if sender_id == broker_id:
                continue
            sender = self.states[sender_id]
            new_frames = descriptor_bookkeeping(sender, broker)
            if new_frames:
                self.ledger.add(
                    LedgerRecord(
                        step,
                        sender_id,
                        broker_id,
                        "descriptor",
                        len(new_frames) * self.sizes.descriptor_bytes + self.sizes.overhead_bytes,
                    )
                )
                broker.descriptor_watermarks[sender_id] = new_frames[-1]
            broker.known_frames[sender_id] = (
                broker.descriptor_watermarks.get(sender_id, -1) + 1
            )

        view = self._broker_view_graph(broker, participants)
        lambda2_before = self._lambda2_of_view(view)

        candidates = self._generate_candidates(broker, participants, rng)
        generated = len(candidates)
        selected_total = 0
        verified_total = 0
        budget = scenario.budget if scenario.budget is not None else len(candidates)

        for _ in range(scenario.rounds):
            if not candidates or budget == 0:
                break
            reduced = build_reduced_graph(view, candidates)
            if scenario.prioritization == "spectral":
                selection = spectral_select(reduced, budget)
            else:
                selection = greedy_select(reduced, budget)
            chosen_pairs = [reduced.candidate_pairs[i] for i in selection.selected_indices()]
            by_pair = {c.pair: c for c in candidates}
            chosen = [by_pair[p] for p in sorted(chosen_pairs)]
            if not chosen:
                break
            selected_total += len(chosen)

            plan = (
                vertex_cover_plan(chosen)
                if scenario.exchange == "vertex_cover"
                else monolog_plan(chosen)
            )
            delivered: set[tuple[PoseKey, int]] = set()
            for key, destination in plan.transfers:
                self.ledger.add(
                    LedgerRecord(
                        step,
                        key.robot_id,
                        destination,
                        "vertex_payload",
                        self.sizes.vertex_payload_bytes + self.sizes.overhead_bytes,
                    )
                )
                delivered.add((key, destination))

            for candidate in chosen:
                computing_robot = plan.covered[candidate.pair]
                payload_key = (
                    candidate.vertex_a
                    if computing_robot == candidate.vertex_b.robot_id
                    else candidate.vertex_b
                )
                if (payload_key, computing_robot) not in delivered:
                    raise PayloadNotDeliveredError(
                        f"payload {payload_key} never reached robot {computing_robot}"
                    )
                measurement = simulate_geometric_verification(
                    candidate,
                    self.gt_poses,
                    scenario.verification_noise,
                    scenario.place_recognition,
                    self._verification_rng(candidate.pair),
                )
                other_owner = (
                    candidate.vertex_a.robot_id
                    if computing_robot == candidate.vertex_b.robot_id
                    else candidate.vertex_b.robot_id
                )
                self.ledger.add(
                    LedgerRecord(
                        step,
                        computing_robot,
                        other_owner,
                        "registration_result",
                        self.sizes.pose_record_bytes + self.sizes.overhead_bytes,
                    )
                )
                if measurement is None:
                    for robot in participants:
                        self.states[robot].rejected_pairs.add(candidate.pair)
                else:
                    verified_total += 1
                    for robot in participants:
                        state = self.states[robot]
                        state.verified_pairs.add(candidate.pair)
                        state.inter_measurements[candidate.pair] = measurement
            chosen_set = {c.pair for c in chosen}
            candidates = [c for c in candidates if c.pair not in chosen_set]
            view = self._broker_view_graph(broker, participants)

        lambda2_after = self._lambda2_of_view(view)

        # Anchor selection and decentralized optimization at the broker.
        choice = backend.select_anchor(
            [(robot, self.states[robot].reference_frame_id) for robot in participants]
        )
        merged = self._merged_graph(participants)
        for sender_id in sorted(participants):
            if sender_id == broker_id:
                continue
            state = self.states[sender_id]
            record_count = len(state.odometry) + len(state.inter_measurements) + state.frames_created
            self.ledger.add(
                LedgerRecord(
                    step,
                    sender_id,
                    broker_id,
                    "pose_graph",
                    record_count * self.sizes.pose_record_bytes + self.sizes.overhead_bytes,
                )
            )

        anchor_state = self.states[choice.anchor_robot_id]
        anchor_pose = anchor_state.estimates.get(choice.anchor_key, Pose.identity())
        merged.add_anchor(choice.anchor_key, anchor_pose)
        objective = math.nan
        ate: dict[int, float] = {}
        try:
            initial = backend.initialize(merged, choice.anchor_key)
        except backend.DisconnectedGraphError:
            initial = None
        if initial is not None:
            if scenario.robust:
                params = backend.GncParams(
                    tls_threshold=backend.tls_threshold_quantile(scenario.gnc_quantile)
                )
                result = backend.gnc_optimize(merged, initial, choice.anchor_key, params)
            else:
                result = backend.optimize(
                    merged,
                    initial,
                    choice.anchor_key,
                    max_iterations=scenario.optimizer_max_iterations,
                )
            self.all_converged = self.all_converged and result.converged
            self.last_optimization = (merged, result)
            objective = result.objective
            for robot in participants:
                state = self.states[robot]
                for key, pose in result.estimates.items():
                    if key.robot_id == robot:
                        state.estimates[key] = pose
                state.adopt_reference(choice.reference_frame_id)
            for receiver_id in sorted(participants):
                if receiver_id == broker_id:
                    continue
                own = sum(1 for key in result.estimates if key.robot_id == receiver_id)
                self.ledger.add(
                    LedgerRecord(
                        step,
                        broker_id,
                        receiver_id,
                        "estimates",
                        own * self.sizes.pose_record_bytes + self.sizes.overhead_bytes,
                    )
                )
            ate = self._joint_ate(participants, result.estimates)
        for robot in participants:
            self.states[robot].last_rendezvous_step = step

        self.trace.append(
            RendezvousRecord(
                step=step,
                participants=tuple(participants),
                broker=broker_id,
                anchor_robot=choice.anchor_robot_id,
                reference_frame_id=choice.reference_frame_id,
                candidates_generated=generated,
                candidates_selected=selected_total,
                candidates_verified=verified_total,
                lambda2_before=lambda2_before,
                lambda2_after=lambda2_after,
                objective=objective,
                ate=ate,
                cumulative_bytes=self.ledger.total_bytes(),
            )
        )

    def _lambda2_of_view(self, view: MultiRobotPoseGraph) -> float:
        if len(view.vertices) < 2:
            return 0.0
        reduced = build_reduced_graph(view, [])
        return fiedler(base_laplacian(reduced))[0]

    def _merged_graph(self, participants: list[int]) -> MultiRobotPoseGraph:
        graph = MultiRobotPoseGraph()
        participant_set = set(participants)
        for robot in sorted(participants):
            state = self.states[robot]
            for frame in range(state.frames_created):
                graph.add_vertex(PoseKey(robot, frame))
            for edge in state.odometry:
                graph.add_edge(edge)
        seen: set[tuple[PoseKey, PoseKey]] = set()
        for robot in sorted(participants):
            for pair, measurement in sorted(self.states[robot].inter_measurements.items()):
                if pair in seen:
                    continue
                a, b = pair
                if a.robot_id in participant_set and b.robot_id in participant_set:
                    if a in graph.vertices and b in graph.vertices:
                        seen.add(pair)
                        graph.add_edge(measurement)
        return graph

    def _joint_ate(
        self, participants: list[int], estimates: dict[PoseKey, Pose]
    ) -> dict[int, float]:
        """Per-robot RMSE under one shared alignment of all participants' poses."""
        keys = sorted(k for k in estimates if k.robot_id in set(participants) and k in self.gt_poses)
        if len(keys) < 3:
            return {}
        est = np.array([estimates[k].translation for k in keys])
        ref = np.array([self.gt_poses[k].translation for k in keys])
        try:
            rotation, translation = umeyama_alignment(est, ref)
        except ValueError:
            return {}
        aligned = est @ rotation.T + translation
        out: dict[int, float] = {}
        for robot in participants:
            rows = [i for i, k in enumerate(keys) if k.robot_id == robot]
            if not rows:
                continue
            residual = aligned[rows] - ref[rows]
            out[robot] = float(np.sqrt(np.mean(np.sum(residual * residual, axis=1))))
        return out

    # ------------------------------------------------------------------- main

    def run(self) -> SimulationResult:
        scenario = self.scenario
        for step in range(self.total_steps):
            self._create_keyframes(step)
            pairs = scenario.communication.pairs_in_range(
                step, self._positions(step), self.total_steps - 1
            )
            self._exchange_heartbeats(step, pairs)
            for group in self._neighbor_components(step):
                ready = all(
                    self.states[r].last_rendezvous_step is None
                    or self.states[r].last_rendezvous_step <= step - scenario.rendezvous_cooldown
                    for r in group
                )
                if ready:
                    self._execute_rendezvous(step, group)
        graphs = {robot: self._robot_graph(robot) for robot in self.states}
        return SimulationResult(
            trace=self.trace,
            ledger=self.ledger,
            graphs=graphs,
            estimates={
                robot: {
                    key: pose
                    for key, pose in state.estimates.items()
                    if key.robot_id == robot
                }
                for robot, state in self.states.items()
            },
            reference_frames={r: s.reference_frame_id for r, s in self.states.items()},
            reference_histories={r: list(s.reference_history) for r, s in self.states.items()},
            converged=self.all_converged,
            last_optimization=self.last_optimization,
        )

    def _robot_graph(self, robot: int) -> MultiRobotPoseGraph:
        state = self.states[robot]
        graph = MultiRobotPoseGraph()
        for frame in range(state.frames_created):
            key = PoseKey(robot, frame)
            graph.add_vertex(key, state.estimates.get(key))
        for edge in state.odometry:
            graph.add_edge(edge)
        for (a, b), measurement in sorted(state.inter_measurements.items()):
            for key in (a, b):
                if key not in graph.vertices:
                    graph.vertices[key] = None
            graph.add_edge(measurement)
        return graph


def scenario_to_json(scenario: Scenario) -> str:
    """Serialize a scenario (without trajectories) plus inline TUM trajectories."""
    payload = {
        "odometry_noise": asdict(scenario.odometry_noise),
        "verification_noise": asdict(scenario.verification_noise),
        "place_recognition": asdict(scenario.place_recognition),
        "communication": {
            "mode": scenario.communication.mode,
            "radius": scenario.communication.radius,
            "schedule": [
                {"start": w.start, "end": w.end, "robots": list(w.robots)}
                for w in scenario.communication.schedule
            ],
        },
        "sizes": asdict(scenario.sizes),
        "budget": scenario.budget,
        "rounds": scenario.rounds,
        "seed": scenario.seed,
        "prioritization": scenario.prioritization,
        "exchange": scenario.exchange,
        "rendezvous_cooldown": scenario.rendezvous_cooldown,
        "heartbeat_timeout": scenario.heartbeat_timeout,
        "robust": scenario.robust,
        "gnc_quantile": scenario.gnc_quantile,
        "optimizer_max_iterations": scenario.optimizer_max_iterations,
        "trajectories": {
            str(robot): [
                [p.stamp, *p.pose.to_quat()]
                for p in traj
            ]
            for robot, traj in sorted(scenario.trajectories.items())
        },
    }
    return json.dumps(payload, indent=2, sort_keys=True)


def scenario_from_json(text: str) -> Scenario:
    payload = json.loads(text)
    trajectories = {}
    for robot_str, rows in payload["trajectories"].items():
        robot = int(robot_str)
        points = []
        for frame, row in enumerate(rows):
            stamp, tx, ty, tz, qx, qy, qz, qw = row
            points.append(
                TrajectoryPoint(float(stamp), PoseKey(robot, frame), Pose.from_quat(tx, ty, tz, qx, qy, qz, qw))
            )
        trajectories[robot] = Trajectory(points)
    return Scenario(
        trajectories=trajectories,
        odometry_noise=NoiseModel(**payload["odometry_noise"]),
        verification_noise=NoiseModel(**payload["verification_noise"]),
        place_recognition=PlaceRecognitionModel(**payload["place_recognition"]),
        communication=CommunicationModel(
            mode=payload["communication"]["mode"],
            radius=payload["communication"]["radius"],
            schedule=[
                ContactWindow(start=w["start"], end=w["end"], robots=tuple(w["robots"]))
                for w in payload["communication"]["schedule"]
            ],
        ),
        sizes=MessageSizes(**payload["sizes"]),
        budget=payload["budget"],
        rounds=payload["rounds"],
        seed=payload["seed"],
        prioritization=payload["prioritization"],
        exchange=payload["exchange"],
        rendezvous_cooldown=payload["rendezvous_cooldown"],
        heartbeat_timeout=payload["heartbeat_timeout"],
        robust=payload["robust"],
        gnc_quantile=payload["gnc_quantile"],
        optimizer_max_iterations=payload.get("optimizer_max_iterations", 100),
    )
