"""Multi-robot pose-graph SLAM core.

Library, deterministic rendezvous simulator, and benchmark CLI for budgeted
inter-robot loop-closure prioritization, communication-minimal keyframe
exchange, decentralized broker/anchor election, and robust SE(3) pose-graph
optimization.
"""

from .geometry import Pose, compose, inverse, se3_exp, se3_log
from .graph import (
    EdgeKind,
    GraphError,
    Measurement,
    MultiRobotPoseGraph,
    PoseKey,
    Trajectory,
    TrajectoryPoint,
    split_trajectory,
)
from .metrics import AlignmentError, ate_rmse, umeyama_alignment
from .exchange import (
    CandidateMatch,
    TransmissionPlan,
    account_bytes,
    elect_broker,
    monolog_plan,
    vertex_cover_plan,
)
from .prioritization import (
    ReducedGraph,
    SelectionVector,
    build_reduced_graph,
    exhaustive_select,
    fiedler,
    greedy_select,
    spectral_select,
    weighted_laplacian,
)

__all__ = [
    "AlignmentError",
    "CandidateMatch",
    "EdgeKind",
    "GraphError",
    "Measurement",
    "MultiRobotPoseGraph",
    "Pose",
    "PoseKey",
    "ReducedGraph",
    "SelectionVector",
    "Trajectory",
    "TrajectoryPoint",
    "TransmissionPlan",
    "account_bytes",
    "ate_rmse",
    "build_reduced_graph",
    "compose",
    "elect_broker",
    "exhaustive_select",
    "fiedler",
    "greedy_select",
    "inverse",
    "monolog_plan",
    "se3_exp",
    "se3_log",
    "spectral_select",
    "split_trajectory",
    "umeyama_alignment",
    "vertex_cover_plan",
    "weighted_laplacian",
]

__version__ = "0.1.0"
