"""Benchmark command line: scenario generation, simulation runs, metric sweeps.

Exit codes: 0 success, 1 usage error, 2 data error, 3 optimizer
non-convergence. The default output directory comes from --out or the
MRSLAM_OUT environment variable.
"""

from __future__ import annotations

import argparse
import functools
import os
import sys
from pathlib import Path

from .backend import result_edges_csv
from .experiments import (
    CURVE_CSV_HEADER,
    EXCHANGE_CSV_HEADER,
    ExperimentConfig,
    import_trajectory,
    rows_to_csv,
    run_curve_experiment,
    run_exchange_experiment,
    write_atomic,
)
from .formats import ParseError, write_g2o, write_tum
from .generators import (
    crossing_loops,
    graded_corridors,
    manhattan_grid,
    parallel_corridors,
    shared_circuit,
    staged_rendezvous_scenario,
    star_rendezvous,
    worst_case_two_robot_scenario,
)
from .graph import trajectory_from_estimates
from .metrics import AlignmentError, ate_rmse
from .sim import (
    CommunicationModel,
    NoiseModel,
    PlaceRecognitionModel,
    Scenario,
    run,
    scenario_from_json,
    scenario_to_json,
    trace_to_csv,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NOT_CONVERGED = 3


class UsageError(ValueError):
    pass


class NotConvergedError(RuntimeError):
    pass


_TRAJECTORY_GENERATORS = {
    "parallel_corridors": parallel_corridors,
    "graded_corridors": graded_corridors,
    "crossing_loops": crossing_loops,
    "star_rendezvous": star_rendezvous,
    "manhattan_grid": manhattan_grid,
    "shared_circuit": shared_circuit,
}

_SCENARIO_GENERATORS = {
    "worst_case_two_robot": worst_case_two_robot_scenario,
    "staged_rendezvous": staged_rendezvous_scenario,
}


def _output_dir(args) -> Path:
    out = args.out or os.environ.get("MRSLAM_OUT")
    if not out:
        raise UsageError("no output directory: pass --out or set MRSLAM_OUT")
    return Path(out)


def _parse_seeds(text: str) -> tuple[int, ...]:
    try:
        seeds = tuple(int(s) for s in text.split(",") if s.strip() != "")
    except ValueError:
        raise UsageError(f"bad seed list {text!r}") from None
    if not seeds:
        raise UsageError("seed list is empty")
    return seeds


def _parse_budgets(text: str) -> tuple[int, ...]:
    try:
        if "-" in text and "," not in text:
            lo, hi = text.split("-")
            return tuple(range(int(lo), int(hi) + 1))
        return tuple(int(s) for s in text.split(","))
    except ValueError:
        raise UsageError(f"bad budget list {text!r}") from None


def _load_scenario(args) -> Scenario:
    name = args.scenario
    if name in _SCENARIO_GENERATORS:
        scenario = _SCENARIO_GENERATORS[name](seed=args.seed if args.seed is not None else 0)
    else:
        path = Path(name)
        if not path.exists():
            raise UsageError(
                f"scenario {name!r} is neither a known generator "
                f"({', '.join(sorted(_SCENARIO_GENERATORS))}) nor a file"
            )
        try:
            scenario = scenario_from_json(path.read_text())
        except (KeyError, ValueError) as exc:
            raise ParseError(0, f"bad scenario file {path}: {exc}") from None
    if args.seed is not None:
        scenario.seed = args.seed
    if getattr(args, "mode", None):
        scenario.prioritization = args.mode
    if getattr(args, "exchange", None):
        scenario.exchange = args.exchange
    if getattr(args, "budget", None) is not None:
        scenario.budget = args.budget
    if getattr(args, "worst_case", False):
        scenario.communication = CommunicationModel(mode="worst_case")
    if getattr(args, "lm_iterations", None) is not None:
        if args.lm_iterations < 1:
            raise UsageError("--lm-iterations must be at least 1")
        scenario.optimizer_max_iterations = args.lm_iterations
        scenario.robust = False  # the cap applies to the plain optimizer
    return scenario


def _cmd_generate(args) -> int:
    out_dir = _output_dir(args)
    if args.scenario in _SCENARIO_GENERATORS:
        scenario = _SCENARIO_GENERATORS[args.scenario](seed=args.seed or 0)
    elif args.scenario in _TRAJECTORY_GENERATORS:
        trajectories = _TRAJECTORY_GENERATORS[args.scenario](n_robots=args.robots)
        scenario = Scenario(
            trajectories=trajectories,
            odometry_noise=NoiseModel(0.005, 0.03),
            verification_noise=NoiseModel(0.004, 0.02),
            place_recognition=PlaceRecognitionModel(match_radius=2.0),
            communication=CommunicationModel(mode="range", radius=3.0),
            seed=args.seed or 0,
        )
    else:
        raise UsageError(
            f"unknown scenario generator {args.scenario!r}; choose from "
            f"{', '.join(sorted(set(_SCENARIO_GENERATORS) | set(_TRAJECTORY_GENERATORS)))}"
        )
    write_atomic(out_dir / f"{args.scenario}.json", scenario_to_json(scenario))
    for robot, traj in sorted(scenario.trajectories.items()):
        write_atomic(out_dir / f"{args.scenario}_gt_r{robot}.tum", write_tum(traj))
    print(f"wrote {out_dir / (args.scenario + '.json')}")
    return EXIT_OK


def _cmd_run(args) -> int:
    out_dir = _output_dir(args)
    scenario = _load_scenario(args)
    result = run(scenario)
    if not result.converged:
        raise NotConvergedError("pose graph optimization did not converge")
    write_atomic(out_dir / "ledger.csv", result.ledger.to_csv())
    write_atomic(out_dir / "trace.csv", trace_to_csv(result.trace))
    for robot, graph in sorted(result.graphs.items()):
        write_atomic(out_dir / f"graph_r{robot}.g2o", write_g2o(graph))
        estimates = result.estimates[robot]
        if estimates:
            write_atomic(
                out_dir / f"estimates_r{robot}.tum",
                write_tum(trajectory_from_estimates(estimates)),
            )
    if result.last_optimization is not None:
        merged, opt = result.last_optimization
        optimized = merged.copy()
        optimized.vertices = dict(opt.estimates)
        write_atomic(out_dir / "optimized.g2o", write_g2o(optimized))
        write_atomic(out_dir / "result_edges.csv", result_edges_csv(merged, opt))
    print(
        f"{len(result.trace)} rendezvous, {len(result.ledger.records)} messages, "
        f"{result.ledger.total_bytes()} bytes -> {out_dir}"
    )
    return EXIT_OK


def _cmd_curve(args) -> int:
    factory = _SCENARIO_GENERATORS.get(args.scenario)
    if factory is None:
        raise UsageError(
            f"curve scenario must be a generator name, one of "
            f"{', '.join(sorted(_SCENARIO_GENERATORS))}"
        )
    if args.scenario == "worst_case_two_robot" and args.length:
        factory = functools.partial(worst_case_two_robot_scenario, length=args.length)
    config = ExperimentConfig(
        scenario_factory=factory,
        prioritization_modes=tuple(args.modes.split(",")),
        exchange_mode=args.exchange or "monolog",
        budget=args.budget if args.budget is not None else 1,
        seeds=_parse_seeds(args.seeds),
    )
    rows = run_curve_experiment(config)
    unconverged = [r for r in rows if not (r["objective"] >= 0.0)]
    if unconverged:
        raise NotConvergedError("curve optimization produced invalid objectives")
    out_dir = _output_dir(args)
    write_atomic(out_dir / "curve.csv", rows_to_csv(rows, CURVE_CSV_HEADER))
    print(f"wrote {out_dir / 'curve.csv'} ({len(rows)} rows)")
    return EXIT_OK


def _cmd_exchange(args) -> int:
    config = ExperimentConfig(
        scenario_factory=worst_case_two_robot_scenario,
        seeds=_parse_seeds(args.seeds),
        budgets=_parse_budgets(args.budgets),
    )
    rows = run_exchange_experiment(config)
    out_dir = _output_dir(args)
    write_atomic(out_dir / "exchange.csv", rows_to_csv(rows, EXCHANGE_CSV_HEADER))
    print(f"wrote {out_dir / 'exchange.csv'} ({len(rows)} rows)")
    return EXIT_OK


def _cmd_metrics(args) -> int:
    estimate = import_trajectory(args.estimate, args.format)
    reference = import_trajectory(args.reference, args.format)
    try:
        value = ate_rmse(estimate, reference)
    except AlignmentError as exc:
        raise ParseError(0, str(exc)) from None
    print(f"ate_rmse {value:.9f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mrslam",
        description="Multi-robot rendezvous SLAM benchmark toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_generate = sub.add_parser("generate", help="write a scenario file and ground-truth TUM dumps")
    p_generate.add_argument("--scenario", required=True)
    p_generate.add_argument("--robots", type=int, default=2)
    p_generate.add_argument("--seed", type=int, default=0)
    p_generate.add_argument("--out")
    p_generate.set_defaults(handler=_cmd_generate)

    p_run = sub.add_parser("run", help="run a full deterministic simulation")
    p_run.add_argument("--scenario", required=True, help="generator name or scenario JSON file")
    p_run.add_argument("--mode", choices=("greedy", "spectral"))
    p_run.add_argument("--exchange", choices=("monolog", "vertex_cover"))
    p_run.add_argument("--budget", type=int)
    p_run.add_argument("--seed", type=int)
    p_run.add_argument("--worst-case", action="store_true")
    p_run.add_argument(
        "--lm-iterations",
        type=int,
        help="cap Levenberg-Marquardt iterations (disables the robust solver)",
    )
    p_run.add_argument("--out")
    p_run.set_defaults(handler=_cmd_run)

    p_curve = sub.add_parser("curve", help="greedy-vs-spectral percent-computed curves")
    p_curve.add_argument("--scenario", default="worst_case_two_robot")
    p_curve.add_argument("--modes", default="greedy,spectral")
    p_curve.add_argument("--exchange", choices=("monolog", "vertex_cover"))
    p_curve.add_argument("--budget", type=int, default=1)
    p_curve.add_argument("--length", type=int)
    p_curve.add_argument("--seeds", default="0")
    p_curve.add_argument("--out")
    p_curve.set_defaults(handler=_cmd_curve)

    p_exchange = sub.add_parser("exchange", help="monolog-vs-cover byte sweep over budgets")
    p_exchange.add_argument("--budgets", default="1-12")
    p_exchange.add_argument("--seeds", default="0")
    p_exchange.add_argument("--out")
    p_exchange.set_defaults(handler=_cmd_exchange)

    p_metrics = sub.add_parser("metrics", help="ATE between two trajectory files")
    p_metrics.add_argument("--estimate", required=True)
    p_metrics.add_argument("--reference", required=True)
    p_metrics.add_argument("--format", choices=("tum", "g2o"), default="tum")
    p_metrics.set_defaults(handler=_cmd_metrics)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.handler(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ParseError, FileNotFoundError, AlignmentError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NotConvergedError as exc:
        print(f"non-convergence: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED


if __name__ == "__main__":
    sys.exit(main())
