"""Command line: solve, sweep, evaluate, ablate and verify."""

import argparse
import asyncio
import json
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

from dotenv import load_dotenv

from hybid.errors import (
    BackendUnavailable,
    DualityGap,
    EmptyReport,
    HybidError,
    IncompleteSolution,
    NumericFailure,
    ParseError,
    TooLarge,
)
from hybid.evalreport import (
    check_dominance,
    export_ablation,
    export_report,
    mean_realized_imbalance,
    realized_imbalance_revenue,
)
from hybid.instance import load_direction_sequences, load_instance, reference_instance
from hybid.main.config import get_config
from hybid.main.graph import graph
from hybid.oracle import worst_case_profit
from hybid.schemas import Instance, Solution
from hybid.sweep_graph import ablation_graph, sweep_graph

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_SOLVER = 2
EXIT_VERIFICATION = 3

_EXIT_CODES = (
    ((DualityGap, IncompleteSolution), EXIT_VERIFICATION),
    ((BackendUnavailable, NumericFailure, TooLarge, EmptyReport), EXIT_SOLVER),
)


def parse_gammas(text: str) -> List[int]:
    """`A..B` (inclusive) or a comma separated list."""
    try:
        if ".." in text:
            start, stop = text.split("..", 1)
            return list(range(int(start), int(stop) + 1))
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid gamma list: {text!r}") from None


def runnable_config(args: argparse.Namespace) -> dict:
    settings = dict(get_config())
    env = {
        "backend": os.environ.get("HYBID_BACKEND"),
        "time_limit": os.environ.get("HYBID_TIME_LIMIT"),
        "mip_gap": os.environ.get("HYBID_MIP_GAP"),
    }
    if env["backend"]:
        settings["backend"] = env["backend"]
    if env["time_limit"]:
        settings["time_limit"] = float(env["time_limit"])
    if env["mip_gap"]:
        settings["mip_gap"] = float(env["mip_gap"])
    if args.backend:
        settings["backend"] = args.backend
    if args.time_limit is not None:
        settings["time_limit"] = args.time_limit
    if args.mip_gap is not None:
        settings["mip_gap"] = args.mip_gap
    return {"configurable": settings}


def _instance(args: argparse.Namespace) -> Instance:
    if args.instance:
        return load_instance(args.instance)
    return reference_instance()


def _load_solution(path: str) -> Solution:
    try:
        return Solution.model_validate_json(Path(path).read_text())
    except FileNotFoundError as e:
        raise ParseError(f"solution file not found: {path}") from e
    except OSError as e:
        raise ParseError(f"cannot read solution file {path}: {e}") from e
    except ValueError as e:
        raise ParseError(f"{path}: {e}") from e


def _dump(path: Path, payload) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


async def solve(args, config) -> int:
    state = await graph.ainvoke({"instance": _instance(args), "gamma": args.gamma}, config)
    result = state["result"]
    if state.get("solution") is None or result.status.value != "Optimal":
        print(f"Solver returned {result.status.value}", file=sys.stderr)
        return EXIT_SOLVER
    solution, instance = state["solution"], state["instance"]
    out = Path(args.out)
    _dump(out / "solution.json", solution.model_dump(mode="json"))
    breakdown = worst_case_profit(solution, instance)
    _dump(out / "breakdown.json", breakdown.model_dump(mode="json"))
    print(
        f"gamma={solution.gamma} objective={solution.objective_value:.6f} "
        f"da={breakdown.da_revenue:.2f} imbalance={breakdown.imbalance_revenue_expected:.2f}"
    )
    if not state["verification"].ok:
        print("Solution failed verification", file=sys.stderr)
        return EXIT_VERIFICATION
    return EXIT_OK


def _gammas(args, instance: Instance) -> List[int]:
    return args.gammas if args.gammas is not None else list(range(instance.n_periods + 1))


def _directions(args, instance: Instance):
    if not args.directions:
        return []
    return load_direction_sequences(args.directions, n_periods=instance.n_periods)


async def sweep(args, config) -> int:
    instance = _instance(args)
    state = await sweep_graph.ainvoke(
        {
            "instance": instance,
            "gammas": _gammas(args, instance),
            "directions": _directions(args, instance),
        },
        config,
    )
    report = state["report"]
    export_report(report, args.out)
    print(f"{len(report.rows)} rows, plateau from gamma={report.plateau_gamma()}")
    if not report.is_monotone():
        logger.warning("Total expected profit increases somewhere along the sweep")
    failed = [row.gamma for row in report.rows if not row.ok]
    if failed:
        print(f"Failed budgets: {failed}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


async def ablate(args, config) -> int:
    instance = _instance(args)
    state = await ablation_graph.ainvoke(
        {
            "instance": instance,
            "gammas": _gammas(args, instance),
            "directions": _directions(args, instance),
        },
        config,
    )
    reports = state["reports"]
    export_ablation(reports, args.out)
    violations = check_dominance(reports)
    for violation in violations:
        print(f"Dominance violated at {violation}", file=sys.stderr)
    return EXIT_VERIFICATION if violations else EXIT_OK


async def evaluate(args, config) -> int:
    instance = _instance(args)
    solution = _load_solution(args.solution)
    instance = instance.with_gamma(solution.gamma)
    sequences = _directions(args, instance)
    if not sequences:
        raise ParseError("evaluate needs at least one direction sequence")
    breakdown = worst_case_profit(solution, instance)
    hydrogen = breakdown.hydrogen_revenue_expected - breakdown.water_cost_expected
    real_imbalance = mean_realized_imbalance(solution, sequences, instance)
    payload = {
        "gamma": solution.gamma,
        "per_sequence": [realized_imbalance_revenue(solution, seq, instance) for seq in sequences],
        "real_imbalance": real_imbalance,
        "real_total": breakdown.da_revenue + hydrogen + real_imbalance,
        "total_expected": breakdown.total,
    }
    _dump(Path(args.out) / "evaluation.json", payload)
    print(f"real_total={payload['real_total']:.6f} over {len(sequences)} sequence(s)")
    return EXIT_OK


async def verify(args, config) -> int:
    state = {"instance": _instance(args), "gamma": args.gamma, "enumerate": True}
    if args.solution:
        state["solution"] = _load_solution(args.solution)
    state = await graph.ainvoke(state, config)
    verification = state.get("verification")
    if verification is None:
        print(f"Solver returned {state['result'].status.value}", file=sys.stderr)
        return EXIT_SOLVER
    print(verification.model_dump_json(indent=2))
    return EXIT_OK if verification.ok else EXIT_VERIFICATION


COMMANDS = {
    "solve": solve,
    "sweep": sweep,
    "evaluate": evaluate,
    "ablate": ablate,
    "verify": verify,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    source = common.add_mutually_exclusive_group()
    source.add_argument("--instance", type=str, default=None, help="Instance JSON file")
    source.add_argument(
        "--reference",
        action="store_true",
        help="Use the packaged reference instance (the default without --instance)",
    )
    common.add_argument("--out", type=str, default="out", help="Output directory")
    common.add_argument("--backend", type=str, default=None, choices=["highs", "cbc"])
    common.add_argument("--time-limit", type=float, default=None, help="Seconds per solve")
    common.add_argument("--mip-gap", type=float, default=None, help="Relative MIP gap")
    common.add_argument("--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="hybid", description=__doc__)
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("solve", parents=[common], help="Solve at one budget")
    p.add_argument("--gamma", type=int, default=None)

    for name in ("sweep", "ablate"):
        p = commands.add_parser(name, parents=[common], help=f"{name.capitalize()} over budgets")
        p.add_argument("--gammas", type=parse_gammas, default=None, help="A..B or a,b,c")
        p.add_argument("--directions", type=str, default=None, help="Direction CSV file")

    p = commands.add_parser("evaluate", parents=[common], help="Settle a stored solution")
    p.add_argument("--solution", type=str, required=True)
    p.add_argument("--directions", type=str, required=True)

    p = commands.add_parser("verify", parents=[common], help="Check a solution")
    p.add_argument("--gamma", type=int, default=None)
    p.add_argument("--solution", type=str, default=None, help="Solve first when omitted")
    return parser


def _error_payload(exc: Exception) -> dict:
    detail = {}
    for attr in ("field_path", "scenario", "period", "magnitude", "log_excerpt"):
        if getattr(exc, attr, None) is not None:
            detail[attr] = getattr(exc, attr)
    return {"error": type(exc).__name__, "message": str(exc), "detail": detail}


def exit_code(exc: HybidError) -> int:
    for kinds, code in _EXIT_CODES:
        if isinstance(exc, kinds):
            return code
    return EXIT_VALIDATION


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO)
    try:
        config = runnable_config(args)
        return asyncio.run(COMMANDS[args.command](args, config))
    except HybidError as e:
        print(json.dumps(_error_payload(e)), file=sys.stderr)
        return exit_code(e)
    except (ValueError, OSError) as e:
        print(json.dumps(_error_payload(e)), file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
