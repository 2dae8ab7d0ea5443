"""Script for a single solve of the packaged reference instance."""

import argparse
import asyncio
import logging

from hybid.main.graph import graph
from hybid.oracle import worst_case_profit

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)


async def main(gamma: int, enumerate_tiny: bool, instance_path: str | None = None):
    state = await graph.ainvoke(
        {"instance_path": instance_path, "gamma": gamma, "enumerate": enumerate_tiny}
    )
    solution = state.get("solution")
    if solution is None:
        logger.error(f"No solution: {state['result'].status.value}")
        return
    breakdown = worst_case_profit(solution, state["instance"])
    logger.info(f"Objective {solution.objective_value:.2f} EUR at gamma={gamma}")
    logger.info(breakdown.model_dump_json(indent=2))
    if "verification" in state:
        logger.info(f"Verification ok: {state['verification'].ok}")


if __name__ == "__main__":
    parser = argparse.ArgumentParser()
    parser.add_argument(
        "--gamma",
        type=int,
        default=12,
        help="Number of hours the system may deviate against the facility",
    )
    parser.add_argument(
        "--instance",
        type=str,
        default=None,
        help="Instance JSON file, the reference instance when omitted",
    )
    parser.add_argument(
        "--enumerate",
        type=int,
        default=0,
        help="Whether to brute-force micro instances as a check (1 for yes, 0 for no)",
    )
    args = parser.parse_args()
    asyncio.run(main(args.gamma, bool(args.enumerate), args.instance))
