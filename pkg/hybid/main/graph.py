"""Single-solve pipeline: load, build, solve, verify."""

import logging
from typing import Literal, TypedDict

from langgraph.graph import END, StateGraph

from hybid.evalreport import check_gammas
from hybid.instance import load_instance, reference_instance
from hybid.main.config import get_config, make_backend, solve_options
from hybid.main.robust import verify_duality
from hybid.main.solution import build_model, extract_solution, solution_point
from hybid.model_ir import SolveStatus, evaluate_constraints
from hybid.oracle import (
    MAX_PERIODS,
    MAX_SCENARIOS,
    enumerate_tiny,
    envelope_constant,
    objective_consistency,
    replay_violations,
)
from hybid.schemas import PipelineState, Verification

logger = logging.getLogger(__name__)


def load_inputs(state: PipelineState):
    instance = state.get("instance")
    if instance is None:
        path = state.get("instance_path")
        instance = load_instance(path) if path else reference_instance()
    gamma = state.get("gamma")
    solution = state.get("solution")
    if gamma is None and solution is not None:
        gamma = solution.gamma
    if gamma is not None:
        check_gammas(instance, [gamma])
        instance = instance.with_gamma(gamma)
    return {"instance": instance}


def build_model_node(state: PipelineState):
    solution = state.get("solution")
    stored = solution.accurate_battery if solution is not None else True
    built = build_model(state["instance"], accurate_battery=state.get("accurate_battery", stored))
    return {"built": built}


def route_after_build(state: PipelineState) -> Literal["solve_model", "verify_solution"]:
    if state.get("solution") is not None:
        return "verify_solution"
    return "solve_model"


def solve_model(state: PipelineState, config):
    backend = make_backend(config)
    result = backend.solve(state["built"].model, solve_options(config))
    solution = extract_solution(state["built"], result) if result.has_primal else None
    return {"result": result, "solution": solution}


def route_after_solve(state: PipelineState) -> Literal["verify_solution", "__end__"]:
    if state["result"].status is SolveStatus.OPTIMAL:
        return "verify_solution"
    logger.warning(f"Skipping verification, solver returned {state['result'].status.value}")
    return END


def _is_micro(state: PipelineState) -> bool:
    instance = state["instance"]
    return instance.n_periods <= MAX_PERIODS and instance.n_scenarios <= MAX_SCENARIOS


def verify_solution(state: PipelineState, config):
    settings = get_config(config)
    built, solution, instance = state["built"], state["solution"], state["instance"]
    point = solution_point(built, solution)
    violations = evaluate_constraints(built.model, point, tol=settings["feasibility_tol"])
    duality = verify_duality(solution, instance, tol=settings["duality_tol"])
    replay = replay_violations(
        solution,
        instance,
        accurate_battery=built.registry.accurate_battery,
        tol=settings["feasibility_tol"],
    )
    verification = Verification(
        violations=[(v.name, v.magnitude) for v in violations],
        replay_issues=replay,
        duality_issues=[(i.scenario, i.period, i.magnitude) for i in duality.issues],
        objective_error=objective_consistency(solution, instance),
        tolerance=settings["duality_tol"],
    )
    if state.get("enumerate") and _is_micro(state):
        step = settings["grid_step"]
        tiny = enumerate_tiny(
            instance,
            grid_step=step,
            node_cap=settings["node_cap"],
            accurate_battery=built.registry.accurate_battery,
        )
        if tiny.feasible:
            slack = envelope_constant(instance) * step
            tol = settings["duality_tol"] * max(1.0, abs(tiny.best_profit))
            value = solution.objective_value
            verification.enumeration_best = tiny.best_profit
            verification.enumeration_slack = slack
            verification.enumeration_within = bool(
                tiny.best_profit - tol <= value <= tiny.best_profit + slack + tol
            )
    logger.info(
        f"Verification at gamma={solution.gamma}: {len(violations)} violation(s), "
        f"{len(replay)} replay issue(s), "
        f"{len(duality.issues)} duality issue(s), objective error {verification.objective_error:.2e}"
    )
    return {"verification": verification}


class ConfigSchema(TypedDict):
    backend: str
    mip_gap: float
    time_limit: float


graph_builder = StateGraph(PipelineState, config_schema=ConfigSchema)
graph_builder.add_node(load_inputs)
graph_builder.add_node("build_model", build_model_node)
graph_builder.add_node(solve_model)
graph_builder.add_node(verify_solution)
graph_builder.set_entry_point("load_inputs")
graph_builder.add_edge("load_inputs", "build_model")
graph_builder.add_conditional_edges("build_model", route_after_build)
graph_builder.add_conditional_edges("solve_model", route_after_solve)
graph_builder.add_edge("verify_solution", END)
graph = graph_builder.compile()
