"""Building, solving and reading back the full robust model."""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from hybid.backends import Backend, get_backend
from hybid.errors import IncompleteSolution
from hybid.main.facility import VariableRegistry, build_facility
from hybid.main.robust import RobustVars, apply_robust_objective
from hybid.model_ir import ModelIR, SolveResult, SolveStatus, VarRef
from hybid.schemas import (
    FIRST_STAGE_FIELDS,
    ROBUST_FIELDS,
    SECOND_STAGE_FIELDS,
    Instance,
    Solution,
    SolveOptions,
)

logger = logging.getLogger(__name__)


@dataclass
class BuiltModel:
    instance: Instance
    model: ModelIR
    registry: VariableRegistry
    robust: RobustVars


@dataclass
class SolvedModel(BuiltModel):
    result: SolveResult
    solution: Optional[Solution] = None

    @property
    def optimal(self) -> bool:
        return self.result.status is SolveStatus.OPTIMAL


def build_model(
    instance: Instance, accurate_battery: bool = True, tighten: bool = True
) -> BuiltModel:
    model, reg = build_facility(instance, accurate_battery=accurate_battery)
    rv = apply_robust_objective(model, reg, instance, tighten=tighten)
    logger.info(f"Built {model.summary()} for gamma={instance.imbalance.gamma}")
    return BuiltModel(instance=instance, model=model, registry=reg, robust=rv)


def _handles(built: BuiltModel) -> dict:
    reg, rv = built.registry, built.robust
    handles = {name: reg.first[name] for name in FIRST_STAGE_FIELDS}
    handles.update({name: reg.second[name] for name in SECOND_STAGE_FIELDS})
    if reg.accurate_battery:
        handles["soe_seg"] = reg.soe_seg
    handles["omega"] = rv.omega
    handles.update({name: getattr(rv, name) for name in ROBUST_FIELDS})
    return handles


def _read(refs, x: np.ndarray):
    if isinstance(refs, VarRef):
        return float(x[refs.index])
    return [_read(ref, x) for ref in refs]


def extract_solution(built: BuiltModel, result: SolveResult) -> Solution:
    if result.primal is None:
        raise IncompleteSolution(f"no primal values for status {result.status.value}")
    x = np.asarray(result.primal, dtype=float)
    values = {name: _read(refs, x) for name, refs in _handles(built).items()}
    if not built.registry.accurate_battery:
        values["soe_seg"] = [
            [[] for _ in range(built.instance.n_scenarios)]
            for _ in range(built.instance.n_periods)
        ]
    return Solution(
        status=result.status.value,
        gamma=built.instance.imbalance.gamma,
        objective_value=result.objective_value,
        mip_gap=result.mip_gap,
        wall_time=result.wall_time,
        accurate_battery=built.registry.accurate_battery,
        **values,
    )


def _write(refs, values, x: np.ndarray, name: str) -> None:
    if isinstance(refs, VarRef):
        x[refs.index] = float(values)
        return
    if len(refs) != len(values):
        raise IncompleteSolution(f"{name}: expected {len(refs)} entries, got {len(values)}")
    for ref, value in zip(refs, values):
        _write(ref, value, x, name)


def solution_point(built: BuiltModel, solution: Solution) -> np.ndarray:
    """Primal vector of `built.model` holding the values stored in `solution`."""
    x = np.full(built.model.n_vars, np.nan)
    for name, refs in _handles(built).items():
        _write(refs, getattr(solution, name), x, name)
    if np.isnan(x).any():
        missing = built.model.variables[int(np.argmax(np.isnan(x)))].name
        raise IncompleteSolution(f"solution does not assign {missing}")
    return x


def solve_instance(
    instance: Instance,
    options: Optional[SolveOptions] = None,
    backend: Optional[Backend] = None,
    accurate_battery: bool = True,
    tighten: bool = True,
) -> SolvedModel:
    options = options or SolveOptions()
    backend = backend or get_backend(options.backend)
    built = build_model(instance, accurate_battery=accurate_battery, tighten=tighten)
    result = backend.solve(built.model, options)
    solution = extract_solution(built, result) if result.has_primal else None
    return SolvedModel(**vars(built), result=result, solution=solution)
