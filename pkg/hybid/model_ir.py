"""Solver-agnostic linear model representation.

Variables are addressed by `VarRef` handles whose names encode the symbol and
its (one-based) indices, e.g. `soe_p[3,2,1]`.
"""

import math
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field

from hybid.errors import MissingVariable

INF = math.inf
FEASIBILITY_TOL = 1e-6


class Integrality(str, Enum):
    CONTINUOUS = "continuous"
    BINARY = "binary"


class Sense(str, Enum):
    LE = "<="
    EQ = "="
    GE = ">="


class VarRef(NamedTuple):
    index: int
    name: str


Terms = Iterable[Tuple[VarRef, float]]


class Variable(BaseModel):
    name: str
    lower: float = 0.0
    upper: float = INF
    integrality: Integrality = Integrality.CONTINUOUS

    @property
    def is_binary(self) -> bool:
        return self.integrality is Integrality.BINARY


class Constraint(BaseModel):
    name: str
    terms: Dict[int, float]
    sense: Sense
    rhs: float


class Objective(BaseModel):
    sense: str = "maximize"
    terms: Dict[int, float] = Field(default_factory=dict)
    constant: float = 0.0


class Violation(NamedTuple):
    name: str
    magnitude: float


class ModelIR:
    """A maximization MILP built up variable by variable and row by row."""

    def __init__(self, name: str = "hybid"):
        self.name = name
        self.variables: List[Variable] = []
        self.constraints: List[Constraint] = []
        self.objective = Objective()
        self._by_name: Dict[str, VarRef] = {}
        self._row_names: set[str] = set()

    def add_var(
        self,
        name: str,
        lower: float = 0.0,
        upper: float = INF,
        integrality: Integrality = Integrality.CONTINUOUS,
    ) -> VarRef:
        if name in self._by_name:
            raise ValueError(f"variable {name} already registered")
        if lower > upper:
            raise ValueError(f"variable {name}: lower bound {lower} exceeds upper bound {upper}")
        if integrality is Integrality.BINARY and (lower < 0 or upper > 1):
            raise ValueError(f"binary variable {name} must have bounds within [0, 1]")
        ref = VarRef(len(self.variables), name)
        self.variables.append(
            Variable(name=name, lower=lower, upper=upper, integrality=integrality)
        )
        self._by_name[name] = ref
        return ref

    def add_binary(self, name: str) -> VarRef:
        return self.add_var(name, 0.0, 1.0, Integrality.BINARY)

    def _collect(self, terms: Terms) -> Dict[int, float]:
        merged: Dict[int, float] = {}
        for ref, coef in terms:
            if ref.index >= len(self.variables) or self.variables[ref.index].name != ref.name:
                raise MissingVariable(f"{ref.name} is not registered in model {self.name}")
            merged[ref.index] = merged.get(ref.index, 0.0) + float(coef)
        return merged

    def add_constraint(self, name: str, terms: Terms, sense: Sense, rhs: float) -> int:
        if name in self._row_names:
            raise ValueError(f"constraint {name} already present")
        self.constraints.append(
            Constraint(name=name, terms=self._collect(terms), sense=sense, rhs=float(rhs))
        )
        self._row_names.add(name)
        return len(self.constraints) - 1

    def set_objective(self, terms: Terms, constant: float = 0.0) -> None:
        self.objective = Objective(terms=self._collect(terms), constant=float(constant))

    def var(self, name: str) -> VarRef:
        try:
            return self._by_name[name]
        except KeyError:
            raise MissingVariable(name) from None

    @property
    def n_vars(self) -> int:
        return len(self.variables)

    @property
    def n_constraints(self) -> int:
        return len(self.constraints)

    @property
    def n_binaries(self) -> int:
        return sum(1 for v in self.variables if v.is_binary)

    def summary(self) -> str:
        return (
            f"{self.name}: {self.n_vars} variables ({self.n_binaries} binary), "
            f"{self.n_constraints} constraints"
        )

    def point_array(self, point: Mapping[VarRef, float]) -> np.ndarray:
        values = np.empty(self.n_vars)
        for i, var in enumerate(self.variables):
            ref = VarRef(i, var.name)
            if ref not in point:
                raise MissingVariable(var.name)
            values[i] = point[ref]
        return values

    def evaluate_objective(self, point: Mapping[VarRef, float] | np.ndarray) -> float:
        x = point if isinstance(point, np.ndarray) else self.point_array(point)
        return self.objective.constant + sum(c * x[i] for i, c in self.objective.terms.items())


class SolveStatus(str, Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    TIME_LIMIT = "TimeLimit"
    NUMERIC_FAILURE = "NumericFailure"


class SolveResult(BaseModel):
    status: SolveStatus
    objective_value: Optional[float] = None
    primal: Optional[List[float]] = Field(default=None, repr=False)
    var_names: List[str] = Field(default_factory=list, repr=False)
    mip_gap: float = 0.0
    wall_time: float = 0.0
    message: str = ""

    @property
    def has_primal(self) -> bool:
        return self.primal is not None

    @property
    def primal_values(self) -> Dict[VarRef, float]:
        if self.primal is None:
            return {}
        return {VarRef(i, n): v for i, (n, v) in enumerate(zip(self.var_names, self.primal))}

    def value(self, ref: VarRef) -> float:
        if self.primal is None:
            raise MissingVariable(ref.name)
        return self.primal[ref.index]


def evaluate_constraints(
    model: ModelIR,
    point: Mapping[VarRef, float] | np.ndarray,
    tol: float = FEASIBILITY_TOL,
) -> List[Violation]:
    """Every row, bound and integrality requirement violated by more than `tol`."""
    x = point if isinstance(point, np.ndarray) else model.point_array(point)
    if len(x) != model.n_vars:
        raise MissingVariable(f"point has {len(x)} values for {model.n_vars} variables")
    violations = []
    for row in model.constraints:
        lhs = sum(c * x[i] for i, c in row.terms.items())
        if row.sense is Sense.LE:
            excess = lhs - row.rhs
        elif row.sense is Sense.GE:
            excess = row.rhs - lhs
        else:
            excess = abs(lhs - row.rhs)
        if excess > tol:
            violations.append(Violation(row.name, excess))
    for i, var in enumerate(model.variables):
        excess = max(var.lower - x[i], x[i] - var.upper, 0.0)
        if excess > tol:
            violations.append(Violation(f"bound:{var.name}", excess))
        if var.is_binary:
            gap = abs(x[i] - round(x[i]))
            if gap > tol:
                violations.append(Violation(f"integrality:{var.name}", gap))
    return violations


# -- LP export ------------------------------------------------------------------------------

_TERMS_PER_LINE = 6


def format_number(value: float) -> str:
    """Fixed-point rendering with 12 significant digits."""
    if value == 0:
        return "0"
    return np.format_float_positional(
        value, precision=12, unique=False, fractional=False, trim="-"
    )


def _column(i: int) -> str:
    return f"x{i}"


def _expression(terms: Mapping[int, float]) -> List[str]:
    if not terms:
        return ["0 x0"]
    parts = []
    for k, (i, coef) in enumerate(sorted(terms.items())):
        sign = "-" if coef < 0 else "+"
        body = f"{format_number(abs(coef))} {_column(i)}"
        parts.append(body if k == 0 and sign == "+" else f"{sign} {body}")
    lines = []
    for start in range(0, len(parts), _TERMS_PER_LINE):
        lines.append(" ".join(parts[start : start + _TERMS_PER_LINE]))
    return lines


def format_lp(model: ModelIR, minimize: bool = False) -> str:
    """CPLEX-LP text of `model`.

    Columns are written as `x<k>` and rows as `c<k>`; the original names follow
    in comments. The constant objective term is only recorded as a comment.
    With `minimize` the objective is negated, for solvers that mishandle
    `Maximize`.
    """
    out = [f"\\ {model.name}: {model.n_vars} columns, {model.n_constraints} rows"]
    out.append(f"\\ objective constant: {format_number(model.objective.constant)}")
    for i, var in enumerate(model.variables):
        out.append(f"\\ {_column(i)} = {var.name}")
    out.append("Minimize" if minimize else "Maximize")
    terms = model.objective.terms
    if minimize:
        terms = {i: -c for i, c in terms.items()}
    obj_lines = _expression(terms)
    out.append(f" obj: {obj_lines[0]}")
    out.extend(f"   {line}" for line in obj_lines[1:])
    out.append("Subject To")
    for k, row in enumerate(model.constraints):
        lines = _expression(row.terms)
        out.append(f"\\ c{k} = {row.name}")
        out.append(f" c{k}: {lines[0]}")
        out.extend(f"   {line}" for line in lines[1:])
        out[-1] += f" {row.sense.value} {format_number(row.rhs)}"
    out.append("Bounds")
    for i, var in enumerate(model.variables):
        if var.is_binary:
            continue
        col = _column(i)
        if var.lower == -INF and var.upper == INF:
            out.append(f" {col} free")
        elif var.lower == var.upper:
            out.append(f" {col} = {format_number(var.lower)}")
        else:
            lo = "-inf" if var.lower == -INF else format_number(var.lower)
            hi = "+inf" if var.upper == INF else format_number(var.upper)
            out.append(f" {lo} <= {col} <= {hi}")
    binaries = [_column(i) for i, var in enumerate(model.variables) if var.is_binary]
    if binaries:
        out.append("Binaries")
        for start in range(0, len(binaries), 10):
            out.append(" " + " ".join(binaries[start : start + 10]))
    out.append("End")
    return "\n".join(out) + "\n"


def write_lp(model: ModelIR, path: str | Path, minimize: bool = False) -> Path:
    path = Path(path)
    path.write_text(format_lp(model, minimize=minimize))
    return path


def column_index(name: str) -> Optional[int]:
    if name.startswith("x") and name[1:].isdigit():
        return int(name[1:])
    return None


def violations_by_prefix(violations: Sequence[Violation]) -> Dict[str, int]:
    """Count violations per symbol, e.g. {"soe_bal": 3}."""
    counts: Dict[str, int] = {}
    for v in violations:
        key = v.name.split("[", 1)[0]
        counts[key] = counts.get(key, 0) + 1
    return counts
