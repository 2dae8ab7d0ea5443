"""Robust treatment of the system deviation direction.

The inner problem picks, per scenario, at most `gamma` hours in which the system
deviates against the facility. It is dualized into the objective together with a
KKT encoding of `y = |d|`; `inner_worst_case` solves the same problem in closed
form and is what every solved model is checked against.
"""

import logging
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Sequence

import numpy as np
from pydantic import BaseModel

from hybid.errors import DualityGap
from hybid.main.facility import VariableRegistry, deviation_bounds
from hybid.model_ir import INF, ModelIR, Sense, VarRef
from hybid.schemas import Direction, DirectionSequence, Instance, Solution

logger = logging.getLogger(__name__)


@dataclass
class RobustVars:
    omega: List[VarRef]
    z: List[List[VarRef]] = field(default_factory=list)
    y: List[List[VarRef]] = field(default_factory=list)
    mu1: List[List[VarRef]] = field(default_factory=list)
    mu2: List[List[VarRef]] = field(default_factory=list)
    x_d1: List[List[VarRef]] = field(default_factory=list)
    x_d2: List[List[VarRef]] = field(default_factory=list)
    m_dev: float = 1.0
    m_mu: float = 1.0
    tightened: bool = False


def big_m(instance: Instance) -> tuple[float, float]:
    # |d| and y are both within 2 * grid * dt
    return 4 * instance.grid.connection_limit * instance.dt, 1.0


def hydrogen_margin(instance: Instance) -> float:
    """Net revenue per kg: hydrogen price minus the water it consumes."""
    return (
        instance.prices.hydrogen_price
        - instance.prices.water_price * instance.electrolyzer.water_per_kg
    )


def _robust_bounds(instance: Instance):
    """Upper bounds of y, z and omega that keep every optimum.

    y = |d| is bounded by the deviation range, z by 2 * price * kappa * y and
    omega by the largest such term of its scenario.
    """
    upper, lower = deviation_bounds(instance)
    y_max = np.maximum(upper, lower)
    z_max = np.maximum(2 * instance.da_prices()[:, None] * instance.imbalance.kappa * y_max, 0.0)
    omega_max = z_max.max(axis=0)
    return upper, lower, y_max, z_max, omega_max


def apply_robust_objective(
    model: ModelIR, reg: VariableRegistry, instance: Instance, tighten: bool = True
) -> RobustVars:
    """Add the dualized robust term and the linearized y = |d|.

    With `tighten`, the complementarity constants follow the deviation range of
    each (t, s), y, z and omega get finite bounds, and x_d1 + x_d2 <= 1 makes the
    two direction binaries complementary. Together with mu1 + mu2 = 1 this
    describes the convex hull of {(d, y): y = |d|} for every (t, s).
    """
    T, S = instance.n_periods, instance.n_scenarios
    price = instance.da_prices()
    pi = instance.probabilities()
    kappa = instance.imbalance.kappa
    gamma = instance.imbalance.gamma
    margin = hydrogen_margin(instance)
    m_dev, m_mu = big_m(instance)

    if tighten:
        upper, lower, y_max, z_max, omega_max = _robust_bounds(instance)
        m_pos, m_neg = 2 * lower, 2 * upper
    else:
        y_max = z_max = np.full((T, S), INF)
        omega_max = np.full(S, INF)
        m_pos = m_neg = np.full((T, S), m_dev)

    rv = RobustVars(
        omega=[model.add_var(f"omega[{s + 1}]", 0.0, float(omega_max[s])) for s in range(S)],
        m_dev=m_dev,
        m_mu=m_mu,
        tightened=tighten,
    )
    upper_bounds = {"z": z_max, "y": y_max}
    for name in ("z", "y", "mu1", "mu2", "x_d1", "x_d2"):
        grid = []
        for t in range(T):
            row = []
            for s in range(S):
                var_name = f"{name}[{t + 1},{s + 1}]"
                if name.startswith("x_d"):
                    row.append(model.add_binary(var_name))
                elif name in upper_bounds:
                    row.append(model.add_var(var_name, 0.0, float(upper_bounds[name][t, s])))
                else:
                    row.append(model.add_var(var_name, 0.0, INF))
            grid.append(row)
        setattr(rv, name, grid)

    terms = [(reg.mp[t], price[t]) for t in range(T)]
    for s in range(S):
        terms.append((rv.omega[s], -pi[s] * gamma))
        for t in range(T):
            terms += [
                (reg.d[t][s], pi[s] * price[t]),
                (reg.hydrogen[t][s], pi[s] * margin),
                (rv.z[t][s], -pi[s]),
                (rv.y[t][s], pi[s] * price[t] * kappa),
            ]
    model.set_objective(terms)

    for t in range(T):
        for s in range(S):
            i = f"{t + 1},{s + 1}"
            d, y = reg.d[t][s], rv.y[t][s]
            mu1, mu2 = rv.mu1[t][s], rv.mu2[t][s]
            x1, x2 = rv.x_d1[t][s], rv.x_d2[t][s]
            m1, m2 = float(m_pos[t, s]), float(m_neg[t, s])
            model.add_constraint(
                f"dual_feas[{i}]",
                [(rv.omega[s], 1.0), (rv.z[t][s], 1.0), (y, -2 * price[t] * kappa)],
                Sense.GE,
                0.0,
            )
            model.add_constraint(f"abs_pos[{i}]", [(y, 1.0), (d, -1.0)], Sense.GE, 0.0)
            model.add_constraint(f"abs_neg[{i}]", [(y, 1.0), (d, 1.0)], Sense.GE, 0.0)
            model.add_constraint(f"mu_sum[{i}]", [(mu1, 1.0), (mu2, 1.0)], Sense.EQ, 1.0)
            model.add_constraint(
                f"comp_dev1[{i}]", [(d, 1.0), (y, -1.0), (x1, -m1)], Sense.GE, -m1
            )
            model.add_constraint(f"comp_mu1[{i}]", [(mu1, 1.0), (x1, -m_mu)], Sense.LE, 0.0)
            model.add_constraint(
                f"comp_dev2[{i}]", [(d, -1.0), (y, -1.0), (x2, -m2)], Sense.GE, -m2
            )
            model.add_constraint(f"comp_mu2[{i}]", [(mu2, 1.0), (x2, -m_mu)], Sense.LE, 0.0)
            if tighten:
                model.add_constraint(f"dir_link[{i}]", [(x1, 1.0), (x2, 1.0)], Sense.LE, 1.0)

    logger.debug(
        f"Robust block added (gamma={gamma}, tighten={tighten}, M_dev={m_dev}): {model.summary()}"
    )
    return rv


class WorstCase(NamedTuple):
    value: float
    b: np.ndarray


def inner_worst_case(
    deviations: Sequence,
    da_price: Sequence[float],
    kappa: float,
    gamma: int,
    scenario: int = 0,
) -> WorstCase:
    """max_b sum_t price_t * kappa * |d_t| * (2 b_t - 1) subject to sum_t b_t <= gamma.

    `deviations` is either one series or a (T, S) array read at `scenario`.
    Hours are picked by decreasing term, lowest hour first on ties; terms that
    are not positive are never picked.
    """
    d = np.asarray(deviations, dtype=float)
    if d.ndim == 2:
        d = d[:, scenario]
    terms = np.asarray(da_price, dtype=float) * kappa * np.abs(d)
    hours = np.arange(len(terms))
    order = np.lexsort((hours, -terms))
    chosen = [t for t in order[: max(int(gamma), 0)] if terms[t] > 0]
    b = np.zeros(len(terms), dtype=int)
    b[chosen] = 1
    value = 2 * terms[chosen].sum() - terms.sum()
    return WorstCase(float(value), b)


def inner_problem_model(
    deviations: Sequence[float], da_price: Sequence[float], kappa: float, gamma: int
) -> ModelIR:
    """The inner problem of one scenario as an LP with b relaxed to [0, 1]."""
    terms = np.asarray(da_price, dtype=float) * kappa * np.abs(np.asarray(deviations, dtype=float))
    model = ModelIR(name="inner")
    b = [model.add_var(f"b[{t + 1}]", 0.0, 1.0) for t in range(len(terms))]
    model.add_constraint("budget", [(ref, 1.0) for ref in b], Sense.LE, gamma)
    model.set_objective(
        [(ref, 2 * c) for ref, c in zip(b, terms)], constant=-float(terms.sum())
    )
    return model


def worst_case_flags(solution: Solution, instance: Instance) -> np.ndarray:
    """(T, S) array of b chosen by the inner problem at the solution's deviations."""
    d = solution.array("d")
    price = instance.da_prices()
    kappa = instance.imbalance.kappa
    return np.column_stack(
        [
            inner_worst_case(d, price, kappa, solution.gamma, s).b
            for s in range(d.shape[1])
        ]
    )


def worst_case_directions(solution: Solution, instance: Instance) -> List[DirectionSequence]:
    """Per scenario, the direction sequence realising the worst case.

    An unfavourable hour is one where the system deviates the same way as the
    facility.
    """
    d = solution.array("d")
    flags = worst_case_flags(solution, instance)
    sequences = []
    for s in range(d.shape[1]):
        directions = tuple(
            Direction.SYSTEM_SURPLUS if (d[t, s] >= 0) == bool(flags[t, s]) else Direction.SYSTEM_SHORTAGE
            for t in range(d.shape[0])
        )
        sequences.append(DirectionSequence(directions=directions))
    return sequences


class DualityIssue(BaseModel):
    scenario: int
    period: Optional[int] = None
    magnitude: float


class DualityReport(BaseModel):
    issues: List[DualityIssue] = []

    @property
    def ok(self) -> bool:
        return not self.issues

    def raise_for_gaps(self) -> None:
        if self.issues:
            worst = max(self.issues, key=lambda issue: issue.magnitude)
            raise DualityGap(worst.scenario, worst.magnitude, worst.period)


def _rel(gap: float, scale: float) -> float:
    return gap / max(1.0, abs(scale))


def verify_duality(solution: Solution, instance: Instance, tol: float = 1e-4) -> DualityReport:
    """Compare the robust term carried by `solution` with the analytic worst case."""
    price = instance.da_prices()
    pi = instance.probabilities()
    kappa = instance.imbalance.kappa
    gamma = solution.gamma
    d, y, z = solution.array("d"), solution.array("y"), solution.array("z")
    omega = solution.array("omega")
    issues = []
    for s in range(d.shape[1]):
        for t in range(d.shape[0]):
            gap = _rel(abs(y[t, s] - abs(d[t, s])), d[t, s])
            if gap > tol:
                issues.append(DualityIssue(scenario=s, period=t, magnitude=gap))
        if pi[s] == 0:
            # the solver is free to leave a zero-weight scenario's duals anywhere
            continue
        embedded = float(np.sum(price * kappa * y[:, s] - z[:, s]) - gamma * omega[s])
        expected = -inner_worst_case(d, price, kappa, gamma, s).value
        gap = _rel(abs(embedded - expected), expected)
        if gap > tol:
            issues.append(DualityIssue(scenario=s, magnitude=gap))
    if issues:
        logger.warning(f"Duality check found {len(issues)} issue(s) at gamma={gamma}")
    return DualityReport(issues=issues)
