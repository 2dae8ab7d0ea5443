"""Independent recomputation of solver results.

`recompute_profit` evaluates the original (undualized) objective for a fixed
dispatch and fixed direction flags. `enumerate_tiny` brute-forces micro instances
on a power grid to bound the MILP optimum from below.
"""

import itertools
import logging
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from hybid.errors import IncompleteSolution, TooLarge
from hybid.main.facility import charge_cap_slopes, greedy_fill, segment_widths
from hybid.main.robust import hydrogen_margin, worst_case_flags
from hybid.schemas import Instance, ProfitBreakdown, Solution

logger = logging.getLogger(__name__)

NODE_CAP = 10_000_000
MAX_PERIODS = 3
MAX_SCENARIOS = 2
_TOL = 1e-9


def _shaped(solution: Solution, name: str, shape: Tuple[int, ...]) -> np.ndarray:
    try:
        values = solution.array(name)
    except ValueError as e:
        raise IncompleteSolution(f"{name} is ragged") from e
    if values.shape != shape:
        raise IncompleteSolution(f"{name} has shape {values.shape}, expected {shape}")
    return values


def recompute_profit(solution: Solution, instance: Instance, b) -> ProfitBreakdown:
    """Expected profit of `solution` when the system is unfavourable where `b` is 1."""
    T, S = instance.n_periods, instance.n_scenarios
    mp = _shaped(solution, "mp", (T,))
    d = _shaped(solution, "d", (T, S))
    h2 = _shaped(solution, "hydrogen", (T, S))
    b = np.asarray(b, dtype=float)
    if b.shape != (T, S):
        raise IncompleteSolution(f"direction flags have shape {b.shape}, expected {(T, S)}")
    price = instance.da_prices()[:, None]
    pi = instance.probabilities()
    kappa = instance.imbalance.kappa

    da_revenue = float(instance.da_prices() @ mp)
    hydrogen = float(pi @ (instance.prices.hydrogen_price * h2).sum(axis=0))
    water = float(
        pi @ (instance.prices.water_price * instance.electrolyzer.water_per_kg * h2).sum(axis=0)
    )
    imbalance_terms = price * d + price * kappa * np.abs(d) * (1 - 2 * b)
    imbalance = float(pi @ imbalance_terms.sum(axis=0))
    return ProfitBreakdown(
        da_revenue=da_revenue,
        hydrogen_revenue_expected=hydrogen,
        water_cost_expected=water,
        imbalance_revenue_expected=imbalance,
        total=da_revenue + hydrogen - water + imbalance,
    )


def worst_case_profit(solution: Solution, instance: Instance) -> ProfitBreakdown:
    return recompute_profit(solution, instance, worst_case_flags(solution, instance))


def objective_consistency(solution: Solution, instance: Instance) -> float:
    """Relative difference between the solver objective and the recomputed one."""
    total = worst_case_profit(solution, instance).total
    return abs(total - solution.objective_value) / max(1.0, abs(solution.objective_value))


_REPLAY_FIRST = ("mp", "ch_da", "dis_da", "el_da", "x_e")
_REPLAY_SECOND = (
    "d",
    "r",
    "res",
    "ch_up",
    "ch_down",
    "dis_up",
    "dis_down",
    "el",
    "soe",
    "hydrogen",
)


def replay_violations(
    solution: Solution, instance: Instance, accurate_battery: bool = True, tol: float = 1e-6
) -> List[str]:
    """Replay the dispatch of `solution` through the plant physics.

    Works from effective powers only (day-ahead plus balancing), so it does not
    rely on any row of the model. Returns one message per violated rule.
    """
    T, S = instance.n_periods, instance.n_scenarios
    dt = instance.dt
    bat, el = instance.battery, instance.electrolyzer
    first = {name: _shaped(solution, name, (T,)) for name in _REPLAY_FIRST}
    second = {name: _shaped(solution, name, (T, S)) for name in _REPLAY_SECOND}
    ch_da, dis_da, el_da = (first[k][:, None] for k in ("ch_da", "dis_da", "el_da"))
    x_e = np.round(first["x_e"])[:, None]
    c = ch_da + second["ch_up"] - second["ch_down"]
    dis = dis_da + second["dis_up"] - second["dis_down"]
    e = second["el"]
    res = second["res"]
    grid = instance.grid.connection_limit * dt
    scale = max(1.0, bat.capacity, bat.rated_power, el.rated_power, grid)
    eps = tol * scale
    problems: List[str] = []

    def check(mask: np.ndarray, what: str) -> None:
        if np.any(mask):
            where = np.argwhere(np.atleast_1d(mask))[0].tolist()
            problems.append(f"{what} at {where}")

    forecast = np.asarray(instance.pv.forecast, dtype=float)
    mp = dt * (forecast + first["dis_da"] - first["ch_da"] - first["el_da"])
    check(np.abs(first["mp"] - mp) > eps, "day-ahead position does not match the schedule")
    check(np.abs(first["mp"]) > grid + eps, "day-ahead position exceeds the grid")
    r = dt * (res + dis - c - e)
    check(np.abs(second["r"] - r) > eps, "realized injection does not match the dispatch")
    check(np.abs(r) > grid + eps, "realized injection exceeds the grid")
    d = r - first["mp"][:, None]
    check(np.abs(second["d"] - d) > eps, "deviation is not realized minus bid")
    pv = instance.pv_realisations()
    check((res < -eps) | (res > pv + eps), "PV use outside availability")
    for name, power in (("charge", c), ("discharge", dis)):
        check((power < -eps) | (power > bat.rated_power + eps), f"{name} outside [0, rated]")
    group_a = second["ch_up"] + second["dis_down"]
    group_b = second["ch_down"] + second["dis_up"]
    check((group_a > eps) & (group_b > eps), "battery balances in both directions")

    on = x_e > 0.5
    check(~on & (np.abs(e) > eps), "electrolyzer draws power while off")
    low = el.min_stable_fraction * el.rated_power
    unstable = (e < low - eps) | (e > el.rated_power + eps)
    check(on & unstable, "electrolyzer outside its stable range")
    h2 = (el.alpha * e + el.beta * el.rated_power * x_e) * dt / el.power_per_kg
    h2_eps = tol * max(1.0, float(np.abs(h2).max(initial=0.0)))
    check(np.abs(second["hydrogen"] - h2) > h2_eps, "hydrogen does not match power")

    slopes = charge_cap_slopes(bat)
    widths = segment_widths(bat)
    f1_cap = bat.charge_curve_F[0] * bat.capacity
    soe = np.full(S, bat.initial_soe)
    for t in range(T):
        if accurate_battery:
            if t == 0:
                loss = np.full(S, float(slopes @ greedy_fill(bat.initial_soe, widths)))
            else:
                loss = _loosest_charge_loss(soe, slopes, widths)
            check(dt * bat.eta * c[t] > f1_cap - loss + eps, f"charge above curve in hour {t}")
        soe = soe + dt * bat.eta * c[t] - dt * dis[t] / bat.eta
        check(np.abs(second["soe"][t] - soe) > eps, f"soe off its recursion in hour {t}")
        check((soe < -eps) | (soe > bat.capacity + eps), f"soe outside capacity in hour {t}")
    return problems


def envelope_constant(instance: Instance) -> float:
    """Per-MW slack between the grid optimum and the continuous optimum.

    Rounding a continuous plan onto the grid moves each deviation by at most
    four steps settled at (1 + kappa) |price|, and the electrolyzer by one step.
    """
    price = np.abs(instance.da_prices())
    kappa = instance.imbalance.kappa
    el = instance.electrolyzer
    hydrogen = max(hydrogen_margin(instance), 0.0) * el.alpha / el.power_per_kg
    return float(instance.dt * (4 * (1 + kappa) * price + hydrogen).sum())


class TinyOptimum(NamedTuple):
    best_profit: Optional[float]
    best_schedule: Optional[dict]
    nodes: int

    @property
    def feasible(self) -> bool:
        return self.best_profit is not None


def _levels(limit: float, step: float) -> np.ndarray:
    return np.arange(0.0, limit + step / 2, step) if limit > 0 else np.zeros(1)


def _check_grid(value: float, step: float, what: str) -> None:
    ratio = value / step
    if abs(ratio - round(ratio)) > 1e-9:
        raise ValueError(f"grid step {step} does not divide {what} {value}")


def _first_stage_options(instance: Instance, step: float) -> List[Tuple[float, float, float, int]]:
    """(ch_da, dis_da, el_da, x_e) combinations for one hour."""
    bat = _levels(instance.battery.rated_power, step)
    battery = [(c, 0.0) for c in bat[1:]] + [(0.0, 0.0)] + [(0.0, p) for p in bat[1:]]
    el_da = _levels(instance.electrolyzer.rated_power, step)
    on_states = (0, 1) if instance.electrolyzer.rated_power > 0 else (0,)
    return [(c, p, e, x) for (c, p) in battery for e in el_da for x in on_states]


def _hour_options(
    instance: Instance, step: float, t: int, s: int, first: Tuple[float, float, float, int]
) -> dict:
    """Second-stage choices for one (t, s) that satisfy every hour-local row."""
    ch_da, dis_da, el_da, x_e = first
    bat, el = instance.battery, instance.electrolyzer
    dt = instance.dt
    grid = instance.grid.connection_limit * dt
    available = instance.pv.scenarios[s][t]

    power = _levels(bat.rated_power, step)
    if x_e:
        el_levels = _levels(el.rated_power, step)
        el_levels = el_levels[el_levels >= el.min_stable_fraction * el.rated_power - _TOL]
    else:
        el_levels = np.zeros(1)
    res_levels = np.unique(np.append(np.arange(0.0, available, step), available))

    c, dis, e, res = (a.ravel() for a in np.meshgrid(power, power, el_levels, res_levels, indexing="ij"))
    ch_up = np.maximum(c - ch_da, 0.0)
    ch_down = np.maximum(ch_da - c, 0.0)
    dis_up = np.maximum(dis - dis_da, 0.0)
    dis_down = np.maximum(dis_da - dis, 0.0)
    group_a = ch_up + dis_down
    group_b = ch_down + dis_up
    r = (res + dis - c - e) * dt
    ok = ~((group_a > _TOL) & (group_b > _TOL)) & (np.abs(r) <= grid + _TOL)
    mp = (instance.pv.forecast[t] + dis_da - ch_da - el_da) * dt
    hydrogen = (el.alpha * e + el.beta * el.rated_power * x_e) * dt / el.power_per_kg
    return {
        "c": c[ok],
        "dis": dis[ok],
        "el": e[ok],
        "res": res[ok],
        "d": r[ok] - mp,
        "hydrogen": hydrogen[ok],
    }


def _loosest_charge_loss(soe: np.ndarray, slopes: np.ndarray, widths: np.ndarray) -> np.ndarray:
    """Smallest slope-weighted segment content over all decompositions of `soe`."""
    order = np.argsort(slopes, kind="stable")
    loss = np.zeros_like(soe)
    before = 0.0
    for j in order:
        filled = np.clip(soe - before, 0.0, widths[j])
        loss += slopes[j] * filled
        before += widths[j]
    return loss


def _best_recourse(
    instance: Instance,
    hours: Sequence[dict],
    s: int,
    accurate_battery: bool,
) -> Tuple[Optional[float], Optional[dict], int]:
    T = instance.n_periods
    dt = instance.dt
    bat = instance.battery
    price = instance.da_prices()
    kappa = instance.imbalance.kappa
    gamma = instance.imbalance.gamma
    margin = hydrogen_margin(instance)
    slopes = charge_cap_slopes(bat)
    widths = segment_widths(bat)
    f1_cap = bat.charge_curve_F[0] * bat.capacity

    sizes = [len(h["c"]) for h in hours]
    if 0 in sizes:
        return None, None, 0
    idx = [a.ravel() for a in np.indices(sizes)]
    n = len(idx[0])
    feasible = np.ones(n, dtype=bool)
    soe = np.full(n, bat.initial_soe)
    d = np.empty((n, T))
    value = np.zeros(n)
    for t in range(T):
        h = {k: v[idx[t]] for k, v in hours[t].items()}
        if accurate_battery:
            if t == 0:
                loss = float(slopes @ greedy_fill(bat.initial_soe, widths))
            else:
                loss = _loosest_charge_loss(soe, slopes, widths)
            feasible &= dt * bat.eta * h["c"] <= f1_cap - loss + _TOL
        soe = soe + dt * bat.eta * h["c"] - dt * h["dis"] / bat.eta
        feasible &= (soe >= -_TOL) & (soe <= bat.capacity + _TOL)
        d[:, t] = h["d"]
        value += price[t] * h["d"] + margin * h["hydrogen"]

    terms = price[None, :] * kappa * np.abs(d)
    top = -np.sort(-terms, axis=1)[:, : int(gamma)]
    value -= 2 * np.clip(top, 0.0, None).sum(axis=1) - terms.sum(axis=1)

    if not feasible.any():
        return None, None, n
    value[~feasible] = -np.inf
    k = int(np.argmax(value))
    chosen = {
        key: [float(hours[t][key][idx[t][k]]) for t in range(T)]
        for key in ("c", "dis", "el", "res", "d")
    }
    chosen["scenario"] = s
    return float(value[k]), chosen, n


def enumerate_tiny(
    instance: Instance,
    grid_step: float = 0.5,
    node_cap: int = NODE_CAP,
    accurate_battery: bool = True,
) -> TinyOptimum:
    """Best grid point over all first- and second-stage decisions.

    Effective battery and electrolyzer powers and curtailment are gridded per
    (t, s); the balancing split and binaries follow from them and the day-ahead
    schedule. Scenarios are optimized independently once the first stage is fixed.
    """
    T, S = instance.n_periods, instance.n_scenarios
    if T > MAX_PERIODS or S > MAX_SCENARIOS:
        raise TooLarge(f"enumeration supports T <= {MAX_PERIODS} and S <= {MAX_SCENARIOS}")
    _check_grid(instance.battery.rated_power, grid_step, "battery rated power")
    _check_grid(instance.electrolyzer.rated_power, grid_step, "electrolyzer rated power")

    per_hour = _first_stage_options(instance, grid_step)
    n_bat = len(_levels(instance.battery.rated_power, grid_step))
    n_el = len(_levels(instance.electrolyzer.rated_power, grid_step))
    n_res = [
        [int(np.ceil(instance.pv.scenarios[s][t] / grid_step)) + 1 for t in range(T)]
        for s in range(S)
    ]
    second = sum(int(np.prod([n_bat * n_bat * n_el * r for r in row])) for row in n_res)
    estimate = len(per_hour) ** T * second
    if estimate > node_cap:
        raise TooLarge(f"enumeration would visit about {estimate:.3g} nodes (cap {node_cap})")

    price = instance.da_prices()
    pi = instance.probabilities()
    grid = instance.grid.connection_limit * instance.dt
    best_profit, best_schedule, nodes = None, None, 0
    for schedule in itertools.product(per_hour, repeat=T):
        mp = np.array(
            [(instance.pv.forecast[t] + dis - ch - el) * instance.dt for t, (ch, dis, el, _) in enumerate(schedule)]
        )
        if (np.abs(mp) > grid + _TOL).any():
            continue
        total = float(price @ mp)
        recourse = []
        for s in range(S):
            hours = [_hour_options(instance, grid_step, t, s, schedule[t]) for t in range(T)]
            value, chosen, visited = _best_recourse(instance, hours, s, accurate_battery)
            nodes += visited
            if value is None:
                break
            total += pi[s] * value
            recourse.append(chosen)
        else:
            if best_profit is None or total > best_profit + _TOL:
                best_profit = total
                best_schedule = {
                    "mp": mp.tolist(),
                    "ch_da": [x[0] for x in schedule],
                    "dis_da": [x[1] for x in schedule],
                    "el_da": [x[2] for x in schedule],
                    "x_e": [x[3] for x in schedule],
                    "recourse": recourse,
                }
    logger.info(f"Enumerated {nodes} nodes, best profit {best_profit}")
    return TinyOptimum(best_profit, best_schedule, nodes)
