"""Physical and market constraints of the PV-battery-electrolyzer facility.

All quantities per hour are written with the period length `dt`, so positions and
deviations are energies (MWh) and device set-points are powers (MW).
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Sequence, Tuple

import numpy as np

from hybid.errors import LengthMismatch, PowerOutOfRange, SegmentOverflow
from hybid.model_ir import INF, ModelIR, Sense, VarRef
from hybid.schemas import (
    FIRST_STAGE_FIELDS,
    SECOND_STAGE_FIELDS,
    BatteryParams,
    ElectrolyzerParams,
    Instance,
)

logger = logging.getLogger(__name__)

_TOL = 1e-9


@dataclass
class VariableRegistry:
    """Handles of every facility decision variable.

    First-stage handles are lists over `t`, second-stage ones nested `[t][s]`
    and segments `[t][s][j]`. `soe_seg` is empty for the simple battery model.
    """

    n_periods: int
    n_scenarios: int
    n_segments: int
    accurate_battery: bool = True
    first: Dict[str, List[VarRef]] = field(default_factory=dict)
    second: Dict[str, List[List[VarRef]]] = field(default_factory=dict)
    soe_seg: List[List[List[VarRef]]] = field(default_factory=list)

    def __getattr__(self, name: str):
        # only reached for names that are not regular attributes
        for table in ("first", "second"):
            values = self.__dict__.get(table, {})
            if name in values:
                return values[name]
        raise AttributeError(name)

    def handles(self) -> List[VarRef]:
        refs = [ref for series in self.first.values() for ref in series]
        refs += [ref for rows in self.second.values() for row in rows for ref in row]
        refs += [ref for rows in self.soe_seg for row in rows for ref in row]
        return refs


class ConstraintCounts(NamedTuple):
    """Rows and columns the facility and robust blocks add for a given size."""

    rows: int
    columns: int

    @staticmethod
    def facility_rows(n_periods: int, n_scenarios: int, accurate_battery: bool = True) -> int:
        per_scenario = 18 if accurate_battery else 16
        return per_scenario * n_periods * n_scenarios + 3 * n_periods

    @staticmethod
    def robust_rows(n_periods: int, n_scenarios: int, tighten: bool = True) -> int:
        # the tightened model adds one direction link per (t, s)
        per_scenario = 9 if tighten else 8
        return per_scenario * n_periods * n_scenarios

    @staticmethod
    def facility_columns(
        n_periods: int, n_scenarios: int, n_segments: int, accurate_battery: bool = True
    ) -> int:
        per_scenario = len(SECOND_STAGE_FIELDS) + (n_segments if accurate_battery else 0)
        return len(FIRST_STAGE_FIELDS) * n_periods + per_scenario * n_periods * n_scenarios

    @staticmethod
    def robust_columns(n_periods: int, n_scenarios: int) -> int:
        return 6 * n_periods * n_scenarios + n_scenarios

    @classmethod
    def expected(
        cls,
        n_periods: int,
        n_scenarios: int,
        n_segments: int,
        accurate_battery: bool = True,
        robust: bool = True,
        tighten: bool = True,
    ) -> "ConstraintCounts":
        rows = cls.facility_rows(n_periods, n_scenarios, accurate_battery)
        columns = cls.facility_columns(n_periods, n_scenarios, n_segments, accurate_battery)
        if robust:
            rows += cls.robust_rows(n_periods, n_scenarios, tighten)
            columns += cls.robust_columns(n_periods, n_scenarios)
        return cls(rows, columns)


def segment_widths(params: BatteryParams) -> np.ndarray:
    return np.diff(np.asarray(params.charge_curve_R, dtype=float)) * params.capacity


def charge_cap_slopes(params: BatteryParams) -> np.ndarray:
    """Charge-ability lost per MWh stored in each segment."""
    R = np.asarray(params.charge_curve_R, dtype=float)
    F = np.asarray(params.charge_curve_F, dtype=float)
    return (F[:-1] - F[1:]) / (R[1:] - R[:-1])


def greedy_fill(energy: float, widths: Sequence[float]) -> np.ndarray:
    """Split `energy` over segments, filling them in index order."""
    widths = np.asarray(widths, dtype=float)
    if energy > widths.sum() + _TOL:
        raise SegmentOverflow(f"{energy} MWh does not fit into {widths.sum()} MWh of segments")
    filled = np.zeros_like(widths)
    remaining = max(energy, 0.0)
    for j, width in enumerate(widths):
        filled[j] = min(width, remaining)
        remaining -= filled[j]
    return filled


def battery_max_charge_power(
    prev_soe_segments: Sequence[float], params: BatteryParams, dt: float
) -> float:
    """Largest charging power the curve admits given last hour's segment fill.

    Not capped at the rated power.
    """
    segments = np.asarray(prev_soe_segments, dtype=float)
    widths = segment_widths(params)
    if len(segments) != len(widths):
        raise LengthMismatch(f"expected {len(widths)} segments, got {len(segments)}")
    over = segments - widths
    if (over > _TOL).any():
        j = int(np.argmax(over))
        raise SegmentOverflow(f"segment {j + 1} holds {segments[j]} MWh, width {widths[j]} MWh")
    energy = params.charge_curve_F[0] * params.capacity - charge_cap_slopes(params) @ segments
    return max(float(energy), 0.0) / (dt * params.eta)


def hydrogen_output(
    el_power: float, on: bool, params: ElectrolyzerParams, dt: float = 1.0
) -> float:
    """Hydrogen (kg) produced over one period of `dt` hours at `el_power` MW."""
    rated = params.rated_power
    if not on:
        if abs(el_power) > _TOL:
            raise PowerOutOfRange(f"electrolyzer is off but draws {el_power} MW")
        return 0.0
    lower = params.min_stable_fraction * rated
    if el_power < lower - _TOL or el_power > rated + _TOL:
        raise PowerOutOfRange(f"{el_power} MW outside [{lower}, {rated}] MW")
    return (params.alpha * el_power + params.beta * rated) * dt / params.power_per_kg


def deviation_bounds(instance: Instance) -> Tuple[np.ndarray, np.ndarray]:
    """Largest surplus and largest shortage (both >= 0, MWh) per (t, s).

    d = dt * (res - forecast + dis_up - dis_down - ch_up + ch_down - el_up + el_down),
    each balancing pair moves at most 2 * P_bat, the electrolyzer at most P_el,
    and |d| never exceeds twice the grid connection.
    """
    dt = instance.dt
    reach = 2 * instance.battery.rated_power + instance.electrolyzer.rated_power
    forecast = np.asarray(instance.pv.forecast, dtype=float)[:, None]
    pv = instance.pv_realisations()
    cap = 2 * instance.grid.connection_limit * dt
    upper = np.clip(dt * (pv - forecast + reach), 0.0, cap)
    lower = np.clip(dt * (forecast + reach), 0.0, cap) * np.ones_like(pv)
    return upper, lower


def _index(*idx: int) -> str:
    return ",".join(str(i + 1) for i in idx)


def _add_variables(model: ModelIR, instance: Instance, accurate_battery: bool) -> VariableRegistry:
    T, S = instance.n_periods, instance.n_scenarios
    dt = instance.dt
    bat, el = instance.battery, instance.electrolyzer
    grid = instance.grid.connection_limit * dt
    pv = instance.pv_realisations()
    dev_upper, dev_lower = deviation_bounds(instance)
    reg = VariableRegistry(
        n_periods=T,
        n_scenarios=S,
        n_segments=bat.n_segments,
        accurate_battery=accurate_battery,
    )
    first_bounds = {
        "mp": (-grid, grid),
        "ch_da": (0.0, bat.rated_power),
        "dis_da": (0.0, bat.rated_power),
        "el_da": (0.0, el.rated_power),
    }
    for name in FIRST_STAGE_FIELDS:
        series = []
        for t in range(T):
            var_name = f"{name}[{_index(t)}]"
            if name in first_bounds:
                series.append(model.add_var(var_name, *first_bounds[name]))
            else:
                series.append(model.add_binary(var_name))
        reg.first[name] = series

    second_bounds = {
        "r": (-grid, grid),
        "ch_up": (0.0, bat.rated_power),
        "ch_down": (0.0, bat.rated_power),
        "dis_up": (0.0, bat.rated_power),
        "dis_down": (0.0, bat.rated_power),
        "el_up": (0.0, el.rated_power),
        "el_down": (0.0, el.rated_power),
        "soe": (0.0, bat.capacity),
        "hydrogen": (0.0, INF),
        "el": (0.0, INF),
        "el_net": (0.0, INF),
    }
    for name in SECOND_STAGE_FIELDS:
        rows = []
        for t in range(T):
            row = []
            for s in range(S):
                var_name = f"{name}[{_index(t, s)}]"
                if name == "res":
                    row.append(model.add_var(var_name, 0.0, float(pv[t, s])))
                elif name == "d":
                    bounds = (-float(dev_lower[t, s]), float(dev_upper[t, s]))
                    row.append(model.add_var(var_name, *bounds))
                elif name == "x_b_bal":
                    row.append(model.add_binary(var_name))
                else:
                    row.append(model.add_var(var_name, *second_bounds[name]))
            rows.append(row)
        reg.second[name] = rows

    if accurate_battery:
        widths = segment_widths(bat)
        reg.soe_seg = [
            [
                [
                    model.add_var(f"soe_seg[{_index(t, s, j)}]", 0.0, float(widths[j]))
                    for j in range(bat.n_segments)
                ]
                for s in range(S)
            ]
            for t in range(T)
        ]
    return reg


def build_facility(
    instance: Instance, accurate_battery: bool = True
) -> Tuple[ModelIR, VariableRegistry]:
    """Model with every facility variable and constraint, objective not yet set."""
    model = ModelIR(name="hybid")
    reg = _add_variables(model, instance, accurate_battery)
    T, S, dt = instance.n_periods, instance.n_scenarios, instance.dt
    bat, el = instance.battery, instance.electrolyzer
    p_bat, p_el = bat.rated_power, el.rated_power
    eta = bat.eta
    forecast = instance.pv.forecast
    slopes = charge_cap_slopes(bat)
    initial_segments = greedy_fill(bat.initial_soe, segment_widths(bat))
    f1_cap = bat.charge_curve_F[0] * bat.capacity

    mp, ch_da, dis_da, el_da = reg.mp, reg.ch_da, reg.dis_da, reg.el_da
    x_e, x_b_da = reg.x_e, reg.x_b_da
    for t in range(T):
        i = _index(t)
        model.add_constraint(
            f"mkt[{i}]",
            [(mp[t], 1.0), (dis_da[t], -dt), (ch_da[t], dt), (el_da[t], dt)],
            Sense.EQ,
            forecast[t] * dt,
        )
        model.add_constraint(
            f"dis_da_excl[{i}]", [(dis_da[t], 1.0), (x_b_da[t], p_bat)], Sense.LE, p_bat
        )
        model.add_constraint(
            f"ch_da_excl[{i}]", [(ch_da[t], 1.0), (x_b_da[t], -p_bat)], Sense.LE, 0.0
        )

    for t in range(T):
        for s in range(S):
            i = _index(t, s)
            d, r, res = reg.d[t][s], reg.r[t][s], reg.res[t][s]
            ch_up, ch_down = reg.ch_up[t][s], reg.ch_down[t][s]
            dis_up, dis_down = reg.dis_up[t][s], reg.dis_down[t][s]
            el_up, el_down = reg.el_up[t][s], reg.el_down[t][s]
            soe, x_b = reg.soe[t][s], reg.x_b_bal[t][s]
            h2, el_power, el_net = reg.hydrogen[t][s], reg.el[t][s], reg.el_net[t][s]

            model.add_constraint(
                f"dev[{i}]", [(d, 1.0), (r, -1.0), (mp[t], 1.0)], Sense.EQ, 0.0
            )
            model.add_constraint(
                f"real[{i}]",
                [
                    (r, 1.0),
                    (res, -dt),
                    (dis_da[t], -dt),
                    (ch_da[t], dt),
                    (el_da[t], dt),
                    (dis_up, -dt),
                    (dis_down, dt),
                    (ch_up, dt),
                    (ch_down, -dt),
                    (el_up, dt),
                    (el_down, -dt),
                ],
                Sense.EQ,
                0.0,
            )

            soe_terms = [
                (soe, 1.0),
                (ch_da[t], -dt * eta),
                (ch_up, -dt * eta),
                (ch_down, dt * eta),
                (dis_da[t], dt / eta),
                (dis_up, dt / eta),
                (dis_down, -dt / eta),
            ]
            if t == 0:
                model.add_constraint(f"soe_bal[{i}]", soe_terms, Sense.EQ, bat.initial_soe)
            else:
                soe_terms.append((reg.soe[t - 1][s], -1.0))
                model.add_constraint(f"soe_bal[{i}]", soe_terms, Sense.EQ, 0.0)

            if accurate_battery:
                segments = reg.soe_seg[t][s]
                model.add_constraint(
                    f"soe_sum[{i}]",
                    [(soe, 1.0)] + [(seg, -1.0) for seg in segments],
                    Sense.EQ,
                    0.0,
                )
                charge_terms = [
                    (ch_da[t], dt * eta),
                    (ch_up, dt * eta),
                    (ch_down, -dt * eta),
                ]
                if t == 0:
                    rhs = f1_cap - float(slopes @ initial_segments)
                else:
                    charge_terms += [
                        (prev, float(slope))
                        for prev, slope in zip(reg.soe_seg[t - 1][s], slopes)
                    ]
                    rhs = f1_cap
                model.add_constraint(f"ch_cap[{i}]", charge_terms, Sense.LE, rhs)

            model.add_constraint(
                f"bal_excl_up[{i}]",
                [(ch_up, 1.0), (dis_down, 1.0), (x_b, 2 * p_bat)],
                Sense.LE,
                2 * p_bat,
            )
            model.add_constraint(
                f"bal_excl_down[{i}]",
                [(ch_down, 1.0), (dis_up, 1.0), (x_b, -2 * p_bat)],
                Sense.LE,
                0.0,
            )
            model.add_constraint(
                f"ch_up_cap[{i}]", [(ch_up, 1.0), (ch_da[t], 1.0)], Sense.LE, p_bat
            )
            model.add_constraint(
                f"ch_down_cap[{i}]", [(ch_down, 1.0), (ch_da[t], -1.0)], Sense.LE, 0.0
            )
            model.add_constraint(
                f"dis_up_cap[{i}]", [(dis_up, 1.0), (dis_da[t], 1.0)], Sense.LE, p_bat
            )
            model.add_constraint(
                f"dis_down_cap[{i}]", [(dis_down, 1.0), (dis_da[t], -1.0)], Sense.LE, 0.0
            )

            model.add_constraint(
                f"el_comp[{i}]",
                [(el_power, 1.0), (el_da[t], -1.0), (el_up, -1.0), (el_down, 1.0)],
                Sense.EQ,
                0.0,
            )
            model.add_constraint(
                f"el_min[{i}]",
                [(el_power, 1.0), (x_e[t], -el.min_stable_fraction * p_el)],
                Sense.GE,
                0.0,
            )
            model.add_constraint(
                f"el_max[{i}]", [(el_power, 1.0), (x_e[t], -p_el)], Sense.LE, 0.0
            )
            model.add_constraint(
                f"h2[{i}]", [(el_net, dt), (h2, -el.power_per_kg)], Sense.EQ, 0.0
            )
            model.add_constraint(
                f"el_net[{i}]",
                [(el_net, 1.0), (el_power, -el.alpha), (x_e[t], -el.beta * p_el)],
                Sense.EQ,
                0.0,
            )
            model.add_constraint(
                f"el_up_cap[{i}]", [(el_da[t], 1.0), (el_up, 1.0)], Sense.LE, p_el
            )
            model.add_constraint(
                f"el_down_cap[{i}]", [(el_da[t], 1.0), (el_down, -1.0)], Sense.GE, 0.0
            )

    logger.debug(f"Built facility block: {model.summary()}")
    return model, reg
