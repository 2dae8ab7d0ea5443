"""Gamma sweeps, ex-post settlement, technology ablations and CSV reports."""

import logging
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel

from hybid.backends import Backend
from hybid.errors import EmptyReport, HybidError, InstanceValidationError, LengthMismatch
from hybid.instance import TECHNOLOGY_CONFIGURATIONS, with_technologies
from hybid.main.robust import verify_duality, worst_case_flags
from hybid.main.solution import solve_instance
from hybid.oracle import recompute_profit
from hybid.schemas import (
    SWEEP_COLUMNS,
    Direction,
    DirectionSequence,
    Instance,
    Solution,
    SolveOptions,
    SweepReport,
    SweepRow,
    as_sequences,
)

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.6f"
DOMINANCE_CHAIN = (
    ("PV", "PV+EL"),
    ("PV", "PV+BAT"),
    ("PV+EL", "PV+EL+BAT"),
    ("PV+BAT", "PV+EL+BAT"),
)


def imbalance_prices(directions: DirectionSequence, instance: Instance) -> np.ndarray:
    if len(directions) != instance.n_periods:
        raise LengthMismatch(
            f"expected {instance.n_periods} directions, got {len(directions)}"
        )
    kappa = instance.imbalance.kappa
    factor = np.array(
        [1 - kappa if d is Direction.SYSTEM_SURPLUS else 1 + kappa for d in directions.directions]
    )
    return instance.da_prices() * factor


def realized_imbalance_revenue(
    solution: Solution,
    directions: DirectionSequence | Sequence[DirectionSequence],
    instance: Instance,
) -> float:
    """Imbalance settlement of the fixed dispatch under realized directions.

    A single sequence applies to every scenario; otherwise one sequence per
    scenario is expected.
    """
    sequences = as_sequences(directions)
    d = solution.array("d")
    n_scenarios = d.shape[1]
    if len(sequences) == 1:
        sequences = sequences * n_scenarios
    if len(sequences) != n_scenarios:
        raise LengthMismatch(f"expected {n_scenarios} direction sequences, got {len(sequences)}")
    prices = np.column_stack([imbalance_prices(seq, instance) for seq in sequences])
    return float(instance.probabilities() @ (prices * d).sum(axis=0))


def mean_realized_imbalance(
    solution: Solution, sequences: Sequence[DirectionSequence], instance: Instance
) -> Optional[float]:
    if not sequences:
        return None
    return float(np.mean([realized_imbalance_revenue(solution, seq, instance) for seq in sequences]))


def check_gammas(instance: Instance, gammas: Iterable[int]) -> List[int]:
    gammas = list(gammas)
    for g in gammas:
        if not 0 <= g <= instance.n_periods:
            raise InstanceValidationError(
                "imbalance.gamma", f"{g} is outside [0, {instance.n_periods}]"
            )
    return gammas


def sweep_row(
    instance: Instance,
    gamma: int,
    directions: Sequence[DirectionSequence] = (),
    options: Optional[SolveOptions] = None,
    backend: Optional[Backend] = None,
    duality_tol: float = 1e-4,
) -> SweepRow:
    """Solve at one budget and decompose its profit. Failures become marked rows.

    A solve stopped at the time limit still yields a row from its incumbent,
    carrying the remaining MIP gap.
    """
    try:
        solved = solve_instance(instance.with_gamma(gamma), options, backend)
        status = solved.result.status.value
        if solved.solution is None:
            logger.warning(f"gamma={gamma}: solver returned {status} without a solution")
            return SweepRow(gamma=gamma, status=status)
        solution = solved.solution
        duality = verify_duality(solution, solved.instance, tol=duality_tol)
        if solved.optimal:
            duality.raise_for_gaps()
        else:
            logger.warning(
                f"gamma={gamma}: {status} incumbent, mip_gap={solution.mip_gap:.2e}, "
                f"duality ok={duality.ok}"
            )
    except HybidError as e:
        logger.error(f"gamma={gamma} failed: {e}")
        return SweepRow(gamma=gamma, status="Error", error=f"{type(e).__name__}: {e}")

    flags = worst_case_flags(solution, solved.instance)
    breakdown = recompute_profit(solution, solved.instance, flags)
    hydrogen = breakdown.hydrogen_revenue_expected - breakdown.water_cost_expected
    per_scenario = _scenario_imbalance(solution, solved.instance, flags)
    real_imbalance = mean_realized_imbalance(solution, directions, solved.instance)
    return SweepRow(
        gamma=gamma,
        status=solution.status,
        total_expected=breakdown.total,
        da_revenue=breakdown.da_revenue,
        hydrogen_expected=hydrogen,
        imbalance_expected=breakdown.imbalance_revenue_expected,
        real_imbalance=real_imbalance,
        real_total=None
        if real_imbalance is None
        else breakdown.da_revenue + hydrogen + real_imbalance,
        imbalance_min=float(per_scenario.min()),
        imbalance_max=float(per_scenario.max()),
        mip_gap=solution.mip_gap,
        solution=solution,
    )


def _scenario_imbalance(solution: Solution, instance: Instance, flags: np.ndarray) -> np.ndarray:
    price = instance.da_prices()[:, None]
    d = solution.array("d")
    terms = price * d + price * instance.imbalance.kappa * np.abs(d) * (1 - 2 * flags)
    return terms.sum(axis=0)


def gamma_sweep(
    instance: Instance,
    gammas: Iterable[int],
    directions: Sequence[DirectionSequence] = (),
    options: Optional[SolveOptions] = None,
    backend: Optional[Backend] = None,
    configuration: str = "PV+EL+BAT",
) -> SweepReport:
    """One solve per budget, in order. `sweep_graph` runs the same rows concurrently."""
    rows = [
        sweep_row(instance, g, directions, options, backend)
        for g in check_gammas(instance, gammas)
    ]
    return SweepReport(rows=rows, configuration=configuration)


def technology_ablation(
    instance: Instance,
    gammas: Iterable[int],
    directions: Sequence[DirectionSequence] = (),
    options: Optional[SolveOptions] = None,
    backend: Optional[Backend] = None,
) -> Dict[str, SweepReport]:
    gammas = check_gammas(instance, gammas)
    reports = {}
    for name, (battery, electrolyzer) in TECHNOLOGY_CONFIGURATIONS.items():
        logger.info(f"Ablation: sweeping configuration {name}")
        reports[name] = gamma_sweep(
            with_technologies(instance, battery, electrolyzer),
            gammas,
            directions,
            options,
            backend,
            configuration=name,
        )
    return reports


class AblationSummary(BaseModel):
    configuration: str
    gamma_min: int
    gamma_max: int
    profit_at_gamma_min: float
    profit_at_gamma_max: float
    relative_drop: Optional[float] = None


def ablation_summary(reports: Dict[str, SweepReport]) -> List[AblationSummary]:
    summary = []
    for name, report in reports.items():
        rows = report.successful()
        if not rows:
            continue
        low, high = rows[0], rows[-1]
        drop = None
        if abs(high.total_expected) > 0:
            drop = (low.total_expected - high.total_expected) / abs(high.total_expected)
        summary.append(
            AblationSummary(
                configuration=name,
                gamma_min=low.gamma,
                gamma_max=high.gamma,
                profit_at_gamma_min=low.total_expected,
                profit_at_gamma_max=high.total_expected,
                relative_drop=drop,
            )
        )
    return summary


def check_dominance(reports: Dict[str, SweepReport], tol: float = 1e-6) -> List[str]:
    """Budgets at which a larger configuration earns less than a smaller one.

    A shortfall within the MIP gap of either row is not a violation.
    """
    violations = []
    for small, large in DOMINANCE_CHAIN:
        if small not in reports or large not in reports:
            continue
        small_rows = {row.gamma: row for row in reports[small].successful()}
        large_rows = {row.gamma: row for row in reports[large].successful()}
        for gamma in sorted(set(small_rows) & set(large_rows)):
            a, b = small_rows[gamma], large_rows[gamma]
            lo, hi = a.total_expected, b.total_expected
            slack = max(tol, a.mip_gap or 0.0, b.mip_gap or 0.0)
            if hi < lo - slack * max(1.0, abs(lo)):
                violations.append(f"gamma={gamma}: {large} ({hi:.6f}) < {small} ({lo:.6f})")
    return violations


def _series_frame(report: SweepReport, fields: Sequence[str], per_scenario: bool) -> pd.DataFrame:
    records = []
    for row in report.rows:
        solution = row.solution
        if solution is None:
            continue
        arrays = {name: solution.array(name) for name in fields}
        T = len(solution.mp)
        if per_scenario:
            for s in range(len(solution.d[0])):
                for t in range(T):
                    record = {"gamma": row.gamma, "scenario": s + 1, "hour": t + 1}
                    for name, values in arrays.items():
                        record[name] = values[t, s] if values.ndim == 2 else values[t]
                    records.append(record)
        else:
            for t in range(T):
                record = {"gamma": row.gamma, "hour": t + 1}
                record.update({name: values[t] for name, values in arrays.items()})
                records.append(record)
    columns = ["gamma"] + (["scenario"] if per_scenario else []) + ["hour"] + list(fields)
    return pd.DataFrame.from_records(records, columns=columns)


def sweep_frame(report: SweepReport) -> pd.DataFrame:
    return pd.DataFrame.from_records(
        [row.model_dump(include=set(SWEEP_COLUMNS)) for row in report.rows],
        columns=list(SWEEP_COLUMNS),
    )


def _write(frame: pd.DataFrame, path: Path) -> Path:
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, encoding="utf-8")
    return path


def export_report(report: SweepReport, path: str | Path) -> List[Path]:
    """Write the sweep table and the per-hour series behind it into directory `path`."""
    if not report.rows:
        raise EmptyReport("cannot export a report without rows")
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    written = [
        _write(sweep_frame(report), out / "sweep.csv"),
        _write(
            _series_frame(report, ("mp", "ch_da", "dis_da", "el_da"), per_scenario=False),
            out / "positions.csv",
        ),
        _write(_series_frame(report, ("soe",), per_scenario=True), out / "soe.csv"),
        _write(
            _series_frame(report, ("el", "hydrogen", "x_e"), per_scenario=True),
            out / "electrolyzer.csv",
        ),
        _write(_series_frame(report, ("d",), per_scenario=True), out / "deviations.csv"),
    ]
    logger.info(f"Wrote {len(written)} report files to {out}")
    return written


def export_ablation(reports: Dict[str, SweepReport], path: str | Path) -> List[Path]:
    if not reports:
        raise EmptyReport("cannot export an empty ablation")
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, report in reports.items():
        written += export_report(report, out / name.replace("+", "_"))
    frames = [sweep_frame(report).assign(configuration=name) for name, report in reports.items()]
    table = pd.concat(frames, ignore_index=True)
    table = table[["configuration"] + list(SWEEP_COLUMNS)]
    written.append(_write(table, out / "ablation.csv"))
    summary = pd.DataFrame.from_records([s.model_dump() for s in ablation_summary(reports)])
    written.append(_write(summary, out / "ablation_summary.csv"))
    return written


def read_sweep_csv(path: str | Path, configuration: str = "PV+EL+BAT") -> SweepReport:
    frame = pd.read_csv(path, encoding="utf-8")
    frame = frame.astype(object).where(frame.notna(), None)
    rows = [SweepRow.model_validate(record) for record in frame.to_dict(orient="records")]
    return SweepReport(rows=rows, configuration=configuration)
