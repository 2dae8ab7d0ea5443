import pandas as pd
import pytest

from conftest import make_instance, single_hour, zero_solution
from hybid.errors import EmptyReport, InstanceValidationError, LengthMismatch
from hybid.evalreport import (
    ablation_summary,
    check_dominance,
    check_gammas,
    export_ablation,
    export_report,
    gamma_sweep,
    imbalance_prices,
    mean_realized_imbalance,
    read_sweep_csv,
    realized_imbalance_revenue,
    sweep_row,
    technology_ablation,
)
from hybid.backends import HighsBackend
from hybid.main.robust import worst_case_directions
from hybid.model_ir import SolveStatus
from hybid.main.solution import solve_instance
from hybid.oracle import worst_case_profit
from hybid.schemas import Direction, DirectionSequence, SweepReport, SweepRow

SURPLUS, SHORTAGE = Direction.SYSTEM_SURPLUS, Direction.SYSTEM_SHORTAGE


def sequence(*directions):
    return DirectionSequence(directions=directions)


def test_imbalance_prices(micro):
    prices = imbalance_prices(sequence(SURPLUS, SHORTAGE), micro)
    assert prices.tolist() == pytest.approx([30.0, 140.0])
    with pytest.raises(LengthMismatch):
        imbalance_prices(sequence(SURPLUS), micro)


def test_realized_surplus_in_surplus_system():
    solution = zero_solution(d=[[1.0]])
    assert realized_imbalance_revenue(solution, sequence(SURPLUS), single_hour()) == (
        pytest.approx(60.0)
    )


def test_realized_shortage_in_short_system():
    solution = zero_solution(d=[[-1.0]])
    assert realized_imbalance_revenue(solution, sequence(SHORTAGE), single_hour()) == (
        pytest.approx(-140.0)
    )


def test_realized_zero_deviation():
    assert realized_imbalance_revenue(zero_solution(), sequence(SHORTAGE), single_hour()) == 0.0


def test_realized_per_scenario_sequences():
    instance = make_instance(
        time={"n_periods": 1, "dt": 1.0},
        prices={"da": [100.0]},
        pv={"forecast": [1.0], "scenarios": [[1.0], [1.0]], "probabilities": [0.25, 0.75]},
        imbalance={"kappa": 0.4, "gamma": 0},
    )
    solution = zero_solution(n_scenarios=2, d=[[1.0, 1.0]])
    revenue = realized_imbalance_revenue(
        solution, [sequence(SURPLUS), sequence(SHORTAGE)], instance
    )
    assert revenue == pytest.approx(0.25 * 60.0 + 0.75 * 140.0)
    with pytest.raises(LengthMismatch):
        realized_imbalance_revenue(
            solution, [sequence(SURPLUS), sequence(SURPLUS), sequence(SURPLUS)], instance
        )


def test_mean_realized_imbalance():
    solution = zero_solution(d=[[1.0]])
    sequences = [sequence(SURPLUS), sequence(SHORTAGE)]
    assert mean_realized_imbalance(solution, sequences, single_hour()) == pytest.approx(100.0)
    assert mean_realized_imbalance(solution, [], single_hour()) is None


def test_check_gammas(micro):
    assert check_gammas(micro, [0, 2]) == [0, 2]
    with pytest.raises(InstanceValidationError) as exc:
        check_gammas(micro, [3])
    assert exc.value.field_path == "imbalance.gamma"


def test_worst_case_directions_reproduce_expected_profit(micro):
    solved = solve_instance(micro.with_gamma(1))
    directions = worst_case_directions(solved.solution, solved.instance)
    breakdown = worst_case_profit(solved.solution, solved.instance)
    realized = realized_imbalance_revenue(solved.solution, directions, solved.instance)
    assert realized == pytest.approx(breakdown.imbalance_revenue_expected, rel=1e-6, abs=1e-6)


def test_gamma_sweep(micro):
    directions = [sequence(SURPLUS, SHORTAGE), sequence(SHORTAGE, SHORTAGE)]
    report = gamma_sweep(micro, [2, 0, 1], directions)
    assert [row.gamma for row in report.rows] == [0, 1, 2]
    assert all(row.ok for row in report.rows)
    assert report.is_monotone()
    for row in report.rows:
        parts = row.da_revenue + row.hydrogen_expected + row.imbalance_expected
        assert row.total_expected == pytest.approx(parts, rel=1e-6)
        assert row.real_total == pytest.approx(
            row.da_revenue + row.hydrogen_expected + row.real_imbalance
        )
        assert row.imbalance_min <= row.imbalance_max
    assert report.best_real_gamma() in (0, 1, 2)


def test_repeated_gamma_gives_identical_rows(micro):
    report = gamma_sweep(micro, [2, 2])
    first, second = report.rows
    assert first.model_dump() == second.model_dump()


def test_kappa_zero_sweep_is_flat():
    report = gamma_sweep(make_instance(imbalance={"kappa": 0.0, "gamma": 0}), [0, 1, 2])
    totals = list(report.totals().values())
    assert totals == pytest.approx([totals[0]] * 3, rel=1e-6)
    assert report.plateau_gamma() == 0


def test_failed_budget_becomes_marked_row():
    instance = single_hour(
        pv=12.0,
        grid={"connection_limit": 10.0},
        battery={"capacity": 0.0, "rated_power": 0.0, "initial_soe": 0.0},
        electrolyzer={"rated_power": 0.0},
    )
    row = sweep_row(instance, 0)
    assert row.status == "Infeasible"
    assert not row.ok


class StoppedBackend(HighsBackend):
    """Reports every solve as stopped at the time limit with a 1% gap."""

    def solve(self, model, options):
        result = super().solve(model, options)
        return result.model_copy(update={"status": SolveStatus.TIME_LIMIT, "mip_gap": 0.01})


def test_time_limit_incumbent_becomes_row(micro):
    row = sweep_row(micro, 1, backend=StoppedBackend())
    assert row.status == "TimeLimit"
    assert row.mip_gap == pytest.approx(0.01)
    assert row.ok and not row.optimal
    assert row.total_expected == pytest.approx(sweep_row(micro, 1).total_expected, rel=1e-6)


def test_monotonicity_allows_mip_gap():
    rising = [
        SweepRow(gamma=0, total_expected=100.0),
        SweepRow(gamma=1, status="TimeLimit", total_expected=100.5, mip_gap=0.01),
    ]
    assert SweepReport(rows=rising).is_monotone()
    rising[1] = SweepRow(gamma=1, status="TimeLimit", total_expected=103.0, mip_gap=0.01)
    assert not SweepReport(rows=rising).is_monotone()


def test_technology_ablation_dominance(micro):
    reports = technology_ablation(micro, [0, 2])
    assert set(reports) == {"PV", "PV+EL", "PV+BAT", "PV+EL+BAT"}
    assert check_dominance(reports) == []
    summary = {row.configuration: row for row in ablation_summary(reports)}
    full = summary["PV+EL+BAT"]
    assert (full.gamma_min, full.gamma_max) == (0, 2)
    assert full.profit_at_gamma_min >= full.profit_at_gamma_max - 1e-6


def test_check_dominance_reports_violations():
    small = SweepReport(rows=[SweepRow(gamma=0, total_expected=10.0)], configuration="PV")
    large = SweepReport(rows=[SweepRow(gamma=0, total_expected=9.0)], configuration="PV+EL")
    violations = check_dominance({"PV": small, "PV+EL": large})
    assert len(violations) == 1
    assert violations[0].startswith("gamma=0: PV+EL")


def test_plateau_gamma():
    rows = [
        SweepRow(gamma=g, total_expected=total)
        for g, total in enumerate([100.0, 90.0, 80.0, 80.0, 80.0])
    ]
    report = SweepReport(rows=rows)
    assert report.plateau_gamma() == 2
    assert report.is_monotone()
    rising = [SweepRow(gamma=0, total_expected=80.0), SweepRow(gamma=1, total_expected=81.0)]
    assert not SweepReport(rows=rising).is_monotone()


def test_export_report(micro, tmp_path):
    directions = [sequence(SURPLUS, SHORTAGE)]
    report = gamma_sweep(micro, [0, 1], directions)
    written = export_report(report, tmp_path / "out")
    assert sorted(path.name for path in written) == [
        "deviations.csv",
        "electrolyzer.csv",
        "positions.csv",
        "soe.csv",
        "sweep.csv",
    ]
    sweep = pd.read_csv(tmp_path / "out" / "sweep.csv")
    assert sweep["gamma"].tolist() == [0, 1]
    deviations = pd.read_csv(tmp_path / "out" / "deviations.csv")
    assert list(deviations.columns) == ["gamma", "scenario", "hour", "d"]
    assert len(deviations) == 2 * 1 * 2

    again = read_sweep_csv(tmp_path / "out" / "sweep.csv")
    assert [row.gamma for row in again.rows] == [0, 1]
    assert again.rows[1].total_expected == pytest.approx(report.rows[1].total_expected, abs=1e-6)


def test_export_empty_report(tmp_path):
    with pytest.raises(EmptyReport):
        export_report(SweepReport(), tmp_path)
    with pytest.raises(EmptyReport):
        export_ablation({}, tmp_path)


def test_export_ablation(micro, tmp_path):
    reports = technology_ablation(micro, [0])
    export_ablation(reports, tmp_path)
    table = pd.read_csv(tmp_path / "ablation.csv")
    assert sorted(table["configuration"]) == ["PV", "PV+BAT", "PV+EL", "PV+EL+BAT"]
    assert (tmp_path / "PV_EL_BAT" / "sweep.csv").exists()
    assert (tmp_path / "ablation_summary.csv").exists()
