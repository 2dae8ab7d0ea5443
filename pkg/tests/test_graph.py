import pytest

from conftest import make_instance, random_micro, single_hour
from hybid.main.config import get_config, make_backend, solve_options
from hybid.main.graph import graph, route_after_build
from hybid.backends import CbcBackend, HighsBackend
from hybid.model_ir import SolveStatus
from hybid.sweep_graph import ablation_graph, sweep_graph


def settings(**overrides):
    return {"configurable": {**get_config(), **overrides}}


def test_config_defaults():
    config = get_config()
    assert config["backend"] == "highs"
    assert config["duality_tol"] == 1e-4
    options = solve_options()
    assert options.mip_gap_tol == 1e-6 and options.time_limit == 600
    assert isinstance(make_backend(), HighsBackend)


def test_configurable_replaces_yaml():
    config = settings(backend="cbc", cbc_path="/opt/cbc", time_limit=5)
    assert solve_options(config).time_limit == 5
    backend = make_backend(config)
    assert isinstance(backend, CbcBackend) and backend.executable == "/opt/cbc"
    # without a backend key the YAML file is used
    assert get_config({"configurable": {"time_limit": 5}})["time_limit"] == 600


def test_route_after_build():
    assert route_after_build({}) == "solve_model"
    assert route_after_build({"solution": object()}) == "verify_solution"


async def test_pipeline_solves_and_verifies(micro):
    state = await graph.ainvoke({"instance": micro, "gamma": 2})
    assert state["result"].status is SolveStatus.OPTIMAL
    assert state["instance"].imbalance.gamma == 2
    verification = state["verification"]
    assert verification.ok
    assert verification.violations == []
    assert verification.enumeration_best is None


async def test_pipeline_with_enumeration():
    state = await graph.ainvoke({"instance": random_micro(3), "enumerate": True})
    verification = state["verification"]
    assert verification.enumeration_within is True
    assert verification.enumeration_slack > 0
    assert verification.ok


async def test_pipeline_verifies_stored_solution(micro):
    solved = await graph.ainvoke({"instance": micro, "gamma": 1})
    state = await graph.ainvoke({"instance": micro, "solution": solved["solution"]})
    assert "result" not in state
    assert state["instance"].imbalance.gamma == 1
    assert state["verification"].ok


async def test_pipeline_verifies_simple_battery_solution(micro):
    solved = await graph.ainvoke({"instance": micro, "gamma": 1, "accurate_battery": False})
    assert not solved["solution"].accurate_battery
    state = await graph.ainvoke({"instance": micro, "solution": solved["solution"]})
    assert not state["built"].registry.accurate_battery
    assert state["verification"].ok


async def test_pipeline_loads_instance_file(tmp_path):
    from hybid.instance import dump_instance

    path = dump_instance(make_instance(), tmp_path / "micro.json")
    state = await graph.ainvoke({"instance_path": str(path), "gamma": 0}, settings())
    assert state["verification"].ok


async def test_pipeline_stops_on_infeasible():
    instance = single_hour(
        pv=12.0,
        grid={"connection_limit": 10.0},
        battery={"capacity": 0.0, "rated_power": 0.0, "initial_soe": 0.0},
        electrolyzer={"rated_power": 0.0},
    )
    state = await graph.ainvoke({"instance": instance})
    assert state["result"].status is SolveStatus.INFEASIBLE
    assert state.get("solution") is None
    assert "verification" not in state


async def test_sweep_graph(micro):
    state = await sweep_graph.ainvoke({"instance": micro, "gammas": [2, 0, 1]}, settings())
    report = state["report"]
    assert [row.gamma for row in report.rows] == [0, 1, 2]
    assert report.is_monotone()
    assert report.configuration == "PV+EL+BAT"


async def test_sweep_graph_without_budgets(micro):
    state = await sweep_graph.ainvoke({"instance": micro, "gammas": []})
    assert state["report"].rows == []


async def test_ablation_graph(micro):
    state = await ablation_graph.ainvoke({"instance": micro, "gammas": [0, 2]})
    reports = state["reports"]
    assert set(reports) == {"PV", "PV+EL", "PV+BAT", "PV+EL+BAT"}
    assert reports["PV+BAT"].configuration == "PV+BAT"
    totals = {name: report.totals() for name, report in reports.items()}
    for gamma in (0, 2):
        assert totals["PV"][gamma] <= totals["PV+EL+BAT"][gamma] + 1e-6


@pytest.mark.slow
async def test_reference_sweep(reference):
    gammas = list(range(reference.n_periods + 1))
    settings = {**get_config(), "time_limit": 15.0}
    state = await sweep_graph.ainvoke(
        {"instance": reference, "gammas": gammas}, {"configurable": settings}
    )
    report = state["report"]
    assert all(row.ok for row in report.rows)
    assert report.is_monotone(tol=2e-6)
    assert report.plateau_gamma() is not None
