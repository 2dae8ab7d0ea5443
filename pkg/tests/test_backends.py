import shutil

import pytest

from hybid.backends import CbcBackend, HighsBackend, _parse_cbc_solution, get_backend, solve
from hybid.errors import BackendUnavailable
from hybid.main.robust import inner_problem_model, inner_worst_case
from hybid.model_ir import ModelIR, Sense, SolveStatus, evaluate_constraints
from hybid.schemas import SolveOptions

needs_cbc = pytest.mark.skipif(shutil.which("cbc") is None, reason="cbc not installed")


def bounded_lp():
    model = ModelIR()
    x = model.add_var("x", 0.0, 10.0)
    model.add_constraint("cap", [(x, 1.0)], Sense.LE, 3.0)
    model.set_objective([(x, 1.0)])
    return model


def infeasible_lp():
    model = ModelIR()
    x = model.add_var("x", 0.0, 10.0)
    model.add_constraint("low", [(x, 1.0)], Sense.GE, 5.0)
    model.add_constraint("high", [(x, 1.0)], Sense.LE, 3.0)
    model.set_objective([(x, 1.0)])
    return model


def knapsack():
    model = ModelIR()
    x = model.add_binary("x")
    y = model.add_binary("y")
    z = model.add_var("z", 0.0, 1.0)
    model.add_constraint("pick", [(x, 1.0), (y, 1.0)], Sense.LE, 1.0)
    model.add_constraint("frac", [(z, 1.0), (x, 1.0)], Sense.LE, 1.5)
    model.set_objective([(x, 1.0), (y, 1.0), (z, 0.5)], constant=1.0)
    return model


BACKENDS = [
    pytest.param(HighsBackend(), id="highs"),
    pytest.param(CbcBackend(), id="cbc", marks=needs_cbc),
]


@pytest.mark.parametrize("backend", BACKENDS)
def test_bounded_lp(backend):
    result = backend.solve(bounded_lp(), SolveOptions())
    assert result.status is SolveStatus.OPTIMAL
    assert result.objective_value == pytest.approx(3.0)
    assert result.primal == [pytest.approx(3.0)]


@pytest.mark.parametrize("backend", BACKENDS)
def test_infeasible_lp(backend):
    result = backend.solve(infeasible_lp(), SolveOptions())
    assert result.status is SolveStatus.INFEASIBLE
    assert not result.has_primal
    assert result.objective_value is None


@pytest.mark.parametrize("backend", BACKENDS)
def test_binary_model_keeps_objective_constant(backend):
    model = knapsack()
    result = backend.solve(model, SolveOptions())
    assert result.status is SolveStatus.OPTIMAL
    # y = 1 leaves room for z = 1
    assert result.objective_value == pytest.approx(2.5)
    assert evaluate_constraints(model, result.primal_values) == []


def test_inner_problem_lp_matches_closed_form():
    deviations, prices = [2.0, -1.0, 0.5], [50.0, 100.0, -20.0]
    for gamma in range(4):
        model = inner_problem_model(deviations, prices, 0.4, gamma)
        result = solve(model)
        expected = inner_worst_case(deviations, prices, 0.4, gamma).value
        assert result.objective_value == pytest.approx(expected, abs=1e-9)


def test_get_backend():
    assert isinstance(get_backend("HiGHS"), HighsBackend)
    backend = get_backend("cbc", executable="/opt/cbc/bin/cbc")
    assert backend.executable == "/opt/cbc/bin/cbc"
    with pytest.raises(BackendUnavailable):
        get_backend("gurobi")


def test_missing_cbc_executable():
    backend = CbcBackend(executable="cbc-not-installed-here")
    with pytest.raises(BackendUnavailable):
        backend.solve(bounded_lp(), SolveOptions(backend="cbc"))


def test_cbc_command(tmp_path):
    options = SolveOptions(time_limit=30, mip_gap_tol=1e-4, threads=2)
    cmd = CbcBackend().command(tmp_path / "m.lp", tmp_path / "s.txt", options)
    assert cmd[0] == "cbc"
    assert cmd[cmd.index("-seconds") + 1] == "30.0"
    assert cmd[cmd.index("-ratioGap") + 1] == "0.0001"
    assert cmd[cmd.index("-threads") + 1] == "2"
    assert cmd[-2:] == ["-solution", str(tmp_path / "s.txt")]


def test_parse_cbc_solution():
    text = "Optimal - objective value -3.50000000\n      0 x0   0.5   0\n**    2 x2   1   0\n"
    status, x = _parse_cbc_solution(text, 3)
    assert status is SolveStatus.OPTIMAL
    assert x.tolist() == [0.5, 0.0, 1.0]


@pytest.mark.parametrize(
    "head, status",
    [
        ("Infeasible - objective value 0", SolveStatus.INFEASIBLE),
        ("Unbounded - objective value 0", SolveStatus.UNBOUNDED),
        ("", SolveStatus.NUMERIC_FAILURE),
    ],
)
def test_parse_cbc_solution_without_primal(head, status):
    parsed, x = _parse_cbc_solution(head, 2)
    assert parsed is status
    assert x is None


def test_parse_cbc_time_limit_with_incumbent():
    status, x = _parse_cbc_solution("Stopped on time - objective value -1\n 0 x0 1 0\n", 1)
    assert status is SolveStatus.TIME_LIMIT
    assert x.tolist() == [1.0]
