import argparse
import json

import pandas as pd
import pytest

from conftest import make_instance
from hybid.cli import (
    EXIT_OK,
    EXIT_SOLVER,
    EXIT_VALIDATION,
    EXIT_VERIFICATION,
    build_parser,
    exit_code,
    main,
    parse_gammas,
    runnable_config,
)
from hybid.errors import (
    BackendUnavailable,
    DualityGap,
    InstanceValidationError,
    ParseError,
    TooLarge,
)
from hybid.instance import dump_instance, write_direction_sequences
from hybid.schemas import Direction, DirectionSequence


@pytest.fixture
def micro_path(tmp_path):
    return str(dump_instance(make_instance(), tmp_path / "micro.json"))


def test_parse_gammas():
    assert parse_gammas("0..3") == [0, 1, 2, 3]
    assert parse_gammas("0,2") == [0, 2]
    with pytest.raises(argparse.ArgumentTypeError):
        parse_gammas("a..b")


def test_exit_codes():
    assert exit_code(InstanceValidationError("prices.da", "bad")) == EXIT_VALIDATION
    assert exit_code(ParseError("bad")) == EXIT_VALIDATION
    assert exit_code(BackendUnavailable("cbc")) == EXIT_SOLVER
    assert exit_code(TooLarge("big")) == EXIT_SOLVER
    assert exit_code(DualityGap(0, 1, 0.5)) == EXIT_VERIFICATION


def test_flags_override_environment(monkeypatch):
    monkeypatch.setenv("HYBID_TIME_LIMIT", "30")
    monkeypatch.setenv("HYBID_MIP_GAP", "0.01")
    args = build_parser().parse_args(["solve", "--mip-gap", "0.001"])
    settings = runnable_config(args)["configurable"]
    assert settings["time_limit"] == 30.0
    assert settings["mip_gap"] == 0.001
    assert settings["backend"] == "highs"


def test_solve_writes_outputs(micro_path, tmp_path):
    out = tmp_path / "out"
    assert main(["solve", "--instance", micro_path, "--gamma", "1", "--out", str(out)]) == EXIT_OK
    solution = json.loads((out / "solution.json").read_text())
    breakdown = json.loads((out / "breakdown.json").read_text())
    assert solution["gamma"] == 1
    assert breakdown["total"] == pytest.approx(solution["objective_value"], rel=1e-4)


def test_missing_instance(tmp_path, capsys):
    code = main(["solve", "--instance", str(tmp_path / "missing.json"), "--out", str(tmp_path)])
    assert code == EXIT_VALIDATION
    payload = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert payload["error"] == "ParseError"


def test_gamma_out_of_range(micro_path, tmp_path, capsys):
    code = main(["solve", "--instance", micro_path, "--gamma", "5", "--out", str(tmp_path)])
    assert code == EXIT_VALIDATION
    payload = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert payload["detail"]["field_path"] == "imbalance.gamma"


def test_evaluate_and_verify_stored_solution(micro_path, tmp_path):
    out = tmp_path / "out"
    assert main(["solve", "--instance", micro_path, "--gamma", "1", "--out", str(out)]) == EXIT_OK
    directions = write_direction_sequences(
        [
            DirectionSequence(
                directions=(Direction.SYSTEM_SURPLUS, Direction.SYSTEM_SHORTAGE)
            )
        ],
        tmp_path / "directions.csv",
    )
    solution = str(out / "solution.json")
    code = main(
        [
            "evaluate",
            "--instance",
            micro_path,
            "--solution",
            solution,
            "--directions",
            str(directions),
            "--out",
            str(out),
        ]
    )
    assert code == EXIT_OK
    evaluation = json.loads((out / "evaluation.json").read_text())
    assert evaluation["gamma"] == 1
    assert len(evaluation["per_sequence"]) == 1
    assert evaluation["real_imbalance"] == pytest.approx(evaluation["per_sequence"][0])

    assert main(["verify", "--instance", micro_path, "--solution", solution]) == EXIT_OK


def test_sweep_writes_table(micro_path, tmp_path):
    out = tmp_path / "sweep"
    assert main(["sweep", "--instance", micro_path, "--gammas", "0..2", "--out", str(out)]) == (
        EXIT_OK
    )
    table = pd.read_csv(out / "sweep.csv")
    assert table["gamma"].tolist() == [0, 1, 2]


def test_ablate_writes_summary(micro_path, tmp_path):
    out = tmp_path / "ablation"
    assert main(["ablate", "--instance", micro_path, "--gammas", "0,2", "--out", str(out)]) == (
        EXIT_OK
    )
    assert (out / "ablation.csv").exists()


@pytest.mark.parametrize(
    "field, change",
    [
        ("mp", lambda values: [values[0] + 0.5] + values[1:]),
        ("objective_value", lambda value: value + 25.0),
    ],
)
def test_verify_rejects_corrupted_solution(micro_path, tmp_path, capsys, field, change):
    out = tmp_path / "out"
    assert main(["solve", "--instance", micro_path, "--gamma", "1", "--out", str(out)]) == EXIT_OK
    path = out / "solution.json"
    stored = json.loads(path.read_text())
    stored[field] = change(stored[field])
    path.write_text(json.dumps(stored))
    capsys.readouterr()
    code = main(["verify", "--instance", micro_path, "--solution", str(path)])
    assert code == EXIT_VERIFICATION
    verification = json.loads(capsys.readouterr().out)
    if field == "mp":
        assert verification["violations"] and verification["replay_issues"]
    else:
        assert verification["objective_error"] > verification["tolerance"]


def test_unwritable_output_is_reported(micro_path, tmp_path, capsys):
    blocker = tmp_path / "taken"
    blocker.write_text("not a directory")
    code = main(["solve", "--instance", micro_path, "--gamma", "1", "--out", str(blocker)])
    assert code == EXIT_VALIDATION
    payload = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert payload["error"] in {"FileExistsError", "NotADirectoryError"}


def test_solution_path_is_directory(micro_path, tmp_path, capsys):
    code = main(["verify", "--instance", micro_path, "--solution", str(tmp_path)])
    assert code == EXIT_VALIDATION
    payload = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert payload["error"] == "ParseError"
