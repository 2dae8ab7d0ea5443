"""Loading, validating and writing problem instances and direction sequences."""

import csv
import json
import logging
from pathlib import Path
from typing import List, Optional, Sequence

import pydantic

from hybid.errors import InstanceValidationError, LengthMismatch, ParseError
from hybid.schemas import Direction, DirectionSequence, Instance

logger = logging.getLogger(__name__)

_DATA = Path(__file__).absolute().parent / "data"
REFERENCE_INSTANCE = _DATA / "reference_instance.json"
REFERENCE_DIRECTIONS = _DATA / "reference_directions.csv"

TECHNOLOGY_CONFIGURATIONS = {
    "PV": (False, False),
    "PV+EL": (False, True),
    "PV+BAT": (True, False),
    "PV+EL+BAT": (True, True),
}


def _validation_error(exc: pydantic.ValidationError) -> InstanceValidationError:
    err = exc.errors()[0]
    ctx = err.get("ctx") or {}
    path = ctx.get("field_path") or ".".join(str(p) for p in err["loc"])
    message = err["msg"]
    if path and message.startswith(f"{path}: "):
        message = message[len(path) + 2 :]
    return InstanceValidationError(path or "<root>", message)


def parse_instance(data: dict) -> Instance:
    try:
        return Instance.model_validate(data)
    except pydantic.ValidationError as e:
        raise _validation_error(e) from e


def load_instance(path: str | Path) -> Instance:
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as stream:
            data = json.load(stream)
    except FileNotFoundError as e:
        raise ParseError(f"instance file not found: {path}") from e
    except OSError as e:
        raise ParseError(f"cannot read instance file {path}: {e}") from e
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise ParseError(f"{path}: {e}") from e
    if not isinstance(data, dict):
        raise ParseError(f"{path}: expected a JSON object at the top level")
    instance = parse_instance(data)
    logger.info(
        f"Loaded instance {path.name}: T={instance.n_periods}, S={instance.n_scenarios}"
    )
    return instance


def instance_to_dict(instance: Instance) -> dict:
    return instance.model_dump(mode="json", by_alias=True)


def dump_instance(instance: Instance, path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w") as stream:
        json.dump(instance_to_dict(instance), stream, indent=2)
    return path


def load_direction_sequences(
    path: str | Path, n_periods: Optional[int] = None
) -> List[DirectionSequence]:
    """One sequence per non-blank row of `+`/`-` tokens."""
    path = Path(path)
    sequences = []
    try:
        with open(path, newline="", encoding="utf-8") as stream:
            rows = list(csv.reader(stream))
    except FileNotFoundError as e:
        raise ParseError(f"direction file not found: {path}") from e
    except OSError as e:
        raise ParseError(f"cannot read direction file {path}: {e}") from e
    except (UnicodeDecodeError, csv.Error) as e:
        raise ParseError(f"{path}: {e}") from e
    for lineno, row in enumerate(rows, start=1):
        tokens = [token.strip() for token in row if token.strip()]
        if not tokens:
            continue
        try:
            directions = tuple(Direction(token) for token in tokens)
        except ValueError as e:
            raise ParseError(f"{path}:{lineno}: {e}") from e
        if n_periods is not None and len(directions) != n_periods:
            raise LengthMismatch(
                f"{path}:{lineno}: expected {n_periods} directions, got {len(directions)}"
            )
        sequences.append(DirectionSequence(directions=directions))
    return sequences


def write_direction_sequences(sequences: Sequence[DirectionSequence], path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as stream:
        writer = csv.writer(stream)
        for seq in sequences:
            writer.writerow(seq.tokens())
    return path


def with_technologies(instance: Instance, battery: bool, electrolyzer: bool) -> Instance:
    """Copy of `instance` with the excluded technologies sized to zero."""
    data = instance_to_dict(instance)
    if not battery:
        data["battery"].update(capacity=0.0, rated_power=0.0, initial_soe=0.0)
    if not electrolyzer:
        data["electrolyzer"]["rated_power"] = 0.0
    return parse_instance(data)


def reference_instance() -> Instance:
    return load_instance(REFERENCE_INSTANCE)


def reference_directions() -> List[DirectionSequence]:
    return load_direction_sequences(REFERENCE_DIRECTIONS, n_periods=24)
