import copy

import numpy as np
import pytest

from hybid.instance import parse_instance, reference_instance
from hybid.schemas import (
    FIRST_STAGE_FIELDS,
    ROBUST_FIELDS,
    SECOND_STAGE_FIELDS,
    ElectrolyzerParams,
    Solution,
)

MICRO = {
    "time": {"n_periods": 2, "dt": 1.0},
    "prices": {"da": [50.0, 100.0], "hydrogen": 2.0, "water": 0.397},
    "pv": {"forecast": [1.0, 0.5], "scenarios": [[1.0, 0.5]]},
    "battery": {"capacity": 1.0, "rated_power": 1.0, "eta": 0.9, "initial_soe": 0.0},
    "electrolyzer": {
        "rated_power": 1.0,
        "min_stable_fraction": 0.5,
        "power_per_kg": 0.0394,
        "alpha": 0.689,
        "beta": 0.011,
        "water_per_kg": 0.010,
    },
    "imbalance": {"kappa": 0.4, "gamma": 1},
    "grid": {"connection_limit": 10.0},
}

REFERENCE_ELECTROLYZER = {
    "rated_power": 5.0,
    "min_stable_fraction": 0.1,
    "power_per_kg": 0.0394,
    "alpha": 0.689,
    "beta": 0.011,
    "water_per_kg": 0.010,
}


def instance_dict(**sections) -> dict:
    """MICRO with `sections` merged in one level deep."""
    data = copy.deepcopy(MICRO)
    for key, value in sections.items():
        if isinstance(value, dict) and isinstance(data.get(key), dict):
            data[key].update(value)
        else:
            data[key] = value
    return data


def make_instance(**sections):
    return parse_instance(instance_dict(**sections))


def single_hour(price=100.0, kappa=0.4, pv=1.0, **sections):
    return make_instance(
        time={"n_periods": 1, "dt": 1.0},
        prices={"da": [price]},
        pv={"forecast": [pv], "scenarios": [[pv]]},
        imbalance={"kappa": kappa, "gamma": 0},
        **sections,
    )


def random_micro(seed: int):
    rng = np.random.default_rng(seed)
    pv = np.round(rng.uniform(0.0, 1.0, size=(1, 2)), 2)
    return make_instance(
        prices={"da": np.round(rng.uniform(-10.0, 120.0, size=2), 2).tolist()},
        pv={
            "forecast": np.round(rng.uniform(0.0, 1.0, size=2), 2).tolist(),
            "scenarios": pv.tolist(),
        },
        battery={"initial_soe": float(rng.choice([0.0, 0.5]))},
        imbalance={"kappa": 0.4, "gamma": int(rng.integers(0, 3))},
    )


def zero_solution(n_periods=1, n_scenarios=1, n_segments=3, gamma=0, **values) -> Solution:
    """A Solution with every series at zero, overridden by `values`."""
    first = {name: [0.0] * n_periods for name in FIRST_STAGE_FIELDS}
    second = {
        name: [[0.0] * n_scenarios for _ in range(n_periods)]
        for name in SECOND_STAGE_FIELDS + ROBUST_FIELDS
    }
    data = {
        "status": "Optimal",
        "gamma": gamma,
        "objective_value": 0.0,
        **first,
        **second,
        "soe_seg": [
            [[0.0] * n_segments for _ in range(n_scenarios)] for _ in range(n_periods)
        ],
        "omega": [0.0] * n_scenarios,
    }
    data.update(values)
    return Solution(**data)


@pytest.fixture
def micro():
    return make_instance()


@pytest.fixture
def reference():
    return reference_instance()


@pytest.fixture
def reference_electrolyzer():
    return ElectrolyzerParams(**REFERENCE_ELECTROLYZER)
