from enum import Enum
import operator
from typing import Annotated, Any, Dict, List, Optional, Sequence, Tuple, TypedDict

import numpy as np
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    ValidationInfo,
    field_validator,
    model_validator,
)
from pydantic_core import PydanticCustomError

DEFAULT_CHARGE_CURVE_R = (0.0, 0.5, 0.8, 1.0)
DEFAULT_CHARGE_CURVE_F = (1.0, 1.0, 0.6, 0.2)
DEFAULT_WATER_PER_KG = 0.010
PROBABILITY_RENORMALISE_TOL = 1e-6


class _Frozen(BaseModel):
    model_config = ConfigDict(frozen=True, populate_by_name=True, allow_inf_nan=False)


def _length_error(path: str, expected: int, got: int) -> PydanticCustomError:
    return PydanticCustomError(
        "length_mismatch",
        "{field_path}: expected {expected} values, got {got}",
        {"field_path": path, "expected": expected, "got": got},
    )


class TimeGrid(_Frozen):
    n_periods: int = Field(ge=1)
    dt: float = Field(gt=0, description="Period length in hours")


class PriceData(_Frozen):
    da_price: tuple[float, ...] = Field(alias="da", description="EUR/MWh, may be negative")
    hydrogen_price: float = Field(alias="hydrogen", ge=0, description="EUR/kg")
    water_price: float = Field(alias="water", ge=0, description="EUR/m3")


class PvData(_Frozen):
    forecast: tuple[float, ...]
    scenarios: tuple[tuple[float, ...], ...] = Field(min_length=1)
    probabilities: tuple[float, ...] = Field(default=None, validate_default=True)

    @field_validator("forecast")
    @classmethod
    def _forecast_nonnegative(cls, v):
        if any(x < 0 for x in v):
            raise ValueError("forecast must be non-negative")
        return v

    @field_validator("scenarios")
    @classmethod
    def _scenarios_nonnegative(cls, v):
        if any(x < 0 for row in v for x in row):
            raise ValueError("scenario outputs must be non-negative")
        return v

    @field_validator("probabilities", mode="before")
    @classmethod
    def _normalise_probabilities(cls, v, info: ValidationInfo):
        scenarios = info.data.get("scenarios")
        if scenarios is None:
            # scenarios already failed validation
            return v if v is not None else ()
        n = len(scenarios)
        if v is None:
            return tuple(1.0 / n for _ in range(n))
        v = [float(p) for p in v]
        if len(v) != n:
            raise ValueError(f"expected {n} probabilities, got {len(v)}")
        if any(p < 0 for p in v):
            raise ValueError("probabilities must be non-negative")
        total = sum(v)
        if abs(total - 1.0) > PROBABILITY_RENORMALISE_TOL:
            raise ValueError(f"probabilities sum to {total:.9g}, expected 1")
        return tuple(p / total for p in v)


class BatteryParams(_Frozen):
    capacity: float = Field(ge=0, description="soe_max, MWh")
    rated_power: float = Field(ge=0, description="MW")
    eta: float = Field(gt=0, le=1)
    initial_soe: float = Field(default=0.0, ge=0)
    charge_curve_R: tuple[float, ...] = DEFAULT_CHARGE_CURVE_R
    charge_curve_F: tuple[float, ...] = DEFAULT_CHARGE_CURVE_F

    @field_validator("charge_curve_R")
    @classmethod
    def _check_r(cls, v):
        if len(v) < 2:
            raise ValueError("at least two breakpoints are required")
        if v[0] != 0.0 or v[-1] != 1.0:
            raise ValueError("breakpoints must start at 0 and end at 1")
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("breakpoints must be strictly increasing")
        return v

    @field_validator("charge_curve_F")
    @classmethod
    def _check_f(cls, v):
        if not v:
            raise ValueError("charge fractions must not be empty")
        if v[0] > 1.0:
            raise ValueError("first charge fraction must be <= 1")
        if any(f < 0 for f in v):
            raise ValueError("charge fractions must be non-negative")
        if any(b > a for a, b in zip(v, v[1:])):
            raise ValueError("charge fractions must be non-increasing")
        return v

    @model_validator(mode="after")
    def _check_consistency(self):
        if len(self.charge_curve_R) != len(self.charge_curve_F):
            raise _length_error(
                "battery.charge_curve_F", len(self.charge_curve_R), len(self.charge_curve_F)
            )
        if self.initial_soe > self.capacity:
            raise PydanticCustomError(
                "initial_soe",
                "{field_path}: initial state of energy exceeds capacity",
                {"field_path": "battery.initial_soe"},
            )
        return self

    @property
    def n_segments(self) -> int:
        return len(self.charge_curve_R) - 1


class ElectrolyzerParams(_Frozen):
    rated_power: float = Field(ge=0, description="MW")
    min_stable_fraction: float = Field(ge=0, lt=1)
    power_per_kg: float = Field(gt=0, description="MW/kg")
    alpha: float = Field(gt=0, le=1)
    beta: float = Field(ge=0)
    water_per_kg: float = Field(default=DEFAULT_WATER_PER_KG, ge=0, description="m3/kg")


class ImbalanceParams(_Frozen):
    kappa: float = Field(ge=0, lt=1)
    gamma: int = Field(default=0, ge=0)


class GridParams(_Frozen):
    connection_limit: float = Field(gt=0, description="MW")


class Instance(_Frozen):
    time: TimeGrid
    prices: PriceData
    pv: PvData
    battery: BatteryParams
    electrolyzer: ElectrolyzerParams
    imbalance: ImbalanceParams
    grid: GridParams

    @model_validator(mode="after")
    def _check_lengths(self):
        n = self.time.n_periods
        if len(self.prices.da_price) != n:
            raise _length_error("prices.da", n, len(self.prices.da_price))
        if len(self.pv.forecast) != n:
            raise _length_error("pv.forecast", n, len(self.pv.forecast))
        for s, row in enumerate(self.pv.scenarios):
            if len(row) != n:
                raise _length_error(f"pv.scenarios.{s}", n, len(row))
        if self.imbalance.gamma > n:
            raise PydanticCustomError(
                "gamma_range",
                "{field_path}: uncertainty budget exceeds the number of periods",
                {"field_path": "imbalance.gamma"},
            )
        return self

    @property
    def n_periods(self) -> int:
        return self.time.n_periods

    @property
    def n_scenarios(self) -> int:
        return len(self.pv.scenarios)

    @property
    def dt(self) -> float:
        return self.time.dt

    def da_prices(self) -> np.ndarray:
        return np.asarray(self.prices.da_price, dtype=float)

    def probabilities(self) -> np.ndarray:
        return np.asarray(self.pv.probabilities, dtype=float)

    def pv_realisations(self) -> np.ndarray:
        """Realized PV output as a (T, S) array."""
        return np.asarray(self.pv.scenarios, dtype=float).T

    def with_gamma(self, gamma: int) -> "Instance":
        imbalance = self.imbalance.model_copy(update={"gamma": gamma})
        return Instance.model_validate(
            {**self.model_dump(by_alias=True), "imbalance": imbalance.model_dump()}
        )


class Direction(str, Enum):
    SYSTEM_SURPLUS = "+"
    SYSTEM_SHORTAGE = "-"


class DirectionSequence(_Frozen):
    directions: tuple[Direction, ...]

    def __len__(self) -> int:
        return len(self.directions)

    def tokens(self) -> List[str]:
        return [d.value for d in self.directions]


class SolveOptions(_Frozen):
    mip_gap_tol: float = Field(default=1e-6, ge=0)
    time_limit: float = Field(default=600.0, gt=0)
    threads: int = Field(default=1, ge=1)
    backend: str = "highs"


# Field names shared by the variable registries and `Solution`.
FIRST_STAGE_FIELDS = ("mp", "ch_da", "dis_da", "el_da", "x_e", "x_b_da")
SECOND_STAGE_FIELDS = (
    "d",
    "r",
    "res",
    "ch_up",
    "ch_down",
    "dis_up",
    "dis_down",
    "el_up",
    "el_down",
    "soe",
    "x_b_bal",
    "hydrogen",
    "el",
    "el_net",
)
SEGMENT_FIELDS = ("soe_seg",)
ROBUST_SCENARIO_FIELDS = ("omega",)
ROBUST_FIELDS = ("z", "y", "mu1", "mu2", "x_d1", "x_d2")


class Solution(BaseModel):
    """Values of one solved model.

    First-stage series are indexed `[t]`, second-stage ones `[t][s]` and state-of-energy
    segments `[t][s][j]`, all zero-based.
    """

    status: str
    gamma: int
    objective_value: float
    mip_gap: float = 0.0
    wall_time: float = 0.0
    accurate_battery: bool = True

    mp: List[float]
    ch_da: List[float]
    dis_da: List[float]
    el_da: List[float]
    x_e: List[float]
    x_b_da: List[float]

    d: List[List[float]]
    r: List[List[float]]
    res: List[List[float]]
    ch_up: List[List[float]]
    ch_down: List[List[float]]
    dis_up: List[List[float]]
    dis_down: List[List[float]]
    el_up: List[List[float]]
    el_down: List[List[float]]
    soe: List[List[float]]
    x_b_bal: List[List[float]]
    hydrogen: List[List[float]]
    el: List[List[float]]
    el_net: List[List[float]]
    soe_seg: List[List[List[float]]]

    omega: List[float]
    z: List[List[float]]
    y: List[List[float]]
    mu1: List[List[float]]
    mu2: List[List[float]]
    x_d1: List[List[float]]
    x_d2: List[List[float]]

    def array(self, field: str) -> np.ndarray:
        return np.asarray(getattr(self, field), dtype=float)

    def charge_effective(self) -> np.ndarray:
        """Actual charging power per (t, s): DA schedule plus balancing."""
        return self.array("ch_da")[:, None] + self.array("ch_up") - self.array("ch_down")

    def discharge_effective(self) -> np.ndarray:
        return self.array("dis_da")[:, None] + self.array("dis_up") - self.array("dis_down")


class ProfitBreakdown(BaseModel):
    da_revenue: float
    hydrogen_revenue_expected: float
    water_cost_expected: float
    imbalance_revenue_expected: float
    total: float

    @model_validator(mode="after")
    def _check_total(self):
        parts = (
            self.da_revenue
            + self.hydrogen_revenue_expected
            - self.water_cost_expected
            + self.imbalance_revenue_expected
        )
        if abs(parts - self.total) > 1e-9 * max(1.0, abs(self.total)):
            raise ValueError("total must equal the sum of its components")
        return self


class SweepRow(BaseModel):
    gamma: int
    status: str = "Optimal"
    total_expected: Optional[float] = None
    da_revenue: Optional[float] = None
    hydrogen_expected: Optional[float] = None
    imbalance_expected: Optional[float] = None
    real_total: Optional[float] = None
    real_imbalance: Optional[float] = None
    imbalance_min: Optional[float] = None
    imbalance_max: Optional[float] = None
    mip_gap: Optional[float] = None
    error: Optional[str] = None
    solution: Optional[Solution] = Field(default=None, exclude=True, repr=False)

    @property
    def ok(self) -> bool:
        """A profit is available: optimal, or the incumbent of a stopped solve."""
        return self.error is None and self.total_expected is not None

    @property
    def optimal(self) -> bool:
        return self.ok and self.status == "Optimal"


SWEEP_COLUMNS = (
    "gamma",
    "total_expected",
    "da_revenue",
    "hydrogen_expected",
    "imbalance_expected",
    "real_total",
    "real_imbalance",
    "imbalance_min",
    "imbalance_max",
    "status",
    "mip_gap",
)


class SweepReport(BaseModel):
    rows: List[SweepRow] = Field(default_factory=list)
    configuration: str = "PV+EL+BAT"

    @model_validator(mode="after")
    def _sort_rows(self):
        self.rows.sort(key=lambda row: row.gamma)
        return self

    def successful(self) -> List[SweepRow]:
        return [row for row in self.rows if row.ok]

    def totals(self) -> dict[int, float]:
        return {row.gamma: row.total_expected for row in self.successful()}

    def is_monotone(self, tol: float = 1e-6) -> bool:
        """True when total expected profit never increases with the budget.

        A rise is tolerated up to twice the larger MIP gap of the two rows.
        """
        rows = self.successful()
        for a, b in zip(rows, rows[1:]):
            slack = max(tol, 2 * max(a.mip_gap or 0.0, b.mip_gap or 0.0))
            if b.total_expected > a.total_expected + slack * max(1.0, abs(a.total_expected)):
                return False
        return True

    def plateau_gamma(self, tol: float = 1e-6) -> Optional[int]:
        """Smallest budget from which the total expected profit stays constant."""
        rows = self.successful()
        if not rows:
            return None
        last = rows[-1].total_expected
        plateau = rows[-1].gamma
        for row in reversed(rows):
            if abs(row.total_expected - last) > tol * max(1.0, abs(last)):
                break
            plateau = row.gamma
        return plateau

    def best_real_gamma(self) -> Optional[int]:
        rows = [row for row in self.successful() if row.real_total is not None]
        if not rows:
            return None
        return max(rows, key=lambda row: (row.real_total, -row.gamma)).gamma


def as_sequences(
    directions: "DirectionSequence | Sequence[DirectionSequence]",
) -> List[DirectionSequence]:
    if isinstance(directions, DirectionSequence):
        return [directions]
    return list(directions)


class Verification(BaseModel):
    """Outcome of the post-solve checks on one solution."""

    violations: List[Tuple[str, float]] = Field(default_factory=list)
    replay_issues: List[str] = Field(default_factory=list)
    duality_issues: List[Tuple[int, Optional[int], float]] = Field(default_factory=list)
    objective_error: float = 0.0
    enumeration_best: Optional[float] = None
    enumeration_slack: Optional[float] = None
    enumeration_within: Optional[bool] = None
    tolerance: float = 1e-4

    @property
    def ok(self) -> bool:
        return (
            not self.violations
            and not self.replay_issues
            and not self.duality_issues
            and self.objective_error <= self.tolerance
            and self.enumeration_within is not False
        )


class PipelineState(TypedDict, total=False):
    instance_path: Optional[str]
    gamma: Optional[int]
    accurate_battery: bool
    enumerate: bool
    instance: Instance
    built: Any
    result: Any
    solution: Optional[Solution]
    verification: Verification


class GammaTask(TypedDict):
    instance: Instance
    gamma: int
    directions: List[DirectionSequence]


def merge_reports(left: Dict[str, "SweepReport"], right: Dict[str, "SweepReport"]):
    return {**left, **right}


class SweepState(TypedDict, total=False):
    instance: Instance
    gammas: List[int]
    directions: List[DirectionSequence]
    configuration: str
    rows: Annotated[List[SweepRow], operator.add]
    report: SweepReport


class AblationState(TypedDict, total=False):
    instance: Instance
    gammas: List[int]
    directions: List[DirectionSequence]
    reports: Annotated[dict, merge_reports]
