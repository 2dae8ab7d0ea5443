"""Errors raised across hybid.

Everything derives from `HybidError` plus the closest builtin so callers that
only know about `ValueError`/`RuntimeError` keep working.
"""

from typing import Optional


class HybidError(Exception):
    """Base class for all hybid errors."""


class ParseError(HybidError, ValueError):
    """An input file could not be parsed."""


class InstanceValidationError(HybidError, ValueError):
    """An instance field violates a physical or probabilistic invariant."""

    def __init__(self, field_path: str, message: str):
        super().__init__(f"{field_path}: {message}")
        self.field_path = field_path
        self.message = message


class LengthMismatch(HybidError, ValueError):
    """A per-hour or per-scenario series has the wrong length."""


class BackendUnavailable(HybidError, RuntimeError):
    """The requested MILP backend cannot be used on this machine."""


class NumericFailure(HybidError, RuntimeError):
    """The solver gave up for numerical reasons."""

    def __init__(self, message: str, log_excerpt: str = ""):
        super().__init__(message)
        self.log_excerpt = log_excerpt


class MissingVariable(HybidError, KeyError):
    """A point does not assign a value to some model variable."""


class SegmentOverflow(HybidError, ValueError):
    """A state-of-energy segment holds more energy than its width."""


class PowerOutOfRange(HybidError, ValueError):
    """An electrolyzer power is inconsistent with its on/off state."""


class DualityGap(HybidError, RuntimeError):
    """The dualized robust term disagrees with the inner worst case."""

    def __init__(self, scenario: int, magnitude: float, period: Optional[int] = None):
        where = f"scenario {scenario}" if period is None else f"period {period}, scenario {scenario}"
        super().__init__(f"duality mismatch of {magnitude:.3g} at {where}")
        self.scenario = scenario
        self.period = period
        self.magnitude = magnitude


class IncompleteSolution(HybidError, ValueError):
    """A solution lacks dispatch values for some (t, s)."""


class TooLarge(HybidError, RuntimeError):
    """An exhaustive enumeration would exceed its node cap."""


class EmptyReport(HybidError, ValueError):
    """A report without rows cannot be exported."""
