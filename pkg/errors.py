"""
Exception hierarchy for the flat power toolkit
==============================================
Every error raised by the library derives from FlatPowerError so callers
(the CLI above all) can tell toolkit failures from programming errors.
"""

from __future__ import annotations

from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from scenario_harness import SimTrace


class FlatPowerError(Exception):
    """Base class for all toolkit errors."""


# ---------- Model / analysis ----------
class NonPositiveDcLink(FlatPowerError, ValueError):
    """DC-link voltage reached zero or below (simulation collapse)."""


class NoSteadyState(FlatPowerError, ValueError):
    """The steady-state discriminant is negative: no operating point exists."""


class SingularImpedance(FlatPowerError, ValueError):
    """Grid impedance is zero where a weak-grid formula divides by it."""


class PowerExceedsCurrentLimit(FlatPowerError, ValueError):
    """|p| (or |q|) is larger than vg * i_max, so the safe band is empty."""


class ControlRootNegative(FlatPowerError, ValueError):
    """Inner radicand of the control-saturation limit is negative."""


class ZeroPccVoltage(FlatPowerError, ValueError):
    """Measured PCC voltage is zero; the control law divides by it."""


class ZeroFilteredVoltage(FlatPowerError, ValueError):
    """Filtered PCC voltage is zero; the control law divides by it."""


class AssumptionViolated(FlatPowerError, ValueError):
    """Inputs fall outside the assumptions of a simplified criterion."""


# ---------- Configuration ----------
class ConfigError(FlatPowerError):
    """Scenario configuration could not be read or is not usable."""


class SchemaError(ConfigError):
    """Configuration does not match the schema.

    Args:
        path (str): Dotted path of the offending field (e.g. 'events.1.time')
        message (str): What is wrong with it
    """

    def __init__(self, path: str, message: str):
        self.path = path
        self.message = message
        super().__init__(f"{path}: {message}" if path else message)


class InvariantError(ConfigError):
    """Configuration is well-formed but breaks a cross-field invariant."""


# ---------- Simulation ----------
class DivergenceDetected(FlatPowerError):
    """Simulation left the valid region; carries the partial trace."""

    def __init__(self, trace: SimTrace, time: float, reason: str):
        self.trace = trace
        self.time = time
        self.reason = reason
        super().__init__(f"divergence at t={time:.6f} s: {reason}")


class EmptyTraceError(FlatPowerError, ValueError):
    """A trace with no rows was handed to a writer."""
