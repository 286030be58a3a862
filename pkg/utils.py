"""
Utility Functions for the Flat Power Toolkit
============================================
Argument parsing, numeric and formatting helpers shared by the CLI and the
analysis modules.
"""

from __future__ import annotations

import math

import numpy as np
import pandas as pd


# ============================================================================
# 1. ARGUMENT PARSING
# ============================================================================

def parse_float_list(text: str) -> list[float]:
    """
    Parse a comma-separated list of floats.

    Example:
        parse_float_list("0.001,0.0011,0.020")  # [0.001, 0.0011, 0.02]
    """
    parts = [p.strip() for p in text.split(",")]
    if not parts or any(p == "" for p in parts):
        raise ValueError(f"expected a comma-separated list of numbers, got {text!r}")
    return [float(p) for p in parts]


def parse_range(text: str) -> np.ndarray:
    """
    Parse 'lo:hi:step' into an inclusive grid.

    Args:
        text (str): Range specification, e.g. '0:1:0.05'

    Returns:
        np.ndarray: lo, lo+step, ... up to hi (hi included when it lies on the grid)

    Example:
        parse_range("0:0.5:0.1")  # [0.0, 0.1, 0.2, 0.3, 0.4, 0.5]
    """
    try:
        lo, hi, step = (float(p) for p in text.split(":"))
    except ValueError as exc:
        raise ValueError(f"expected lo:hi:step, got {text!r}") from exc
    if step <= 0 or hi < lo:
        raise ValueError(f"range {text!r} needs step > 0 and hi >= lo")
    n = int(math.floor((hi - lo) / step + 1e-9))
    return lo + step * np.arange(n + 1)


# ============================================================================
# 2. NUMERIC HELPERS
# ============================================================================

def safe_divide(numerator, denominator, default=math.nan):
    """Divide, returning default when the denominator is zero or NaN."""
    if denominator == 0 or pd.isna(denominator):
        return default
    return numerator / denominator


def relative_error(value: float, reference: float) -> float:
    return safe_divide(abs(value - reference), abs(reference))


# ============================================================================
# 3. FORMATTING
# ============================================================================

def format_value(value, digits: int = 6) -> str:
    """Compact engineering-style number for console tables."""
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "n/a"
    if isinstance(value, (bool, np.bool_)):
        return "yes" if value else "no"
    if isinstance(value, (int, np.integer)):
        return str(value)
    if isinstance(value, str):
        return value
    return f"{value:.{digits}g}"


def format_percentage(value, decimals: int = 2, include_sign: bool = False) -> str:
    """
    Format a ratio as a percentage.

    Example:
        format_percentage(0.0123)  # 1.23%
    """
    if pd.isna(value):
        return "n/a"
    sign = "+" if include_sign and value > 0 else ""
    return f"{sign}{100.0 * value:.{decimals}f}%"


def format_mapping(items: dict, digits: int = 6) -> str:
    """Render a flat dict as aligned 'key  value' lines."""
    if not items:
        return ""
    width = max(len(str(k)) for k in items)
    return "\n".join(f"{str(k):<{width}}  {format_value(v, digits)}" for k, v in items.items())
