"""
Steady-State Limits for Weak Grids
==================================
Closed-form steady-state analysis of complex power injected at the PCC of a
grid with series impedance Rg + jXg behind an ideal source |vg|:

- existence discriminant (lambda >= 0) and the low-current |i|^2 solution
- PCC voltage magnitude in steady state
- stable / safe (|i| <= i_max) / control-saturation boundaries for purely
  inductive and purely resistive grids, and region scans over the impedance

The resistive case is the inductive one with (p <-> q, Xg <-> Rg).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Sequence

import numpy as np
import pandas as pd

from errors import (
    ControlRootNegative,
    NoSteadyState,
    PowerExceedsCurrentLimit,
    SingularImpedance,
)

logger = logging.getLogger(__name__)

GridKind = Literal["inductive", "resistive"]
Branch = Literal["low", "high"]

SQRT2 = math.sqrt(2.0)


# ============================================================================
# 1. DATA TYPES
# ============================================================================

@dataclass(frozen=True)
class GridImpedance:
    Rg: float = 0.0
    Xg: float = 0.0
    vg_mag: float = 1.0

    def __post_init__(self):
        if self.Rg < 0 or self.Xg < 0:
            raise ValueError("Rg and Xg must be non-negative")
        if self.vg_mag <= 0:
            raise ValueError("vg_mag must be positive")


@dataclass(frozen=True)
class PowerPoint:
    p: float
    q: float

    @property
    def s(self) -> complex:
        return complex(self.p, self.q)


@dataclass
class RegionCurves:
    """
    One curve family of a region scan.

    `axis` holds the grid impedance (Xg for inductive grids, Rg for resistive
    ones); `fixed` is the p (inductive) or q (resistive) the family is drawn
    for. Missing bounds are NaN.
    """

    kind: GridKind
    fixed: float
    axis: np.ndarray
    stable_boundary: np.ndarray
    safe_lower: np.ndarray
    safe_upper: np.ndarray
    ctrl_saturation: np.ndarray
    touch_point: float = math.nan
    meta: dict = field(default_factory=dict)

    def to_frame(self) -> pd.DataFrame:
        impedance_col = "xg" if self.kind == "inductive" else "rg"
        fixed_col = "p" if self.kind == "inductive" else "q"
        return pd.DataFrame({
            fixed_col: np.full(len(self.axis), self.fixed),
            impedance_col: self.axis,
            "stable_boundary": self.stable_boundary,
            "safe_lower": self.safe_lower,
            "safe_upper": self.safe_upper,
            "ctrl_saturation": self.ctrl_saturation,
        })


# ============================================================================
# 2. GENERAL R-L GRID
# ============================================================================

def lambda_discriminant(pt: PowerPoint, z: GridImpedance) -> float:
    """
    Existence discriminant; a steady-state solution exists iff it is >= 0.

    Example:
        lambda_discriminant(PowerPoint(0.5, 0.2), GridImpedance(Xg=0.3))  # 1.15
    """
    p, q = pt.p, pt.q
    R, X = z.Rg, z.Xg
    vg2 = z.vg_mag**2
    return (
        vg2
        - 4.0 * X * (X * p**2 / vg2 - q)
        + 4.0 * R * ((2.0 * X * p * q - R * q**2) / vg2 + p)
    )


def current_mag_sq(pt: PowerPoint, z: GridImpedance, branch: Branch = "low") -> float:
    """
    Steady-state |i|^2 for a given PCC power.

    Args:
        pt (PowerPoint): Complex power at the PCC
        z (GridImpedance): Grid impedance and source magnitude
        branch (str): 'low' is the physical (minus sqrt) root; 'high' the other

    Raises:
        NoSteadyState: lambda < 0
        SingularImpedance: Rg = Xg = 0
    """
    z2 = z.Rg**2 + z.Xg**2
    if z2 == 0.0:
        raise SingularImpedance("current magnitude is undefined for Rg = Xg = 0")
    lam = lambda_discriminant(pt, z)
    if lam < 0:
        raise NoSteadyState(f"lambda = {lam:.6g} < 0")
    sign = -1.0 if branch == "low" else 1.0
    num = (
        2.0 * z.Rg * pt.p
        + 2.0 * z.Xg * pt.q
        + sign * z.vg_mag * math.sqrt(lam)
        + z.vg_mag**2
    )
    return num / (2.0 * z2)


def pcc_mag_sq(pt: PowerPoint, z: GridImpedance) -> float:
    """Steady-state |v_p|^2 = Rg*p + Xg*q + (|vg|/2)(|vg| + sqrt(lambda))."""
    lam = lambda_discriminant(pt, z)
    if lam < 0:
        raise NoSteadyState(f"lambda = {lam:.6g} < 0")
    return z.Rg * pt.p + z.Xg * pt.q + 0.5 * z.vg_mag * (z.vg_mag + math.sqrt(lam))


def solve_current_phasor(pt: PowerPoint, z: GridImpedance, steps: int = 20,
                         tol: float = 1e-14, max_iter: int = 50) -> complex:
    """
    Numerically solve (Rg + jXg)|i|^2 + vg*conj(i) - s = 0 for the phasor i.

    Damped Newton on the real/imaginary residual, seeded at the
    zero-impedance solution conj(s)/vg and continued in the impedance scale
    so the iterate stays on the low-current branch. The grid source is taken
    on the real axis.

    Raises:
        NoSteadyState: lambda < 0 at the requested impedance
    """
    if lambda_discriminant(pt, z) < 0:
        raise NoSteadyState("no steady state to solve for")
    vg = z.vg_mag
    p, q = pt.p, pt.q
    a, b = p / vg, -q / vg

    for k in range(1, steps + 1):
        R = z.Rg * k / steps
        X = z.Xg * k / steps
        for _ in range(max_iter):
            m = a * a + b * b
            f1 = R * m + vg * a - p
            f2 = X * m - vg * b - q
            norm = math.hypot(f1, f2)
            if norm < tol:
                break
            j11, j12 = 2.0 * R * a + vg, 2.0 * R * b
            j21, j22 = 2.0 * X * a, 2.0 * X * b - vg
            det = j11 * j22 - j12 * j21
            if det == 0.0:
                break
            da = (f1 * j22 - f2 * j12) / det
            db = (j11 * f2 - j21 * f1) / det
            # backtracking on the residual norm
            t = 1.0
            while t > 1e-6:
                na, nb = a - t * da, b - t * db
                nm = na * na + nb * nb
                if math.hypot(R * nm + vg * na - p, X * nm - vg * nb - q) < norm:
                    break
                t *= 0.5
            a, b = a - t * da, b - t * db
        else:
            logger.warning("Newton did not converge at scale %d/%d for %s", k, steps, pt)
    return complex(a, b)


# ============================================================================
# 3. INDUCTIVE GRIDS (Rg -> 0)
# ============================================================================

def inductive_q_stable_min(p: float, Xg: float, vg: float) -> float:
    """Smallest q with a steady state: Xg*p^2/vg^2 - vg^2/(4*Xg)."""
    if Xg <= 0:
        raise SingularImpedance("stable boundary needs Xg > 0")
    return Xg * p**2 / vg**2 - vg**2 / (4.0 * Xg)


def _current_radicand(p: float, vg: float, i_max: float) -> float:
    rad = vg**2 * i_max**2 - p**2
    if rad < 0:
        raise PowerExceedsCurrentLimit(f"|{p}| > vg*i_max = {vg * i_max}")
    return rad


def inductive_q_safe_bounds(p: float, Xg: float, vg: float,
                            i_max: float) -> tuple[float, float]:
    """
    q band that keeps |i| <= i_max: Xg*i_max^2 -/+ sqrt(vg^2 i_max^2 - p^2).

    Raises:
        PowerExceedsCurrentLimit: |p| > vg*i_max
    """
    root = math.sqrt(_current_radicand(p, vg, i_max))
    centre = Xg * i_max**2
    return centre - root, centre + root


def inductive_touch_point(p: float, vg: float, i_max: float) -> float:
    """Xg where the stable boundary touches the lower safe bound."""
    rad = _current_radicand(p, vg, i_max)
    if rad == 0.0:
        raise PowerExceedsCurrentLimit("touch point needs |p| < vg*i_max")
    return vg**2 / (2.0 * math.sqrt(rad))


def inductive_q_ctrl_max(p: float, Xg: float, vg: float, vc: float) -> float:
    """
    Rough q above which |mu| saturates (inverter filter drop neglected).

    Raises:
        ControlRootNegative: vc^2 vg^2 < 2 Xg^2 p^2
    """
    if Xg <= 0:
        raise SingularImpedance("control limit needs Xg > 0")
    rad = vc**2 * vg**2 - 2.0 * Xg**2 * p**2
    if rad < 0:
        raise ControlRootNegative(f"inner radicand {rad:.6g} < 0")
    return (vc**2 - SQRT2 * math.sqrt(rad)) / (2.0 * Xg)


# ============================================================================
# 4. RESISTIVE GRIDS (Xg -> 0)
# ============================================================================

def resistive_limits(q: float, Rg: float, vg: float, i_max: float,
                     vc: float) -> tuple[float, float, float, float]:
    """
    Resistive-grid limits on p for a fixed q.

    Returns:
        tuple: (p_stable_min, p_lo, p_hi, p_ctrl_max)
    """
    p_stable_min = inductive_q_stable_min(q, Rg, vg)
    p_lo, p_hi = inductive_q_safe_bounds(q, Rg, vg, i_max)
    p_ctrl_max = inductive_q_ctrl_max(q, Rg, vg, vc)
    return p_stable_min, p_lo, p_hi, p_ctrl_max


# ============================================================================
# 5. REGION SCANS
# ============================================================================

def _or_nan(fn, *args) -> float:
    try:
        return fn(*args)
    except (NoSteadyState, SingularImpedance, PowerExceedsCurrentLimit,
            ControlRootNegative):
        return math.nan


def scan_region(axis_range: Sequence[float], fixed_values: Sequence[float],
                grid_kind: GridKind, z: GridImpedance, vc: float,
                i_max: float) -> list[RegionCurves]:
    """
    Tabulate the boundary curves over the grid impedance, one family per
    fixed p (inductive) or q (resistive).

    Per-point failures become NaN gaps; nothing is raised for them.

    Example:
        curves = scan_region(np.arange(0.01, 1.0, 0.01), [0.707, 0.9, 1.0],
                             'inductive', GridImpedance(), 1.3 * np.sqrt(2), 1.0)
    """
    axis = np.asarray(axis_range, dtype=float)
    if axis.size == 0:
        raise ValueError("axis_range is empty")
    steps = np.diff(axis)
    if not (np.all(steps > 0) or np.all(steps < 0)):
        raise ValueError("axis_range must be strictly monotone")
    if grid_kind not in ("inductive", "resistive"):
        raise ValueError(f"unknown grid kind {grid_kind!r}")

    vg = z.vg_mag
    families = []
    for fixed in fixed_values:
        stable = np.array([_or_nan(inductive_q_stable_min, fixed, x, vg) for x in axis])
        safe = [_or_nan(inductive_q_safe_bounds, fixed, x, vg, i_max) for x in axis]
        lower = np.array([b[0] if isinstance(b, tuple) else b for b in safe])
        upper = np.array([b[1] if isinstance(b, tuple) else b for b in safe])
        ctrl = np.array([_or_nan(inductive_q_ctrl_max, fixed, x, vg, vc) for x in axis])
        touch = _or_nan(inductive_touch_point, fixed, vg, i_max)
        curves = RegionCurves(
            kind=grid_kind, fixed=float(fixed), axis=axis,
            stable_boundary=stable, safe_lower=lower, safe_upper=upper,
            ctrl_saturation=ctrl, touch_point=touch,
            meta={"vc": vc, "i_max": i_max, "vg": vg,
                  "current_limited": abs(fixed) >= vg * i_max},
        )
        logger.debug("%s family %.4g: %d gaps in safe band", grid_kind, fixed,
                     int(np.isnan(lower).sum()))
        families.append(curves)
    return families


def region_frame(families: Sequence[RegionCurves]) -> pd.DataFrame:
    """Stack curve families into one long table."""
    return pd.concat([c.to_frame() for c in families], ignore_index=True)


def region_to_csv(families: Sequence[RegionCurves], path) -> Path:
    """Write a region table; gaps are written as NaN."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    region_frame(families).to_csv(path, index=False, na_rep="NaN")
    return path
