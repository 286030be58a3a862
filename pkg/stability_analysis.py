"""
Closed-Loop Stability of the Flatness Controller
================================================
The tracking error of either controller variant obeys

    e''' + K2 e'' + K1 e' + K3 e = nu(t),     K2 = K2r + j*K2i

with real K1, K3 and complex K2 that depend on the grid impedance and, for
the filtered variant, on the notch mismatch. The input nu does not affect
stability and is not modelled.

- closed-loop coefficients for the measured and filtered variants
- Routh-Hurwitz test for the complex cubic, with an eigenvalue oracle
- linear error trajectories (matrix exponential)
- conservative sufficient conditions over a filter-mismatch envelope
- impedance sweeps as tables
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
import pandas as pd
from scipy.linalg import expm

from errors import AssumptionViolated
from flatness_controller import ControllerGains, ControllerVariant

logger = logging.getLogger(__name__)


# ============================================================================
# 1. DATA TYPES
# ============================================================================

@dataclass(frozen=True)
class ClosedLoopCoeffs:
    K1: float
    K2: complex
    K3: float

    @property
    def K2r(self) -> float:
        return self.K2.real

    @property
    def K2i(self) -> float:
        return self.K2.imag

    def polynomial(self) -> np.ndarray:
        """Coefficients of s^3 + K2 s^2 + K1 s + K3, highest power first."""
        return np.array([1.0, self.K2, self.K1, self.K3], dtype=complex)


@dataclass(frozen=True)
class OperatingEnvelope:
    """
    Worst-case bounds used by the static checks.

    Args:
        e_theta (float): Bound on the angle between v_p and vhat_p (rad)
        vp_ratio (float): Bound on |v_p| / |vhat_p|
        dVp_over_Vp (float): Bound on d|v_p|/dt / |v_p| (1/s), measured variant
        theta_dot (float): Angular speed of v_p (rad/s); None means omega
    """

    e_theta: float = 0.0
    vp_ratio: float = 1.0
    dVp_over_Vp: float = 0.0
    theta_dot: float | None = None

    def __post_init__(self):
        if not self.vp_ratio > 0:
            raise ValueError("vp_ratio must be positive")


@dataclass(frozen=True)
class StabilityVerdict:
    stable: bool
    margins: tuple[float, float, float]


class ConservativeResult(NamedTuple):
    holds: bool
    margin1: float
    margin2: float


@dataclass
class SweepResult:
    table: pd.DataFrame
    first_unstable: float | None


# ============================================================================
# 2. CLOSED-LOOP COEFFICIENTS
# ============================================================================

def _common(gains: ControllerGains, L: float, Lg: float, Rg: float) -> tuple[float, float, float]:
    Lt = L + Lg
    if not Lt > 0:
        raise ValueError("L + Lg must be positive")
    return L * gains.k1 / Lt, L * gains.k3 / Lt, (Rg + L * gains.k2) / Lt


def coeffs_measured(gains: ControllerGains, L: float, Lg: float, Rg: float,
                    omega: float, envelope: OperatingEnvelope) -> ClosedLoopCoeffs:
    """
    Coefficients with the measured PCC voltage in the law.

    K2r loses the relative rate of change of |v_p|; K2i carries the rotation
    of v_p against the omega*L the law assumes.
    """
    K1, K3, base = _common(gains, L, Lg, Rg)
    theta_dot = omega if envelope.theta_dot is None else envelope.theta_dot
    K2r = base - envelope.dVp_over_Vp
    K2i = -omega * L / (L + Lg) + theta_dot
    return ClosedLoopCoeffs(K1=K1, K2=complex(K2r, K2i), K3=K3)


def coeffs_filtered(gains: ControllerGains, L: float, Lg: float, Rg: float,
                    omega: float, envelope: OperatingEnvelope) -> ClosedLoopCoeffs:
    """
    Coefficients with the notch-filtered voltage in the law.

    Example:
        coeffs_filtered(ControllerGains(21.25e6, 9011, 4424e6, kappa_r=92),
                        L, 0.0, 0.0, omega, OperatingEnvelope(vp_ratio=2)).K2r  # 8919
    """
    K1, K3, base = _common(gains, L, Lg, Rg)
    r = envelope.vp_ratio
    c, s = math.cos(envelope.e_theta), math.sin(envelope.e_theta)
    kr, ki = gains.kappa_r, gains.kappa_i
    K2r = base - kr * (r * c - 1.0) + ki * r * s
    K2i = omega * Lg / (L + Lg) + ki * (r * c - 1.0) + kr * r * s
    return ClosedLoopCoeffs(K1=K1, K2=complex(K2r, K2i), K3=K3)


def closed_loop_coeffs(variant: ControllerVariant | str, gains: ControllerGains,
                       L: float, Lg: float, Rg: float, omega: float,
                       envelope: OperatingEnvelope) -> ClosedLoopCoeffs:
    variant = ControllerVariant(variant)
    fn = coeffs_filtered if variant is ControllerVariant.FILTERED else coeffs_measured
    return fn(gains, L, Lg, Rg, omega, envelope)


# ============================================================================
# 3. ROUTH-HURWITZ AND ORACLES
# ============================================================================

def routh_hurwitz_complex_cubic(c: ClosedLoopCoeffs) -> StabilityVerdict:
    """
    Generalized Routh-Hurwitz test for s^3 + (K2r + jK2i) s^2 + K1 s + K3.

    Stable iff all three margins are positive:
        K2r
        -K2r (K3 - K1 K2r)
        K3 K2r^2 (K3 - K1 K2r)^2 - K3^2 K2i^2 K2r^3
    """
    K1, K3 = c.K1, c.K3
    K2r, K2i = c.K2r, c.K2i
    gap = K3 - K1 * K2r
    m1 = K2r
    m2 = -K2r * gap
    m3 = K3 * K2r**2 * gap**2 - K3**2 * K2i**2 * K2r**3
    margins = (float(m1), float(m2), float(m3))
    return StabilityVerdict(stable=all(m > 0 for m in margins), margins=margins)


def max_real_root(c: ClosedLoopCoeffs) -> float:
    """Largest real part among the companion-matrix eigenvalues."""
    return float(np.max(closed_loop_poles(c).real))


def closed_loop_poles(c: ClosedLoopCoeffs) -> np.ndarray:
    """Roots of the characteristic polynomial, sorted by real part."""
    return np.sort_complex(np.roots(c.polynomial()))


def min_damping_ratio(c: ClosedLoopCoeffs) -> float:
    """
    Smallest -Re(s)/|s| over the closed-loop poles.

    A stable loop can still ring: the design gains on Xg = 0.3 pu keep all
    poles in the left half-plane with a damping ratio near 0.15.
    """
    poles = closed_loop_poles(c)
    return float(np.min(-poles.real / np.abs(poles)))


def closed_loop_matrix(c: ClosedLoopCoeffs) -> np.ndarray:
    """A_cl for the state (y, e1, e2) with y' = e1, e1' = e2."""
    return np.array(
        [
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
            [-c.K3, -c.K1, -c.K2],
        ],
        dtype=complex,
    )


def error_trajectory(c: ClosedLoopCoeffs, e0: Sequence[complex],
                     times: Sequence[float]) -> np.ndarray:
    """
    Solution of the linear error system from e0 = (y, e1, e2) at t = 0.

    Returns:
        np.ndarray: complex array of shape (len(times), 3)
    """
    A = closed_loop_matrix(c)
    x0 = np.asarray(e0, dtype=complex)
    if x0.shape != (3,):
        raise ValueError("e0 must hold (y, e1, e2)")
    return np.array([expm(A * t) @ x0 for t in times])


# ============================================================================
# 4. CONSERVATIVE CONDITIONS
# ============================================================================

def conservative_conditions(gains: ControllerGains, L: float, Lg: float, Rg: float,
                            omega: float, envelope: OperatingEnvelope,
                            angle_aware: bool = True) -> ConservativeResult:
    """
    Sufficient stability conditions of the filtered loop over the envelope.

    With kappa_i = 0, K2r of the filtered loop ranges over
    [base - kr(r - 1), base - kr(r cos e_max - 1)] as the angle error spans
    [-e_max, e_max], and |K2i| <= omega Lg/(L+Lg) + kr r |sin e_max|. The
    first margin asks the smallest K2r to exceed k3/k1; the second asks
    (K2r - k3/k1)^2 > (K3/K1^2) |K2i|^2 K2r over the whole range.

    With `angle_aware=False` the K2i bound drops the |sin e_max| factor and
    uses omega Lg/(L+Lg) + kr r, which holds for any angle error. The two
    forms agree at e_max = pi/2; below that the default is less conservative.

    Raises:
        AssumptionViolated: kappa_i != 0 or |e_theta| > pi/2
    """
    if gains.kappa_i != 0:
        raise AssumptionViolated("conservative conditions need kappa_i = 0")
    e_max = abs(envelope.e_theta)
    if e_max > math.pi / 2:
        raise AssumptionViolated("conservative conditions need |e_theta| <= pi/2")

    K1, K3, base = _common(gains, L, Lg, Rg)
    r = envelope.vp_ratio
    kr = gains.kappa_r
    ratio = gains.k3 / gains.k1
    lo = base - kr * (r - 1.0)
    hi = base - kr * (r * math.cos(e_max) - 1.0)
    margin1 = lo - ratio

    spread = abs(math.sin(e_max)) if angle_aware else 1.0
    bound = omega * Lg / (L + Lg) + kr * r * spread
    weight = K3 / K1**2 * bound**2
    # convex in K2r: the minimum is at the vertex or an end of the range
    x = min(max(ratio + 0.5 * weight, lo), hi)
    margin2 = (x - ratio) ** 2 - weight * x

    holds = margin1 > 0 and margin2 > 0
    logger.debug("conservative conditions r=%.3g e=%.3g: %.6g %.6g", r, e_max,
                 margin1, margin2)
    return ConservativeResult(holds=holds, margin1=margin1, margin2=margin2)


# ============================================================================
# 5. IMPEDANCE SWEEPS
# ============================================================================

def impedance_sweep(gains: ControllerGains, L: float, omega: float,
                    Xg_range: Sequence[float], variant: ControllerVariant | str,
                    envelope: OperatingEnvelope, Rg: float = 0.0) -> SweepResult:
    """
    Tabulate the Routh-Hurwitz verdict over the grid reactance.

    Example:
        res = impedance_sweep(gains, 0.02 / omega, omega, np.arange(0, 0.51, 0.01),
                              'filtered', OperatingEnvelope())
        res.first_unstable  # None
    """
    xg = np.asarray(Xg_range, dtype=float)
    if xg.size == 0:
        raise ValueError("Xg_range is empty")
    steps = np.diff(xg)
    if not (np.all(steps > 0) or np.all(steps < 0)):
        raise ValueError("Xg_range must be strictly monotone")
    variant = ControllerVariant(variant)

    rows = []
    for x in xg:
        coeffs = closed_loop_coeffs(variant, gains, L, x / omega, Rg, omega, envelope)
        verdict = routh_hurwitz_complex_cubic(coeffs)
        rows.append({
            "xg": float(x),
            "K1": coeffs.K1,
            "K2r": coeffs.K2r,
            "K2i": coeffs.K2i,
            "K3": coeffs.K3,
            "margin1": verdict.margins[0],
            "margin2": verdict.margins[1],
            "margin3": verdict.margins[2],
            "stable": verdict.stable,
            "max_real_root": max_real_root(coeffs),
        })
    table = pd.DataFrame(rows)
    unstable = table.loc[~table["stable"], "xg"]
    first = float(unstable.iloc[0]) if len(unstable) else None
    if first is None:
        logger.info("%s variant stable over the whole sweep", variant.value)
    else:
        logger.info("%s variant first unstable at Xg = %.4g", variant.value, first)
    return SweepResult(table=table, first_unstable=first)


def sweep_to_csv(result: SweepResult, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    result.table.to_csv(path, index=False)
    return path
