"""
Average model of the grid-feeding inverter
==========================================
Inverter + L filter + weak grid (R_g, L_g) + ideal positive-sequence grid
source, written with complex space vectors, plus a fixed-step RK4 integrator.

All quantities are per unit; inductances and capacitances are in pu·s.
Space vectors are plain Python ``complex`` values: ``abs(z)`` is the magnitude
and ``cmath.phase(z)`` the angle in (-pi, pi].
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from typing import TypeAlias

from errors import NonPositiveDcLink

ComplexSV: TypeAlias = complex

# SVM bound on the modulation index magnitude
MU_MAX = 1.0 / math.sqrt(2.0)

OMEGA_50HZ = 2.0 * math.pi * 50.0


# ============================================================================
# 1. DATA TYPES
# ============================================================================

@dataclass(frozen=True, slots=True)
class PlantParams:
    """Electrical constants of the inverter, filter and grid (pu)."""

    L: float
    C: float
    Lg: float = 0.0
    Rg: float = 0.0
    omega: float = OMEGA_50HZ
    vg_mag: float = 1.0

    def __post_init__(self):
        if self.L <= 0 or self.C <= 0:
            raise ValueError("L and C must be positive")
        if self.Lg < 0 or self.Rg < 0:
            raise ValueError("Lg and Rg must be non-negative")
        if self.omega <= 0:
            raise ValueError("omega must be positive")
        # zero is allowed for open-circuit checks of the filter dynamics
        if self.vg_mag < 0:
            raise ValueError("vg_mag must be non-negative")

    @classmethod
    def from_reactances(cls, xl: float, C: float, xg: float = 0.0, rg: float = 0.0,
                        omega: float = OMEGA_50HZ, vg_mag: float = 1.0) -> PlantParams:
        """
        Build parameters from reactances at the grid frequency.

        Args:
            xl (float): Filter reactance ωL (pu)
            C (float): DC-link capacitance (pu·s)
            xg (float): Grid reactance ωLg (pu)
            rg (float): Grid resistance (pu)

        Example:
            PlantParams.from_reactances(0.02, 48e-6, xg=0.3)
        """
        return cls(L=xl / omega, C=C, Lg=xg / omega, Rg=rg, omega=omega, vg_mag=vg_mag)

    @property
    def Xg(self) -> float:
        return self.omega * self.Lg

    @property
    def L_total(self) -> float:
        return self.L + self.Lg


@dataclass(frozen=True, slots=True)
class PlantState:
    """Physical state: injected current, DC-link voltage, grid source angle."""

    i: ComplexSV
    vc: float
    phase: float = 0.0


@dataclass(frozen=True, slots=True)
class PlantInput:
    mu: ComplexSV
    p_i: float


@dataclass(frozen=True, slots=True)
class PlantDerivative:
    di: ComplexSV
    dvc: float
    dphase: float


# ============================================================================
# 2. MODEL EQUATIONS
# ============================================================================

def grid_voltage(state: PlantState, params: PlantParams) -> ComplexSV:
    """Positive-sequence grid voltage vg_mag * e^{j*phase}."""
    return cmath.rect(params.vg_mag, state.phase)


def plant_derivative(state: PlantState, inp: PlantInput,
                     params: PlantParams) -> PlantDerivative:
    """
    Time derivative of the plant state.

    (L+Lg) di/dt = vc*mu - vg - Rg*i
    C dvc/dt     = p_i/vc - Re{mu * conj(i)}
    dphase/dt    = omega

    Raises:
        NonPositiveDcLink: if vc <= 0
    """
    vc = state.vc
    if not vc > 0:
        raise NonPositiveDcLink(f"DC-link voltage is {vc!r}")
    vg = cmath.rect(params.vg_mag, state.phase)
    mu = inp.mu
    i = state.i
    di = (vc * mu - vg - params.Rg * i) / (params.L + params.Lg)
    dvc = (inp.p_i / vc - (mu * i.conjugate()).real) / params.C
    return PlantDerivative(di=di, dvc=dvc, dphase=params.omega)


def pcc_voltage(state: PlantState, inp: PlantInput, params: PlantParams) -> ComplexSV:
    """
    Algebraic PCC voltage: (Lg*vc*mu + L*(vg + Rg*i)) / (L + Lg).

    With Lg = Rg = 0 this is the grid voltage itself.
    """
    vg = grid_voltage(state, params)
    if params.Lg == 0.0 and params.Rg == 0.0:
        return vg
    return (params.Lg * state.vc * inp.mu + params.L * (vg + params.Rg * state.i)) / (
        params.L + params.Lg
    )


def power_at_pcc(v_p: ComplexSV, i: ComplexSV) -> ComplexSV:
    """Instantaneous complex power s = v_p * conj(i) = p + jq."""
    return v_p * i.conjugate()


def stored_energy(state: PlantState, params: PlantParams) -> float:
    """Energy in the filter + grid inductance and the DC link."""
    return 0.5 * params.L_total * abs(state.i) ** 2 + 0.5 * params.C * state.vc**2


def saturate_modulation(mu: ComplexSV) -> tuple[ComplexSV, bool]:
    """
    Clip |mu| to the SVM bound, preserving the angle.

    Returns:
        tuple: (clipped mu, True if clipping happened)
    """
    mag = abs(mu)
    if mag > MU_MAX:
        return mu * (MU_MAX / mag), True
    return mu, False


# ============================================================================
# 3. INTEGRATION
# ============================================================================

def _advance(state: PlantState, d: PlantDerivative, h: float) -> PlantState:
    return PlantState(state.i + h * d.di, state.vc + h * d.dvc, state.phase + h * d.dphase)


def integrate_step(state: PlantState, inp: PlantInput, params: PlantParams,
                   dt: float) -> PlantState:
    """
    Advance the plant by one classic RK4 step with the input held constant.

    Args:
        state (PlantState): State at the start of the step
        inp (PlantInput): Zero-order-held modulation index and input power
        params (PlantParams): Electrical constants
        dt (float): Step length in seconds

    Returns:
        PlantState: State at the end of the step

    Raises:
        NonPositiveDcLink: if any stage sees vc <= 0
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    k1 = plant_derivative(state, inp, params)
    k2 = plant_derivative(_advance(state, k1, 0.5 * dt), inp, params)
    k3 = plant_derivative(_advance(state, k2, 0.5 * dt), inp, params)
    k4 = plant_derivative(_advance(state, k3, dt), inp, params)
    w = dt / 6.0
    return PlantState(
        i=state.i + w * (k1.di + 2.0 * k2.di + 2.0 * k3.di + k4.di),
        vc=state.vc + w * (k1.dvc + 2.0 * k2.dvc + 2.0 * k3.dvc + k4.dvc),
        phase=state.phase + params.omega * dt,
    )
