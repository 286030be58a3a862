"""
Flatness-Based Complex Power Controller
=======================================
Feedback-linearizing controller for the grid-feeding inverter, written in the
flat coordinates

    xi1 = 1/2 (L|i|^2 + C vc^2) + j*eta      (complex energy)
    xi2 = p_i - conj(v) * i                  (complex power balance)

in which the plant is a chain of integrators. Two variants share one law:

- measured: v is the measured PCC voltage v_p
- filtered: v is the notch-filtered estimate vhat_p, which keeps the
  grid-impedance feedback out of the loop in weak grids

The controller only knows the filter inductance L; the grid impedance is
what the error dynamics see as a disturbance.
"""

from __future__ import annotations

import cmath
import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from errors import NonPositiveDcLink, ZeroFilteredVoltage, ZeroPccVoltage
from plant_model import ComplexSV

logger = logging.getLogger(__name__)

# 2 % settling band of a first-order pole
SETTLING_FACTOR = 4.6

DEFAULT_DELTA_P = 0.01


class ControllerVariant(str, Enum):
    MEASURED = "measured"
    FILTERED = "filtered"


# ============================================================================
# 1. DATA TYPES
# ============================================================================

@dataclass(frozen=True)
class ControllerGains:
    """Error-dynamics gains, reference regularisation and notch gain."""

    k1: float
    k2: float
    k3: float
    delta_p: float = DEFAULT_DELTA_P
    kappa_r: float = 0.0
    kappa_i: float = 0.0

    def __post_init__(self):
        if min(self.k1, self.k2, self.k3) <= 0:
            raise ValueError("k1, k2 and k3 must be positive")
        if self.delta_p <= 0:
            raise ValueError("delta_p must be positive")
        if self.kappa_r < 0:
            raise ValueError("kappa_r must be non-negative")

    @property
    def kappa(self) -> complex:
        return complex(self.kappa_r, self.kappa_i)


@dataclass
class ControllerState:
    y: ComplexSV = 0j
    eta_err: float = 0.0
    p_r: float = 0.0
    vhat_p: ComplexSV = 0j


@dataclass(frozen=True)
class ReferenceSet:
    """
    Operator references and their time derivatives at one controller tick.

    dp_i is kept for completeness; the control law is independent of it.
    """

    vcr: float
    qr: float = 0.0
    p_i: float = 0.0
    dvcr: float = 0.0
    dqr: float = 0.0
    dp_i: float = 0.0

    def __post_init__(self):
        if not self.vcr > 0:
            raise ValueError("vcr must be positive")


@dataclass(frozen=True)
class FlatCoords:
    xi1: ComplexSV
    xi2: ComplexSV


@dataclass(frozen=True)
class ReferenceOutputs:
    """Reference trajectory in flat coordinates for one tick."""

    xi1r: ComplexSV
    xi2r: ComplexSV
    dp_r: float
    dqr: float
    dp_i: float
    p_r_next: float
    i_ref_sq: float

    @property
    def dxi2r(self) -> ComplexSV:
        return complex(self.dp_i - self.dp_r, self.dqr)


@dataclass(frozen=True)
class ControlOutput:
    mu: ComplexSV
    e1: ComplexSV
    e2: ComplexSV
    refs: ReferenceOutputs
    v_used: ComplexSV


# ============================================================================
# 2. GAIN DESIGN
# ============================================================================

def gains_from_settling_times(ts1: float, ts2: float, ts3: float,
                              delta_p: float = DEFAULT_DELTA_P,
                              notch_ts: float | None = None) -> ControllerGains:
    """
    Place three real poles -4.6/ts_i on s^3 + k2 s^2 + k1 s + k3.

    Args:
        ts1, ts2, ts3 (float): Settling times in seconds
        delta_p (float): Reference-power regularisation (pu)
        notch_ts (float): Optional notch settling time; kappa_r = 0 when omitted

    Returns:
        ControllerGains: k1, k2, k3 (and kappa_r when notch_ts is given)

    Example:
        gains_from_settling_times(1e-3, 1.1e-3, 20e-3)  # k1 ~ 21.25e6
    """
    settling = (ts1, ts2, ts3)
    if min(settling) <= 0:
        raise ValueError("settling times must be positive")
    poles = [-SETTLING_FACTOR / ts for ts in settling]
    _, k2, k1, k3 = np.real(np.poly(poles))
    kappa_r = notch_gain_from_settling_time(notch_ts) if notch_ts is not None else 0.0
    return ControllerGains(k1=float(k1), k2=float(k2), k3=float(k3),
                           delta_p=delta_p, kappa_r=kappa_r)


def notch_gain_from_settling_time(ts: float) -> float:
    """kappa_r = 4.6 / ts (kappa_i = 0)."""
    if ts <= 0:
        raise ValueError("settling time must be positive")
    return SETTLING_FACTOR / ts


def gains_for_grid(gains: ControllerGains, xl: float, xg: float) -> ControllerGains:
    """
    Scale k1..k3 so the filtered loop on a grid of reactance xg has the
    characteristic polynomial the gains were placed for.

    The law only inverts the filter inductance, so behind a grid reactance the
    closed-loop coefficients become K = L*k / (L + Lg). With xg = 0 the gains
    are returned unchanged.

    Example:
        gains_for_grid(gains_from_settling_times(1e-3, 1.1e-3, 20e-3), 0.02, 0.3)
        # k1, k2, k3 multiplied by 16
    """
    if xl <= 0:
        raise ValueError("xl must be positive")
    if xg < 0:
        raise ValueError("xg must be non-negative")
    scale = (xl + xg) / xl
    return replace(gains, k1=gains.k1 * scale, k2=gains.k2 * scale, k3=gains.k3 * scale)


@dataclass
class ReferencePrefilter:
    """
    First-order shaping of an operator reference (q_r or vcr).

    A step in q_r enters xi2r directly; through the prefilter it arrives with
    a finite derivative that the law can feed forward. `step` returns the
    value to use this tick and the tick-average rate towards the next one.
    """

    value: float
    settling_time: float

    def __post_init__(self):
        if self.settling_time <= 0:
            raise ValueError("settling time must be positive")

    def step(self, target: float, dt: float) -> tuple[float, float]:
        if dt <= 0:
            raise ValueError("dt must be positive")
        decay = math.exp(-SETTLING_FACTOR * dt / self.settling_time)
        current = self.value
        self.value = target + (current - target) * decay
        return current, (self.value - current) / dt


# ============================================================================
# 3. NOTCH FILTER
# ============================================================================

def notch_step(vhat_p: ComplexSV, v_p: ComplexSV, kappa: complex, omega: float,
               dt: float) -> ComplexSV:
    """
    One step of dvhat/dt = j*omega*vhat + kappa*(v_p - vhat).

    Exact when v_p rotates at +omega over the step, so a filter that starts on
    a positive-sequence input stays on it and the error to it decays as
    exp(-kappa*t). With kappa = 0 this is a free oscillator at omega.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    err = (vhat_p - v_p) * cmath.exp(-kappa * dt)
    return cmath.exp(1j * omega * dt) * (v_p + err)


# ============================================================================
# 4. FLAT COORDINATES AND REFERENCES
# ============================================================================

def build_flat_coords(i: ComplexSV, vc: float, v_used: ComplexSV, p_i: float,
                      eta_imag: float, L: float, C: float) -> FlatCoords:
    xi1 = complex(0.5 * (L * abs(i) ** 2 + C * vc**2), eta_imag)
    xi2 = p_i - v_used.conjugate() * i
    return FlatCoords(xi1=xi1, xi2=xi2)


def _power_target(refs: ReferenceSet, v_mag_sq: float, L: float, C: float) -> float:
    return refs.p_i - C * refs.dvcr * refs.vcr - L * refs.dqr * refs.qr / v_mag_sq


def _power_gain(p_r: float, v_mag_sq: float, L: float, delta_p: float) -> float:
    return v_mag_sq / (L * (abs(p_r) + delta_p))


def reference_power_rate(p_r: float, refs: ReferenceSet, v_used_mag: float, L: float,
                         C: float, delta_p: float = DEFAULT_DELTA_P) -> float:
    """
    Instantaneous dp_r/dt that keeps the energy reference consistent with the
    power balance reference.

    Example:
        reference_power_rate(0.0, ReferenceSet(vcr=1.8, p_i=0.1), 1.0,
                             6.366e-5, 48e-6)  # ~1.571e5 pu/s
    """
    if not v_used_mag > 0:
        raise ValueError("voltage magnitude must be positive")
    v2 = v_used_mag**2
    return _power_gain(p_r, v2, L, delta_p) * (_power_target(refs, v2, L, C) - p_r)


def update_references(refs: ReferenceSet, state: ControllerState, v_used_mag: float,
                      L: float, C: float, dt: float,
                      delta_p: float = DEFAULT_DELTA_P) -> ReferenceOutputs:
    """
    Reference trajectory in flat coordinates and the next p_r.

    p_r is advanced with the exact solution of its linear ODE with the
    coefficients frozen over the tick; the feed-forward dp_r is the tick
    average (p_r_next - p_r)/dt. xi1r carries no imaginary part because
    only the eta error integral is stored.

    Args:
        refs (ReferenceSet): vcr, q_r, p_i and derivatives
        state (ControllerState): Current controller state (p_r is read)
        v_used_mag (float): |v_p| or |vhat_p| depending on the variant
        L, C (float): Filter inductance and DC-link capacitance
        dt (float): Controller period

    Returns:
        ReferenceOutputs: xi1r, xi2r, dp_r, next p_r and |i_r|^2
    """
    if not v_used_mag > 0:
        raise ValueError("voltage magnitude must be positive")
    if dt <= 0:
        raise ValueError("dt must be positive")
    v2 = v_used_mag**2
    p_r = state.p_r
    target = _power_target(refs, v2, L, C)
    decay = math.exp(-_power_gain(p_r, v2, L, delta_p) * dt)
    p_r_next = target + (p_r - target) * decay

    i_ref_sq = (p_r**2 + refs.qr**2) / v2
    xi1r = complex(0.5 * (L * i_ref_sq + C * refs.vcr**2), 0.0)
    xi2r = complex(refs.p_i - p_r, refs.qr)
    return ReferenceOutputs(
        xi1r=xi1r,
        xi2r=xi2r,
        dp_r=(p_r_next - p_r) / dt,
        dqr=refs.dqr,
        dp_i=refs.dp_i,
        p_r_next=p_r_next,
        i_ref_sq=i_ref_sq,
    )


# ============================================================================
# 5. CONTROL LAWS
# ============================================================================

def _modulation_law(flat: FlatCoords, ref_out: ReferenceOutputs, gains: ControllerGains,
                    state: ControllerState, i: ComplexSV, vc: float, v: ComplexSV,
                    omega: float, L: float) -> ComplexSV:
    # dp_i enters both u and the inversion; it is cancelled analytically
    e1 = flat.xi1 - ref_out.xi1r
    e2 = flat.xi2 - ref_out.xi2r
    dp_i_minus_u = (
        complex(ref_out.dp_r, -ref_out.dqr)
        + gains.k1 * e1
        + gains.k2 * e2
        + gains.k3 * state.y
    )
    v_conj = v.conjugate()
    return (L * (dp_i_minus_u + 1j * omega * v_conj * i) + abs(v) ** 2) / (v_conj * vc)


def control_measured(flat: FlatCoords, ref_out: ReferenceOutputs, gains: ControllerGains,
                     state: ControllerState, i: ComplexSV, vc: float, v_p: ComplexSV,
                     omega: float, L: float) -> ComplexSV:
    """
    Modulation index from the measured PCC voltage.

    Raises:
        ZeroPccVoltage: |v_p| = 0
        NonPositiveDcLink: vc <= 0
    """
    if v_p == 0:
        raise ZeroPccVoltage("measured PCC voltage is zero")
    if not vc > 0:
        raise NonPositiveDcLink(f"DC-link voltage is {vc!r}")
    return _modulation_law(flat, ref_out, gains, state, i, vc, v_p, omega, L)


def control_filtered(flat: FlatCoords, ref_out: ReferenceOutputs, gains: ControllerGains,
                     state: ControllerState, i: ComplexSV, vc: float, vhat_p: ComplexSV,
                     omega: float, L: float) -> ComplexSV:
    """
    Modulation index from the notch-filtered PCC voltage; v_p does not enter.

    Raises:
        ZeroFilteredVoltage: |vhat_p| = 0
        NonPositiveDcLink: vc <= 0
    """
    if vhat_p == 0:
        raise ZeroFilteredVoltage("filtered PCC voltage is zero")
    if not vc > 0:
        raise NonPositiveDcLink(f"DC-link voltage is {vc!r}")
    return _modulation_law(flat, ref_out, gains, state, i, vc, vhat_p, omega, L)


# ============================================================================
# 6. CONTROLLER
# ============================================================================

@dataclass
class FlatnessController:
    """
    Discrete controller running every `ts` seconds.

    A tick reads (i, vc, v_p), computes mu with the states as they stand,
    then advances the error integrals, p_r and the notch. The notch runs in
    both variants; only the filtered one feeds it to the law.

    Example:
        ctrl = FlatnessController(gains, ControllerVariant.FILTERED,
                                  L=0.02 / omega, C=48e-6, omega=omega, ts=5e-5)
        ctrl.reset(vhat_p=1.0 + 0j)
        out = ctrl.step(i, vc, v_p, ReferenceSet(vcr=1.84))
    """

    gains: ControllerGains
    variant: ControllerVariant
    L: float
    C: float
    omega: float
    ts: float
    state: ControllerState = field(default_factory=ControllerState)

    def __post_init__(self):
        self.variant = ControllerVariant(self.variant)
        if self.L <= 0 or self.C <= 0:
            raise ValueError("L and C must be positive")
        if self.ts <= 0:
            raise ValueError("controller period must be positive")

    def reset(self, vhat_p: ComplexSV, p_r: float = 0.0) -> None:
        self.state = ControllerState(y=0j, eta_err=0.0, p_r=p_r, vhat_p=vhat_p)

    def step(self, i: ComplexSV, vc: float, v_p: ComplexSV,
             refs: ReferenceSet) -> ControlOutput:
        st = self.state
        filtered = self.variant is ControllerVariant.FILTERED
        v_used = st.vhat_p if filtered else v_p
        if v_used == 0:
            raise (ZeroFilteredVoltage if filtered else ZeroPccVoltage)(
                f"{self.variant.value} voltage is zero"
            )

        flat = build_flat_coords(i, vc, v_used, refs.p_i, st.eta_err, self.L, self.C)
        ref_out = update_references(refs, st, abs(v_used), self.L, self.C, self.ts,
                                    self.gains.delta_p)
        law = control_filtered if filtered else control_measured
        mu = law(flat, ref_out, self.gains, st, i, vc, v_used, self.omega, self.L)

        e1 = flat.xi1 - ref_out.xi1r
        e2 = flat.xi2 - ref_out.xi2r
        q_used = (v_used * i.conjugate()).imag
        self.state = replace(
            st,
            y=st.y + self.ts * e1,
            eta_err=st.eta_err + self.ts * (q_used - refs.qr),
            p_r=ref_out.p_r_next,
            vhat_p=notch_step(st.vhat_p, v_p, self.gains.kappa, self.omega, self.ts),
        )
        return ControlOutput(mu=mu, e1=e1, e2=e2, refs=ref_out, v_used=v_used)
