"""
Scenario Harness
================
Runs plant + controller + notch filter at their own rates from a JSON
scenario, applies timed reference events and records a decimated trace.

- Scenario schema (pydantic) and loading with field-path errors
- Multi-rate simulation loop with divergence detection
- CSV emission / reading and trace summaries
- Steady-state cross-check against the closed-form limits

Example:
    cfg = load_config_file("scenarios/strong_grid_steps.json")
    trace = run_scenario(cfg)
    emit_csv(trace, "outputs/strong_grid_steps.csv")
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from config import SETTINGS
from errors import (
    ConfigError,
    DivergenceDetected,
    EmptyTraceError,
    InvariantError,
    NonPositiveDcLink,
    SchemaError,
    SingularImpedance,
    ZeroFilteredVoltage,
    ZeroPccVoltage,
)
from flatness_controller import (
    DEFAULT_DELTA_P,
    ControllerGains,
    ControllerVariant,
    FlatnessController,
    ReferencePrefilter,
    ReferenceSet,
    gains_for_grid,
    gains_from_settling_times,
    notch_gain_from_settling_time,
)
from plant_model import (
    OMEGA_50HZ,
    PlantInput,
    PlantParams,
    PlantState,
    grid_voltage,
    integrate_step,
    pcc_voltage,
    power_at_pcc,
    saturate_modulation,
)
from ss_limits import GridImpedance, PowerPoint, current_mag_sq, pcc_mag_sq
from utils import relative_error

logger = logging.getLogger(__name__)

TRACE_COLUMNS = [
    "t",
    "i_alpha", "i_beta", "i_mag",
    "vp_alpha", "vp_beta", "vp_mag",
    "vhat_alpha", "vhat_beta",
    "vc", "vc_scaled",
    "p", "q", "p_r", "q_r", "p_i",
    "mu_alpha", "mu_beta", "mu_mag", "mu_raw_mag",
    "saturated",
]

SQRT2 = math.sqrt(2.0)


# ============================================================================
# 1. SCENARIO SCHEMA
# ============================================================================

class PlantSpec(BaseModel):
    """Plant constants; give L or xl, and at most one of Lg / xg and omega / f."""

    model_config = ConfigDict(extra="forbid")

    L: float | None = Field(None, gt=0, description="Filter inductance (pu·s)")
    xl: float | None = Field(None, gt=0, description="Filter reactance (pu)")
    Lg: float | None = Field(None, ge=0, description="Grid inductance (pu·s)")
    xg: float | None = Field(None, ge=0, description="Grid reactance (pu)")
    rg: float = Field(0.0, ge=0, description="Grid resistance (pu)")
    C: float = Field(gt=0, description="DC-link capacitance (pu·s)")
    omega: float | None = Field(None, gt=0, description="Grid angular frequency (rad/s)")
    f: float | None = Field(None, gt=0, description="Grid frequency (Hz)")
    vg_mag: float = Field(1.0, gt=0, description="Grid voltage magnitude (pu)")

    @model_validator(mode="after")
    def _check_pairs(self) -> PlantSpec:
        if (self.L is None) == (self.xl is None):
            raise ValueError("give exactly one of L and xl")
        if self.Lg is not None and self.xg is not None:
            raise ValueError("give at most one of Lg and xg")
        if self.omega is not None and self.f is not None:
            raise ValueError("give at most one of omega and f")
        return self

    @property
    def angular_frequency(self) -> float:
        if self.omega is not None:
            return self.omega
        if self.f is not None:
            return 2.0 * math.pi * self.f
        return OMEGA_50HZ

    def to_params(self) -> PlantParams:
        w = self.angular_frequency
        L = self.L if self.L is not None else self.xl / w
        if self.Lg is not None:
            Lg = self.Lg
        elif self.xg is not None:
            Lg = self.xg / w
        else:
            Lg = 0.0
        return PlantParams(L=L, C=self.C, Lg=Lg, Rg=self.rg, omega=w, vg_mag=self.vg_mag)


class GainSpec(BaseModel):
    """Either settling times or explicit k1..k3; optional notch gain."""

    model_config = ConfigDict(extra="forbid")

    settling_times: tuple[float, float, float] | None = None
    k1: float | None = Field(None, gt=0)
    k2: float | None = Field(None, gt=0)
    k3: float | None = Field(None, gt=0)
    notch_settling_time: float | None = Field(None, gt=0)
    kappa_r: float | None = Field(None, ge=0)
    kappa_i: float = 0.0
    delta_p: float = Field(DEFAULT_DELTA_P, gt=0)
    design_xg: float = Field(0.0, ge=0,
                             description="Grid reactance the poles are placed for (pu)")
    reference_settling_time: float | None = Field(
        None, gt=0, description="Prefilter on q_r and vcr; unfiltered if omitted (s)")

    @model_validator(mode="after")
    def _check_source(self) -> GainSpec:
        explicit = [k is not None for k in (self.k1, self.k2, self.k3)]
        if self.settling_times is not None:
            if any(explicit):
                raise ValueError("give settling_times or k1..k3, not both")
            if min(self.settling_times) <= 0:
                raise ValueError("settling times must be positive")
        elif not all(explicit):
            raise ValueError("give settling_times or all of k1, k2, k3")
        if self.notch_settling_time is not None and self.kappa_r is not None:
            raise ValueError("give notch_settling_time or kappa_r, not both")
        return self

    def to_gains(self, xl: float | None = None) -> ControllerGains:
        """Resolve the gains; `xl` is required when `design_xg` is set."""
        if self.design_xg > 0 and xl is None:
            raise ValueError("design_xg needs the filter reactance xl")
        if self.settling_times is not None:
            base = gains_from_settling_times(*self.settling_times, delta_p=self.delta_p)
            k1, k2, k3 = base.k1, base.k2, base.k3
        else:
            k1, k2, k3 = self.k1, self.k2, self.k3
        if self.notch_settling_time is not None:
            kappa_r = notch_gain_from_settling_time(self.notch_settling_time)
        else:
            kappa_r = self.kappa_r or 0.0
        gains = ControllerGains(k1=k1, k2=k2, k3=k3, delta_p=self.delta_p,
                                kappa_r=kappa_r, kappa_i=self.kappa_i)
        if self.design_xg > 0:
            gains = gains_for_grid(gains, xl, self.design_xg)
        return gains


class RateSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    dt_plant: float = Field(default_factory=lambda: SETTINGS.dt_plant, gt=0)
    ts_ctrl: float = Field(default_factory=lambda: SETTINGS.ts_ctrl, gt=0)
    decimation: int = Field(default_factory=lambda: SETTINGS.decimation, ge=1,
                            description="Plant steps per trace row")

    @property
    def substeps(self) -> int:
        return int(round(self.ts_ctrl / self.dt_plant))


class LimitSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    divergence_current: float = Field(default_factory=lambda: SETTINGS.divergence_current,
                                      gt=0)
    divergence_vc: float = Field(default_factory=lambda: SETTINGS.divergence_vc, gt=0)


class InitialSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    vcr: float = Field(gt=0, description="DC-link voltage reference (pu)")
    q_r: float = 0.0
    p_i: float = 0.0
    vc: float | None = Field(None, gt=0, description="Initial DC-link voltage; vcr if omitted")
    phase: float = 0.0


class Event(BaseModel):
    model_config = ConfigDict(extra="forbid")

    time: float = Field(ge=0)
    target: Literal["p_i", "q_r", "vcr"]
    value: float
    mode: Literal["step", "ramp"] = "step"
    ramp_time: float | None = Field(None, gt=0)

    @model_validator(mode="after")
    def _check_ramp(self) -> Event:
        if self.mode == "ramp" and self.ramp_time is None:
            raise ValueError("ramp events need ramp_time")
        return self


class ScenarioConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str = "scenario"
    plant: PlantSpec
    gains: GainSpec
    variant: ControllerVariant = ControllerVariant.FILTERED
    rates: RateSpec = Field(default_factory=RateSpec)
    duration: float
    initial: InitialSpec
    events: list[Event] = Field(default_factory=list)
    limits: LimitSpec = Field(default_factory=LimitSpec)


# ============================================================================
# 2. LOADING
# ============================================================================

def _error_path(loc) -> str:
    return ".".join(str(part) for part in loc)


def check_invariants(cfg: ScenarioConfig) -> ScenarioConfig:
    """
    Cross-field checks the schema cannot express.

    Raises:
        InvariantError: on the first violated invariant
    """
    if not cfg.duration > 0:
        raise InvariantError(f"duration must be positive, got {cfg.duration}")
    dt, ts = cfg.rates.dt_plant, cfg.rates.ts_ctrl
    if dt > ts:
        raise InvariantError(f"dt_plant {dt} is larger than ts_ctrl {ts}")
    if abs(cfg.rates.substeps * dt - ts) > 1e-9 * ts:
        raise InvariantError("ts_ctrl must be an integer multiple of dt_plant")
    if cfg.duration < dt:
        raise InvariantError("duration is shorter than one plant step")
    times = [e.time for e in cfg.events]
    if times != sorted(times):
        raise InvariantError("events must be sorted by time")
    for idx, event in enumerate(cfg.events):
        if event.time > cfg.duration:
            raise InvariantError(f"events.{idx}: time {event.time} is after the end")
        if event.target == "vcr" and not event.value > 0:
            raise InvariantError(f"events.{idx}: vcr must stay positive")
    return cfg


def load_config(text: str) -> ScenarioConfig:
    """
    Parse and validate a JSON scenario.

    Raises:
        SchemaError: malformed JSON or a field that fails the schema
        InvariantError: a cross-field invariant is broken
    """
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError("", f"invalid JSON: {exc}") from exc
    try:
        cfg = ScenarioConfig.model_validate(data)
    except ValidationError as exc:
        first = exc.errors()[0]
        raise SchemaError(_error_path(first["loc"]), first["msg"]) from exc
    return check_invariants(cfg)


def load_config_file(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read scenario {path}: {exc}") from exc
    return load_config(text)


# ============================================================================
# 3. SIMULATION
# ============================================================================

@dataclass
class SimTrace:
    frame: pd.DataFrame
    stable: bool = True
    reason: str | None = None
    name: str = "scenario"

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def final(self) -> pd.Series:
        return self.frame.iloc[-1]


@dataclass
class _Track:
    """One reference with optional linear ramp, evaluated at controller ticks."""

    value: float
    slope: float = 0.0
    origin: float = 0.0
    target: float = 0.0
    start_tick: int = 0
    end_tick: int = -1

    def apply(self, event: Event, tick: int, ts: float) -> None:
        if event.mode == "step":
            self.value, self.slope, self.end_tick = event.value, 0.0, -1
            return
        n = max(1, math.ceil(event.ramp_time / ts - 1e-9))
        self.origin, self.target = self.value, event.value
        self.start_tick, self.end_tick = tick, tick + n
        self.slope = (event.value - self.value) / (n * ts)

    def at(self, tick: int, ts: float) -> tuple[float, float]:
        if self.end_tick < 0:
            return self.value, 0.0
        if tick >= self.end_tick:
            self.value, self.slope, self.end_tick = self.target, 0.0, -1
            return self.value, 0.0
        self.value = self.origin + self.slope * (tick - self.start_tick) * ts
        return self.value, self.slope


def event_tick(time: float, ts: float) -> int:
    """First controller tick at or after `time`."""
    return max(0, math.ceil(time / ts - 1e-9))


def _divergence_reason(state: PlantState, limits: LimitSpec) -> str | None:
    if not (math.isfinite(state.i.real) and math.isfinite(state.i.imag)
            and math.isfinite(state.vc)):
        return "non-finite state"
    if abs(state.i) > limits.divergence_current:
        return f"|i| = {abs(state.i):.4g} pu above {limits.divergence_current}"
    if state.vc <= 0:
        return f"DC-link voltage collapsed to {state.vc:.4g}"
    if state.vc >= limits.divergence_vc:
        return f"DC-link overvoltage {state.vc:.4g} pu"
    return None


@dataclass
class _Tick:
    """What one controller evaluation holds until the next."""

    inp: PlantInput
    mu_raw_mag: float
    vhat: complex
    p_r: float
    refs: ReferenceSet
    saturated: bool


def _frame(rows: list[tuple]) -> pd.DataFrame:
    frame = pd.DataFrame(rows, columns=TRACE_COLUMNS)
    frame["saturated"] = frame["saturated"].astype(bool)
    return frame


def run_scenario(cfg: ScenarioConfig) -> SimTrace:
    """
    Simulate a scenario.

    The controller runs every ts_ctrl with zero-order-held mu; the plant is
    sub-stepped with RK4 at dt_plant. A trace row is taken every `decimation`
    plant steps and at the end, always with the mu applied from that instant:
    a final row on a tick boundary gets its own controller evaluation.

    Raises:
        DivergenceDetected: the run left the valid region (partial trace attached)
    """
    params = cfg.plant.to_params()
    gains = cfg.gains.to_gains(xl=params.omega * params.L)
    dt, ts = cfg.rates.dt_plant, cfg.rates.ts_ctrl
    n_sub, dec = cfg.rates.substeps, cfg.rates.decimation
    n_total = int(round(cfg.duration / dt))
    limits = cfg.limits

    logger.info("scenario %s: %s variant, Xg=%.4g Rg=%.4g, %.4g s",
                cfg.name, cfg.variant.value, params.Xg, params.Rg, cfg.duration)
    if cfg.gains.design_xg > 0:
        logger.info("gains placed for Xg=%.4g: k1=%.4g k2=%.4g k3=%.4g",
                    cfg.gains.design_xg, gains.k1, gains.k2, gains.k3)

    init = cfg.initial
    tracks = {"p_i": _Track(init.p_i), "q_r": _Track(init.q_r), "vcr": _Track(init.vcr)}
    prefilters: dict[str, ReferencePrefilter] = {}
    if cfg.gains.reference_settling_time is not None:
        prefilters = {
            name: ReferencePrefilter(tracks[name].value, cfg.gains.reference_settling_time)
            for name in ("q_r", "vcr")
        }
    pending = [(event_tick(e.time, ts), e) for e in cfg.events]

    vc0 = init.vc if init.vc is not None else init.vcr
    state = PlantState(i=0j, vc=vc0, phase=init.phase)
    # held modulation that puts the PCC exactly on the grid voltage
    mu = grid_voltage(state, params) / vc0
    ctrl = FlatnessController(gains, cfg.variant, L=params.L, C=params.C,
                              omega=params.omega, ts=ts)
    ctrl.reset(vhat_p=pcc_voltage(state, PlantInput(mu, init.p_i), params))

    rows: list[tuple] = []
    step = tick = n_saturated = 0
    saturated = False

    def diverged(t: float, reason: str) -> DivergenceDetected:
        logger.warning("scenario %s diverged at t=%.6f s: %s", cfg.name, t, reason)
        trace = SimTrace(frame=_frame(rows), stable=False, reason=reason, name=cfg.name)
        return DivergenceDetected(trace, t, reason)

    def reference(name: str) -> tuple[float, float]:
        value, rate = tracks[name].at(tick, ts)
        if name in prefilters:
            return prefilters[name].step(value, ts)
        return value, rate

    def controller_tick() -> _Tick:
        nonlocal n_saturated, saturated
        t_tick = step * dt
        while pending and pending[0][0] <= tick:
            _, event = pending.pop(0)
            tracks[event.target].apply(event, tick, ts)
            logger.info("t=%.6f s: %s %s -> %.4g", t_tick, event.mode, event.target,
                        event.value)
        p_i, dp_i = reference("p_i")
        qr, dqr = reference("q_r")
        vcr, dvcr = reference("vcr")
        refs = ReferenceSet(vcr=vcr, qr=qr, p_i=p_i, dvcr=dvcr, dqr=dqr, dp_i=dp_i)

        v_p = pcc_voltage(state, PlantInput(mu, p_i), params)
        vhat_tick, p_r_tick = ctrl.state.vhat_p, ctrl.state.p_r
        try:
            out = ctrl.step(state.i, state.vc, v_p, refs)
        except (ZeroPccVoltage, ZeroFilteredVoltage, NonPositiveDcLink) as exc:
            raise diverged(t_tick, str(exc)) from exc
        if not (math.isfinite(out.mu.real) and math.isfinite(out.mu.imag)):
            raise diverged(t_tick, "non-finite modulation index")

        held, sat = saturate_modulation(out.mu)
        if sat:
            n_saturated += 1
            if not saturated:
                logger.info("t=%.6f s: modulation saturated (|mu| = %.4f)", t_tick,
                            abs(out.mu))
        saturated = sat
        return _Tick(PlantInput(held, p_i), abs(out.mu), vhat_tick, p_r_tick, refs, sat)

    def record(t: float, held: _Tick) -> None:
        inp = held.inp
        v_p = pcc_voltage(state, inp, params)
        s = power_at_pcc(v_p, state.i)
        rows.append((
            t,
            state.i.real, state.i.imag, abs(state.i),
            v_p.real, v_p.imag, abs(v_p),
            held.vhat.real, held.vhat.imag,
            state.vc, state.vc / SQRT2,
            s.real, s.imag, held.p_r, held.refs.qr, held.refs.p_i,
            inp.mu.real, inp.mu.imag, abs(inp.mu), held.mu_raw_mag,
            held.saturated,
        ))

    while step < n_total:
        held = controller_tick()
        mu = held.inp.mu
        for _ in range(min(n_sub, n_total - step)):
            if step % dec == 0:
                record(step * dt, held)
            try:
                state = integrate_step(state, held.inp, params, dt)
            except NonPositiveDcLink as exc:
                raise diverged((step + 1) * dt, str(exc)) from exc
            step += 1
            reason = _divergence_reason(state, limits)
            if reason is not None:
                raise diverged(step * dt, reason)
        tick += 1

    if step % dec == 0:
        if step % n_sub == 0:
            held = controller_tick()
        record(step * dt, held)

    if n_saturated:
        logger.info("scenario %s: %d saturated controller ticks", cfg.name, n_saturated)
    return SimTrace(frame=_frame(rows), name=cfg.name)


# ============================================================================
# 4. TRACE I/O
# ============================================================================

def emit_csv(trace: SimTrace, path) -> Path:
    """
    Write a trace as CSV with full double precision.

    Raises:
        EmptyTraceError: the trace has no rows
    """
    if trace.frame.empty:
        raise EmptyTraceError("cannot write an empty trace")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    trace.frame[TRACE_COLUMNS].to_csv(path, index=False)
    logger.info("wrote %d rows to %s", len(trace.frame), path)
    return path


def read_csv(path) -> SimTrace:
    frame = pd.read_csv(path, float_precision="round_trip")
    missing = [c for c in TRACE_COLUMNS if c not in frame.columns]
    if missing:
        raise ValueError(f"not a trace file, missing columns: {missing}")
    frame["saturated"] = frame["saturated"].astype(bool)
    return SimTrace(frame=frame[TRACE_COLUMNS], name=Path(path).stem)


# ============================================================================
# 5. TRACE ANALYSIS
# ============================================================================

def summarize_trace(trace: SimTrace) -> dict:
    if trace.frame.empty:
        raise EmptyTraceError("cannot summarise an empty trace")
    df = trace.frame
    last = df.iloc[-1]
    return {
        "name": trace.name,
        "stable": trace.stable,
        "reason": trace.reason,
        "t_end": float(last["t"]),
        "p": float(last["p"]),
        "q": float(last["q"]),
        "vc": float(last["vc"]),
        "i_mag": float(last["i_mag"]),
        "vp_mag": float(last["vp_mag"]),
        "max_i_mag": float(df["i_mag"].max()),
        "max_vp_mag": float(df["vp_mag"].max()),
        "saturated_rows": int(df["saturated"].sum()),
    }


def settling_time(trace: SimTrace, column: str, target: float, tol: float,
                  after: float = 0.0) -> float | None:
    """
    Time after `after` from which `column` stays within tol of target.

    Returns:
        float | None: seconds since `after`, or None if the last sample is
        still outside the band
    """
    df = trace.frame[trace.frame["t"] >= after]
    if df.empty:
        return None
    outside = (df[column] - target).abs() > tol
    if outside.iloc[-1]:
        return None
    if not outside.any():
        return float(df["t"].iloc[0] - after)
    last_out = outside[outside].index[-1]
    pos = df.index.get_loc(last_out) + 1
    return float(df["t"].iloc[pos] - after)


def steady_state_check(trace: SimTrace, cfg: ScenarioConfig) -> dict:
    """
    Compare the final |i|^2 and |v_p|^2 with the closed-form steady state at
    the achieved (p, q).
    """
    params = cfg.plant.to_params()
    last = trace.final
    pt = PowerPoint(float(last["p"]), float(last["q"]))
    z = GridImpedance(Rg=params.Rg, Xg=params.Xg, vg_mag=params.vg_mag)
    try:
        i_sq_pred = current_mag_sq(pt, z)
    except SingularImpedance:
        i_sq_pred = abs(pt.s) ** 2 / params.vg_mag**2
    vp_sq_pred = pcc_mag_sq(pt, z)
    i_sq = float(last["i_mag"]) ** 2
    vp_sq = float(last["vp_mag"]) ** 2
    return {
        "i_sq": i_sq,
        "i_sq_predicted": i_sq_pred,
        "i_sq_rel_error": relative_error(i_sq, i_sq_pred),
        "vp_sq": vp_sq,
        "vp_sq_predicted": vp_sq_pred,
        "vp_sq_rel_error": relative_error(vp_sq, vp_sq_pred),
    }
