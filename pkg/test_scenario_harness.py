"""
Tests for scenario_harness: schema loading, the multi-rate loop on the
reference scenarios, trace I/O and trace analysis.
"""

import copy
import json
import math
from pathlib import Path

import pandas as pd
import pytest

from errors import (
    ConfigError,
    DivergenceDetected,
    EmptyTraceError,
    InvariantError,
    SchemaError,
)
from plant_model import MU_MAX, OMEGA_50HZ
from scenario_harness import (
    TRACE_COLUMNS,
    ScenarioConfig,
    SimTrace,
    emit_csv,
    event_tick,
    load_config,
    load_config_file,
    read_csv,
    run_scenario,
    settling_time,
    steady_state_check,
    summarize_trace,
)

SCENARIOS = Path(__file__).parent / "scenarios"
VCR = 1.8384776310850235

BASE = {
    "name": "short",
    "plant": {"xl": 0.02, "C": 4.8e-05},
    "gains": {"settling_times": [0.001, 0.0011, 0.02], "notch_settling_time": 0.05},
    "rates": {"dt_plant": 5e-06, "ts_ctrl": 5e-05, "decimation": 10},
    "duration": 0.005,
    "initial": {"vcr": VCR},
    "events": [{"time": 0.001, "target": "p_i", "value": 0.3}],
}


def _cfg(**changes) -> str:
    data = copy.deepcopy(BASE)
    data.update(changes)
    return json.dumps(data)


def _at(trace: SimTrace, t: float) -> pd.Series:
    df = trace.frame
    return df.loc[(df["t"] - t).abs().idxmin()]


def _window(trace: SimTrace, start: float, end: float) -> SimTrace:
    df = trace.frame
    return SimTrace(frame=df[(df["t"] >= start) & (df["t"] < end)], name=trace.name)


# ---------- fixtures ----------
@pytest.fixture(scope="module")
def strong_grid_steps():
    return run_scenario(load_config_file(SCENARIOS / "strong_grid_steps.json"))


@pytest.fixture(scope="module")
def weak_cfg():
    return load_config_file(SCENARIOS / "weak_grid_filtered.json")


@pytest.fixture(scope="module")
def weak_grid_filtered(weak_cfg):
    return run_scenario(weak_cfg)


@pytest.fixture(scope="module")
def ramp():
    return run_scenario(load_config_file(SCENARIOS / "ramp_measured.json"))


@pytest.fixture(scope="module")
def short():
    return run_scenario(load_config(_cfg()))


# ---------- schema ----------
def test_load_config_defaults():
    cfg = load_config(_cfg(rates={}))
    assert cfg.variant.value == "filtered"
    assert cfg.rates.dt_plant > 0 and cfg.rates.substeps >= 1
    assert cfg.limits.divergence_current > 0
    assert cfg.initial.q_r == 0.0 and cfg.initial.vc is None


def test_plant_spec_to_params():
    params = load_config(_cfg(plant={"xl": 0.02, "xg": 0.3, "rg": 0.05, "C": 4.8e-5,
                                     "f": 50.0})).plant.to_params()
    assert params.L == pytest.approx(0.02 / OMEGA_50HZ)
    assert params.Xg == pytest.approx(0.3)
    assert params.Rg == 0.05


def test_gain_spec_to_gains():
    gains = load_config(_cfg()).gains.to_gains()
    assert gains.kappa_r == pytest.approx(92.0)
    assert gains.k2 == pytest.approx(4.6 / 1e-3 + 4.6 / 1.1e-3 + 4.6 / 0.02)
    explicit = load_config(_cfg(gains={"k1": 1.0, "k2": 2.0, "k3": 0.5})).gains.to_gains()
    assert (explicit.k1, explicit.k2, explicit.k3, explicit.kappa_r) == (1.0, 2.0, 0.5, 0.0)


def test_gain_spec_places_gains_for_grid():
    gain_spec = load_config(_cfg(gains={"settling_times": [0.001, 0.0011, 0.02],
                                        "design_xg": 0.3})).gains
    base = gain_spec.model_copy(update={"design_xg": 0.0}).to_gains()
    placed = gain_spec.to_gains(xl=0.02)
    assert placed.k1 == pytest.approx(16 * base.k1)
    assert placed.k3 == pytest.approx(16 * base.k3)
    with pytest.raises(ValueError):
        gain_spec.to_gains()


@pytest.mark.parametrize("changes, path", [
    ({"events": [{"time": 0.001, "target": "x", "value": 1.0}]}, "events.0.target"),
    ({"plant": {"xl": 0.02, "C": 4.8e-05, "foo": 1}}, "plant.foo"),
    ({"plant": {"xl": 0.02, "L": 1e-4, "C": 4.8e-05}}, "plant"),
    ({"plant": {"xl": 0.02}}, "plant.C"),
    ({"gains": {"settling_times": [0.001, 0.002, 0.02], "k1": 1.0}}, "gains"),
    ({"gains": {"settling_times": [0.001, 0.002, 0.02], "design_xg": -0.1}},
     "gains.design_xg"),
    ({"gains": {"settling_times": [0.001, 0.002, 0.02], "reference_settling_time": 0}},
     "gains.reference_settling_time"),
    ({"events": [{"time": 0.001, "target": "p_i", "value": 1.0, "mode": "ramp"}]},
     "events.0"),
])
def test_schema_errors_name_the_field(changes, path):
    with pytest.raises(SchemaError) as info:
        load_config(_cfg(**changes))
    assert info.value.path == path


def test_invalid_json():
    with pytest.raises(SchemaError) as info:
        load_config("{not json")
    assert info.value.path == ""
    assert "invalid JSON" in str(info.value)


@pytest.mark.parametrize("changes", [
    {"duration": 0.0},
    {"duration": 1e-6},
    {"rates": {"dt_plant": 1e-4, "ts_ctrl": 5e-5}},
    {"rates": {"dt_plant": 3e-6, "ts_ctrl": 5e-5}},
    {"events": [{"time": 0.002, "target": "p_i", "value": 0.1},
                {"time": 0.001, "target": "q_r", "value": 0.1}]},
    {"events": [{"time": 0.01, "target": "p_i", "value": 0.1}]},
    {"events": [{"time": 0.001, "target": "vcr", "value": 0.0}]},
])
def test_invariant_errors(changes):
    with pytest.raises(InvariantError):
        load_config(_cfg(**changes))


def test_missing_file_is_config_error(tmp_path):
    with pytest.raises(ConfigError):
        load_config_file(tmp_path / "absent.json")


@pytest.mark.parametrize(
    "name", ["strong_grid_steps", "weak_grid_filtered", "weak_grid_measured", "ramp_measured"]
)
def test_shipped_scenarios_load(name):
    cfg = load_config_file(SCENARIOS / f"{name}.json")
    assert isinstance(cfg, ScenarioConfig)
    assert cfg.name == name


def test_event_tick():
    assert event_tick(0.0, 5e-5) == 0
    assert event_tick(0.01, 5e-5) == 200
    assert event_tick(1.2e-4, 5e-5) == 3


# ---------- reference scenarios ----------
def test_strong_grid_steps_row_count_and_columns(strong_grid_steps):
    assert list(strong_grid_steps.frame.columns) == TRACE_COLUMNS
    assert len(strong_grid_steps) == 6001
    assert strong_grid_steps.frame["t"].iloc[-1] == pytest.approx(0.3)
    assert strong_grid_steps.stable


def test_strong_grid_steps_settles_active_power(strong_grid_steps):
    before_q_step = _window(strong_grid_steps, 0.0, 0.11)
    assert settling_time(before_q_step, "p", 0.707, 0.01, after=0.01) <= 0.02
    assert settling_time(before_q_step, "q", 0.0, 0.01, after=0.01) <= 0.02


def test_strong_grid_steps_settles_reactive_power(strong_grid_steps):
    assert settling_time(strong_grid_steps, "q", 0.707, 0.01, after=0.11) <= 0.02
    assert settling_time(strong_grid_steps, "p", 0.707, 0.01, after=0.11) <= 0.02
    assert strong_grid_steps.final["vc"] == pytest.approx(VCR, rel=1e-2)


def test_weak_grid_stays_inside_modulation_bound(weak_grid_filtered):
    assert weak_grid_filtered.stable
    df = weak_grid_filtered.frame
    assert (df["vp_mag"] < df["vc_scaled"]).all()
    # only the hard input-power step drives the modulator into its limit
    saturated_t = df.loc[df["saturated"], "t"]
    assert ((saturated_t >= 0.01) & (saturated_t < 0.0115)).all()
    assert _at(weak_grid_filtered, 0.1099)["p"] == pytest.approx(0.707, abs=0.02)
    tail = df[df["t"] >= 0.21]
    assert (tail["p"] - 0.707).abs().max() < 0.02
    assert (tail["q"] - 0.707).abs().max() < 0.02


def test_saturation_flag_matches_unclipped_modulation(weak_grid_filtered):
    df = weak_grid_filtered.frame
    assert df["saturated"].any()
    assert (df["saturated"] == (df["mu_raw_mag"] > MU_MAX)).all()
    assert (df["mu_mag"] <= MU_MAX + 1e-12).all()
    unclipped = df[~df["saturated"]]
    assert (unclipped["mu_mag"] - unclipped["mu_raw_mag"]).abs().max() < 1e-12


def test_final_row_uses_the_modulation_applied_from_it(weak_grid_filtered):
    df = weak_grid_filtered.frame
    last, previous = df.iloc[-1], df.iloc[-2]
    assert last["p"] == pytest.approx(previous["p"], abs=1e-3)
    assert last["mu_mag"] == pytest.approx(previous["mu_mag"], abs=1e-3)


def test_weak_grid_reactive_reference_is_prefiltered(weak_grid_filtered):
    assert _at(weak_grid_filtered, 0.1099)["q_r"] == 0.0
    expected = 0.707 * (1.0 - math.exp(-4.6 * 0.005 / 0.02))
    assert _at(weak_grid_filtered, 0.115)["q_r"] == pytest.approx(expected, rel=1e-9)
    assert weak_grid_filtered.final["q_r"] == pytest.approx(0.707, abs=1e-6)


def test_weak_grid_matches_closed_form_steady_state(weak_grid_filtered, weak_cfg):
    check = steady_state_check(weak_grid_filtered, weak_cfg)
    assert check["i_sq_rel_error"] < 0.01
    assert check["vp_sq_rel_error"] < 0.01


def test_measured_variant_diverges_on_weak_grid(weak_cfg):
    cfg = load_config_file(SCENARIOS / "weak_grid_measured.json")
    assert cfg.variant.value == "measured"
    assert cfg.model_dump(exclude={"name", "variant"}) == weak_cfg.model_dump(
        exclude={"name", "variant"})
    with pytest.raises(DivergenceDetected) as info:
        run_scenario(cfg)
    exc = info.value
    assert exc.time < cfg.duration
    assert not exc.trace.stable
    assert exc.trace.reason == exc.reason
    assert len(exc.trace) > 0


def test_ramp_reference(ramp):
    assert _at(ramp, 0.02)["p_i"] == pytest.approx(0.3535, abs=1e-9)
    assert _at(ramp, 0.005)["p_i"] == 0.0
    assert _at(ramp, 0.05)["p_i"] == pytest.approx(0.707)
    assert ramp.final["p"] == pytest.approx(0.707, abs=0.02)
    assert ramp.final["q"] == pytest.approx(0.5, abs=0.02)


# ---------- trace I/O ----------
def test_csv_round_trip_is_exact(short, tmp_path):
    path = emit_csv(short, tmp_path / "out" / "short.csv")
    back = read_csv(path)
    pd.testing.assert_frame_equal(back.frame, short.frame, check_exact=True)
    assert back.name == "short"


def test_emit_empty_trace(tmp_path):
    empty = SimTrace(frame=pd.DataFrame(columns=TRACE_COLUMNS))
    with pytest.raises(EmptyTraceError):
        emit_csv(empty, tmp_path / "empty.csv")
    with pytest.raises(EmptyTraceError):
        summarize_trace(empty)


def test_read_csv_rejects_foreign_file(tmp_path):
    path = tmp_path / "other.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        read_csv(path)


def test_runs_are_deterministic(short):
    again = run_scenario(load_config(_cfg()))
    pd.testing.assert_frame_equal(again.frame, short.frame, check_exact=True)


def test_short_run_shape(short):
    # 1000 plant steps, one row per 10 plus the final row
    assert len(short) == 101
    assert short.frame["t"].is_monotonic_increasing
    assert _at(short, 0.0)["vp_mag"] == pytest.approx(1.0, abs=1e-12)
    assert _at(short, 0.002)["p_i"] == 0.3


# ---------- analysis ----------
def test_summarize_trace(short):
    summary = summarize_trace(short)
    assert summary["name"] == "short"
    assert summary["stable"] is True
    assert summary["t_end"] == pytest.approx(0.005)
    assert summary["max_i_mag"] >= summary["i_mag"]
    assert summary["saturated_rows"] == int(short.frame["saturated"].sum())


def test_settling_time():
    frame = pd.DataFrame({"t": [0.0, 1.0, 2.0, 3.0, 4.0],
                          "p": [0.0, 0.5, 0.95, 1.2, 1.05]})
    trace = SimTrace(frame=frame)
    assert settling_time(trace, "p", 1.0, 0.1) == 4.0
    assert settling_time(trace, "p", 1.0, 0.1, after=1.5) == 2.5
    assert settling_time(trace, "p", 1.0, 0.25, after=2.0) == 0.0
    assert settling_time(trace, "p", 0.0, 0.1) is None
    assert settling_time(trace, "p", 1.0, 0.1, after=10.0) is None


def test_steady_state_check_on_strong_grid(short):
    check = steady_state_check(short, load_config(_cfg()))
    last = short.final
    expected = (last["p"] ** 2 + last["q"] ** 2) / 1.0
    assert check["i_sq_predicted"] == pytest.approx(expected)
    assert check["vp_sq_predicted"] == pytest.approx(1.0)
    assert math.isfinite(check["i_sq_rel_error"])
