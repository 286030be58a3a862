"""
Tests for stability_analysis: coefficients, the complex Routh-Hurwitz test
against the eigenvalue oracle, conservative conditions and sweeps.
"""

import math

import numpy as np
import pandas as pd
import pytest

from errors import AssumptionViolated
from flatness_controller import ControllerGains, gains_for_grid, gains_from_settling_times
from plant_model import OMEGA_50HZ
from stability_analysis import (
    ClosedLoopCoeffs,
    OperatingEnvelope,
    closed_loop_poles,
    coeffs_filtered,
    coeffs_measured,
    conservative_conditions,
    error_trajectory,
    impedance_sweep,
    max_real_root,
    min_damping_ratio,
    routh_hurwitz_complex_cubic,
    sweep_to_csv,
)

W = OMEGA_50HZ
L = 0.02 / W
LG = 0.3 / W
DESIGN = gains_from_settling_times(1e-3, 1.1e-3, 20e-3, notch_ts=0.05)
ROUNDED_GAINS = ControllerGains(k1=21.25e6, k2=9011.0, k3=4424e6, kappa_r=92.0)


# ---------- coefficients ----------
def test_measured_strong_grid_reduces_to_design():
    c = coeffs_measured(DESIGN, L, 0.0, 0.0, W, OperatingEnvelope())
    assert c.K1 == pytest.approx(DESIGN.k1)
    assert c.K3 == pytest.approx(DESIGN.k3)
    assert c.K2r == pytest.approx(DESIGN.k2)
    assert c.K2i == pytest.approx(0.0, abs=1e-9)


def test_measured_equal_split():
    c = coeffs_measured(DESIGN, L, L, 0.0, W, OperatingEnvelope(theta_dot=0.0))
    assert c.K1 == pytest.approx(DESIGN.k1 / 2)
    assert c.K3 == pytest.approx(DESIGN.k3 / 2)
    assert c.K2i == pytest.approx(-W / 2)


def test_fast_voltage_change_destabilises_measured_loop():
    c = coeffs_measured(ROUNDED_GAINS, L, LG, 0.0, W, OperatingEnvelope(dVp_over_Vp=10000.0))
    assert c.K2r < 0
    assert not routh_hurwitz_complex_cubic(c).stable


def test_filtered_converged_filter():
    c = coeffs_filtered(DESIGN, L, LG, 0.02, W, OperatingEnvelope())
    assert c.K2r == pytest.approx((0.02 + L * DESIGN.k2) / (L + LG))
    assert c.K2i == pytest.approx(W * LG / (L + LG))


def test_filtered_magnitude_mismatch():
    c = coeffs_filtered(ROUNDED_GAINS, L, 0.0, 0.0, W, OperatingEnvelope(vp_ratio=2.0))
    assert c.K2r == pytest.approx(8919.0)


def test_filtered_quadrature_error():
    env = OperatingEnvelope(e_theta=math.pi / 2, vp_ratio=1.5)
    c = coeffs_filtered(ROUNDED_GAINS, L, LG, 0.0, W, env)
    assert c.K2r == pytest.approx(L * 9011.0 / (L + LG) + 92.0)
    assert c.K2i == pytest.approx(W * LG / (L + LG) + 92.0 * 1.5)


def test_envelope_validation():
    with pytest.raises(ValueError):
        OperatingEnvelope(vp_ratio=0.0)


# ---------- Routh-Hurwitz ----------
@pytest.mark.parametrize("K1, K2, K3, stable", [
    (2.0, 3 + 0j, 1.0, True),
    (1.0, 1 + 0j, 2.0, False),
    (2.0, 1 + 10j, 1.0, False),
])
def test_routh_hurwitz_examples(K1, K2, K3, stable):
    c = ClosedLoopCoeffs(K1=K1, K2=K2, K3=K3)
    assert routh_hurwitz_complex_cubic(c).stable is stable
    assert (max_real_root(c) < 0) is stable


def test_third_margin_value():
    verdict = routh_hurwitz_complex_cubic(ClosedLoopCoeffs(K1=2.0, K2=1 + 10j, K3=1.0))
    assert verdict.margins[2] == pytest.approx(-99.0)


def test_routh_hurwitz_matches_eigenvalues():
    """10000 random complex cubics, outside a thin band around the axis."""
    rng = np.random.default_rng(7)
    compared = 0
    for _ in range(10000):
        a, b = rng.uniform(-5.0, 5.0, 2)
        c, d = rng.uniform(1e-3, 10.0, 2)
        coeffs = ClosedLoopCoeffs(K1=c, K2=complex(a, b), K3=d)
        worst = max_real_root(coeffs)
        scale = 1.0 + max(abs(a), abs(b), c, d)
        if abs(worst) < 1e-9 * scale:
            continue
        assert routh_hurwitz_complex_cubic(coeffs).stable is (worst < 0)
        compared += 1
    assert compared > 9900


def test_real_coefficients_reduce_to_classic_routh():
    rng = np.random.default_rng(11)
    for _ in range(1000):
        K1, K2r, K3 = rng.uniform(-2.0, 10.0, 3)
        coeffs = ClosedLoopCoeffs(K1=K1, K2=complex(K2r, 0.0), K3=K3)
        classic = K2r > 0 and K3 > 0 and K1 * K2r > K3
        assert routh_hurwitz_complex_cubic(coeffs).stable == bool(classic)


def test_margins_are_continuous():
    base = ClosedLoopCoeffs(K1=2.0, K2=3 + 0.5j, K3=1.0)
    nudged = ClosedLoopCoeffs(K1=2.0 + 1e-9, K2=3 + 0.5j + 1e-9, K3=1.0 - 1e-9)
    m0 = routh_hurwitz_complex_cubic(base).margins
    m1 = routh_hurwitz_complex_cubic(nudged).margins
    assert m1 == pytest.approx(m0, rel=1e-6)


# ---------- oracles ----------
def test_max_real_root():
    c = ClosedLoopCoeffs(K1=11.0, K2=6 + 0j, K3=6.0)
    assert max_real_root(c) == pytest.approx(-1.0)


def test_closed_loop_poles():
    c = ClosedLoopCoeffs(K1=11.0, K2=6 + 0j, K3=6.0)
    assert closed_loop_poles(c).real.tolist() == pytest.approx([-3.0, -2.0, -1.0])
    assert min_damping_ratio(c) == pytest.approx(1.0)


def test_design_gains_ring_on_weak_grid():
    c = coeffs_filtered(DESIGN, L, LG, 0.0, W, OperatingEnvelope())
    assert routh_hurwitz_complex_cubic(c).stable
    assert 0.1 < min_damping_ratio(c) < 0.15
    assert max_real_root(c) == pytest.approx(-120.6, abs=1.0)


def test_grid_placed_gains_restore_design_loop():
    placed = gains_for_grid(DESIGN, 0.02, 0.3)
    c = coeffs_filtered(placed, L, LG, 0.0, W, OperatingEnvelope())
    assert c.K1 == pytest.approx(DESIGN.k1)
    assert c.K2r == pytest.approx(DESIGN.k2)
    assert c.K3 == pytest.approx(DESIGN.k3)
    assert min_damping_ratio(c) > 0.95
    assert max_real_root(c) == pytest.approx(-230.0, abs=1.0)


def test_error_trajectory_closed_form():
    """(s+1)(s+2)(s+3) driven from y'' = 1."""
    c = ClosedLoopCoeffs(K1=11.0, K2=6 + 0j, K3=6.0)
    times = [0.0, 0.5, 1.0, 2.0]
    traj = error_trajectory(c, (0.0, 0.0, 1.0), times)
    expected = [0.5 * math.exp(-t) - math.exp(-2 * t) + 0.5 * math.exp(-3 * t) for t in times]
    assert traj.shape == (4, 3)
    assert traj[:, 0].real.tolist() == pytest.approx(expected, abs=1e-12)
    assert traj[0].tolist() == pytest.approx([0, 0, 1])


def test_error_trajectory_rejects_bad_state():
    with pytest.raises(ValueError):
        error_trajectory(ClosedLoopCoeffs(1.0, 1 + 0j, 1.0), (1.0, 0.0), [0.0])


# ---------- conservative conditions ----------
def test_conservative_conditions_hold_for_design():
    for r in np.linspace(0.5, 2.0, 16):
        for e in np.linspace(-math.pi / 2, math.pi / 2, 13):
            env = OperatingEnvelope(e_theta=e, vp_ratio=r)
            assert conservative_conditions(ROUNDED_GAINS, L, LG, 0.0, W, env).holds


def test_conservative_conditions_fail_when_notch_matches_k2():
    gains = ControllerGains(k1=21.25e6, k2=9011.0, k3=4424e6, kappa_r=9011.0)
    res = conservative_conditions(gains, L, LG, 0.0, W, OperatingEnvelope(vp_ratio=2.0))
    assert not res.holds
    assert res.margin1 < 0


def test_conservative_conditions_without_mismatch():
    res = conservative_conditions(ROUNDED_GAINS, L, LG, 0.0, W, OperatingEnvelope())
    assert res.margin1 == pytest.approx(L * 9011.0 / (L + LG) - 4424e6 / 21.25e6)


def test_angle_free_bound_matches_at_quadrature():
    env = OperatingEnvelope(e_theta=math.pi / 2, vp_ratio=1.5)
    aware = conservative_conditions(ROUNDED_GAINS, L, LG, 0.0, W, env)
    literal = conservative_conditions(ROUNDED_GAINS, L, LG, 0.0, W, env, angle_aware=False)
    assert literal.margin2 == pytest.approx(aware.margin2)


@pytest.mark.parametrize("e_theta", [0.0, 0.3, 1.0])
def test_angle_free_bound_is_more_conservative(e_theta):
    env = OperatingEnvelope(e_theta=e_theta, vp_ratio=1.5)
    aware = conservative_conditions(ROUNDED_GAINS, L, LG, 0.0, W, env)
    literal = conservative_conditions(ROUNDED_GAINS, L, LG, 0.0, W, env, angle_aware=False)
    assert literal.margin1 == aware.margin1
    assert literal.margin2 < aware.margin2


def test_conservative_conditions_assumptions():
    with pytest.raises(AssumptionViolated):
        conservative_conditions(ControllerGains(1.0, 1.0, 1.0, kappa_i=1.0), L, LG, 0.0,
                                W, OperatingEnvelope())
    with pytest.raises(AssumptionViolated):
        conservative_conditions(ROUNDED_GAINS, L, LG, 0.0, W,
                                OperatingEnvelope(e_theta=2.0))


def test_conservative_conditions_are_sufficient():
    """Whenever they hold, every angle inside the envelope is stable."""
    rng = np.random.default_rng(3)
    held = 0
    for _ in range(2000):
        ts = rng.uniform(5e-4, 3e-2, 3)
        gains = gains_from_settling_times(*ts, notch_ts=rng.uniform(5e-3, 0.2))
        Lg = rng.uniform(0.0, 1.0) / W
        env = OperatingEnvelope(e_theta=rng.uniform(0.0, math.pi / 2),
                                vp_ratio=rng.uniform(0.3, 3.0))
        if not conservative_conditions(gains, L, Lg, 0.0, W, env).holds:
            continue
        held += 1
        for e in np.linspace(-env.e_theta, env.e_theta, 7):
            actual = OperatingEnvelope(e_theta=e, vp_ratio=env.vp_ratio)
            assert routh_hurwitz_complex_cubic(
                coeffs_filtered(gains, L, Lg, 0.0, W, actual)
            ).stable
    assert held > 0


# ---------- sweeps ----------
def test_filtered_sweep_stable_up_to_half_pu():
    xg = np.arange(0.0, 0.5001, 0.01)
    res = impedance_sweep(DESIGN, L, W, xg, "filtered", OperatingEnvelope())
    assert res.first_unstable is None
    assert res.table["stable"].all()


def test_filtered_sweep_boundary_matches_oracle():
    xg = np.arange(0.0, 1.0001, 0.01)
    res = impedance_sweep(DESIGN, L, W, xg, "filtered", OperatingEnvelope())
    table = res.table
    assert (table["stable"] == (table["max_real_root"] < 0)).all()
    assert 0.5 < res.first_unstable < 0.85
    assert not table["stable"].iloc[-1]


def test_measured_sweep_with_fast_voltage_is_unstable():
    env = OperatingEnvelope(dVp_over_Vp=2 * DESIGN.k2)
    res = impedance_sweep(DESIGN, L, W, np.linspace(0.0, 1.0, 21), "measured", env)
    assert not res.table["stable"].any()
    assert res.first_unstable == 0.0


@pytest.mark.parametrize("variant", ["measured", "filtered"])
def test_strong_grid_is_stable(variant):
    res = impedance_sweep(DESIGN, L, W, [0.0], variant, OperatingEnvelope())
    assert bool(res.table["stable"].iloc[0])


def test_sweep_rejects_unordered_range(tmp_path):
    with pytest.raises(ValueError):
        impedance_sweep(DESIGN, L, W, [0.1, 0.0, 0.2], "filtered", OperatingEnvelope())
    res = impedance_sweep(DESIGN, L, W, [0.0, 0.1, 0.2], "filtered", OperatingEnvelope())
    df = pd.read_csv(sweep_to_csv(res, tmp_path / "sweep.csv"))
    assert list(df["xg"]) == [0.0, 0.1, 0.2]
    assert {"K2r", "K2i", "margin3", "stable", "max_real_root"} <= set(df.columns)
