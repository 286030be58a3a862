"""
Flat Power command line
=======================
    python main.py simulate scenarios/strong_grid_steps.json -o outputs/strong_grid_steps.csv
    python main.py limits --kind inductive --p 0.707,0.9,1.0 --vc 1.8385 --imax 1
    python main.py gains --ts 0.001,0.0011,0.020 --notch-ts 0.05
    python main.py stability --variant filtered --xg 0.3
    python main.py sweep --xg 0:1:0.01 --variant filtered -o outputs/sweep.csv
    python main.py schema

Exit codes: 0 success, 1 analysis error, 2 configuration / usage error,
3 simulation diverged.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

from config import SETTINGS
from errors import ConfigError, DivergenceDetected, FlatPowerError
from flatness_controller import (
    ControllerGains,
    gains_from_settling_times,
    notch_gain_from_settling_time,
)
from scenario_harness import (
    ScenarioConfig,
    emit_csv,
    load_config_file,
    run_scenario,
    steady_state_check,
    summarize_trace,
)
from ss_limits import GridImpedance, region_frame, region_to_csv, scan_region
from stability_analysis import (
    OperatingEnvelope,
    closed_loop_coeffs,
    conservative_conditions,
    impedance_sweep,
    max_real_root,
    routh_hurwitz_complex_cubic,
    sweep_to_csv,
)
from utils import format_mapping, format_percentage, parse_float_list, parse_range

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ANALYSIS = 1
EXIT_CONFIG = 2
EXIT_DIVERGED = 3

DEFAULT_TS = "0.001,0.0011,0.020"
DEFAULT_NOTCH_TS = 0.05


# ============================================================================
# 1. PARSER
# ============================================================================

def _loop_parent() -> argparse.ArgumentParser:
    """Gain, plant and envelope flags shared by `stability` and `sweep`."""
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--variant", choices=["measured", "filtered"], default="filtered")
    parent.add_argument("--ts", type=parse_float_list, default=None,
                        help=f"settling times t1,t2,t3 in s (default {DEFAULT_TS})")
    parent.add_argument("--k1", type=float)
    parent.add_argument("--k2", type=float)
    parent.add_argument("--k3", type=float)
    parent.add_argument("--notch-ts", type=float, default=None,
                        help=f"notch settling time in s (default {DEFAULT_NOTCH_TS})")
    parent.add_argument("--kappa-r", type=float, default=None)
    parent.add_argument("--kappa-i", type=float, default=0.0)
    parent.add_argument("--delta-p", type=float, default=0.01)
    parent.add_argument("--xl", type=float, default=0.02, help="filter reactance (pu)")
    parent.add_argument("--rg", type=float, default=0.0, help="grid resistance (pu)")
    parent.add_argument("--f", type=float, default=50.0, help="grid frequency (Hz)")
    parent.add_argument("--e-theta", type=float, default=0.0, help="angle error bound (rad)")
    parent.add_argument("--vp-ratio", type=float, default=1.0, help="|v_p|/|vhat_p| bound")
    parent.add_argument("--dvp-over-vp", type=float, default=0.0,
                        help="relative rate of |v_p| (1/s), measured variant")
    parent.add_argument("--theta-dot", type=float, default=None,
                        help="angular speed of v_p (rad/s); omega if omitted")
    return parent


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flatpower",
        description="Flatness-based complex power control of grid-feeding inverters",
    )
    parser.add_argument("-v", "--verbose", action="count", default=0,
                        help="-v for INFO, -vv for DEBUG logging")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a JSON scenario")
    sim.add_argument("config", type=Path)
    sim.add_argument("-o", "--output", type=Path, default=None, help="trace CSV; a bare file name goes to FLATPOWER_OUTPUT_DIR")

    lim = sub.add_parser("limits", help="steady-state region curves")
    lim.add_argument("--kind", choices=["inductive", "resistive"], required=True)
    fixed = lim.add_mutually_exclusive_group(required=True)
    fixed.add_argument("--p", type=parse_float_list, help="fixed p values (inductive)")
    fixed.add_argument("--q", type=parse_float_list, help="fixed q values (resistive)")
    lim.add_argument("--vc", type=float, required=True, help="DC-link voltage (pu)")
    lim.add_argument("--imax", type=float, required=True, help="current limit (pu)")
    lim.add_argument("--vg", type=float, default=1.0, help="grid voltage (pu)")
    lim.add_argument("--axis", type=parse_range, default=parse_range("0.01:1:0.01"),
                     help="impedance axis lo:hi:step (pu)")
    lim.add_argument("-o", "--output", type=Path, default=None)

    gains = sub.add_parser("gains", help="gains from settling times")
    gains.add_argument("--ts", type=parse_float_list, required=True)
    gains.add_argument("--notch-ts", type=float, default=None)

    parent = _loop_parent()
    stab = sub.add_parser("stability", parents=[parent], help="closed-loop verdict")
    stab.add_argument("--xg", type=float, default=0.0, help="grid reactance (pu)")

    sweep = sub.add_parser("sweep", parents=[parent], help="verdict over grid reactance")
    sweep.add_argument("--xg", type=parse_range, required=True, help="lo:hi:step (pu)")
    sweep.add_argument("-o", "--output", type=Path, default=None)

    sub.add_parser("schema", help="print the scenario JSON schema")
    return parser


def configure_logging(verbosity: int) -> None:
    level = {0: SETTINGS.log_level, 1: "INFO"}.get(verbosity, "DEBUG")
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


# ============================================================================
# 2. SUBCOMMANDS
# ============================================================================

def _gains_from_args(args) -> ControllerGains:
    explicit = [args.k1, args.k2, args.k3]
    if any(k is not None for k in explicit):
        if None in explicit or args.ts is not None:
            raise ConfigError("give all of --k1 --k2 --k3, or --ts")
        k1, k2, k3 = explicit
    else:
        ts = args.ts or parse_float_list(DEFAULT_TS)
        if len(ts) != 3:
            raise ConfigError("--ts needs three settling times")
        base = gains_from_settling_times(*ts)
        k1, k2, k3 = base.k1, base.k2, base.k3
    if args.kappa_r is not None:
        kappa_r = args.kappa_r
    else:
        kappa_r = notch_gain_from_settling_time(args.notch_ts or DEFAULT_NOTCH_TS)
    return ControllerGains(k1=k1, k2=k2, k3=k3, delta_p=args.delta_p,
                           kappa_r=kappa_r, kappa_i=args.kappa_i)


def _envelope_from_args(args) -> OperatingEnvelope:
    return OperatingEnvelope(e_theta=args.e_theta, vp_ratio=args.vp_ratio,
                             dVp_over_Vp=args.dvp_over_vp, theta_dot=args.theta_dot)


def _output_path(path: Path | None) -> Path | None:
    """A bare file name lands in SETTINGS.output_dir; paths with a directory stay."""
    if path is None or path.is_absolute() or path.parent != Path("."):
        return path
    return Path(SETTINGS.output_dir) / path


def cmd_simulate(args) -> int:
    cfg = load_config_file(args.config)
    output = _output_path(args.output)
    try:
        trace = run_scenario(cfg)
    except DivergenceDetected as exc:
        print(f"DIVERGED at t={exc.time:.6f} s: {exc.reason}")
        if output is not None and len(exc.trace):
            emit_csv(exc.trace, output)
            print(f"partial trace -> {output}")
        return EXIT_DIVERGED

    summary = summarize_trace(trace)
    ss = steady_state_check(trace, cfg)
    summary["ss |i|^2 error"] = format_percentage(ss["i_sq_rel_error"])
    summary["ss |v_p|^2 error"] = format_percentage(ss["vp_sq_rel_error"])
    print(format_mapping(summary))
    if output is not None:
        emit_csv(trace, output)
        print(f"trace -> {output}")
    return EXIT_OK


def cmd_limits(args) -> int:
    fixed = args.p if args.kind == "inductive" else args.q
    output = _output_path(args.output)
    if fixed is None:
        raise ConfigError(f"{args.kind} grids need --{'p' if args.kind == 'inductive' else 'q'}")
    families = scan_region(args.axis, fixed, args.kind, GridImpedance(vg_mag=args.vg),
                           args.vc, args.imax)
    if output is None:
        region_frame(families).to_csv(sys.stdout, index=False, na_rep="NaN")
        return EXIT_OK
    region_to_csv(families, output)
    for curves in families:
        print(f"{args.kind} fixed={curves.fixed:g}: touch point {curves.touch_point:.6g}")
    print(f"region -> {output}")
    return EXIT_OK


def cmd_gains(args) -> int:
    if len(args.ts) != 3:
        raise ConfigError("--ts needs three settling times")
    gains = gains_from_settling_times(*args.ts, notch_ts=args.notch_ts)
    out = {"k1": gains.k1, "k2": gains.k2, "k3": gains.k3}
    if args.notch_ts is not None:
        out["kappa_r"] = gains.kappa_r
    print(format_mapping(out))
    return EXIT_OK


def cmd_stability(args) -> int:
    gains = _gains_from_args(args)
    envelope = _envelope_from_args(args)
    omega = 2.0 * math.pi * args.f
    L, Lg = args.xl / omega, args.xg / omega
    coeffs = closed_loop_coeffs(args.variant, gains, L, Lg, args.rg, omega, envelope)
    verdict = routh_hurwitz_complex_cubic(coeffs)
    out = {
        "variant": args.variant,
        "K1": coeffs.K1,
        "K2r": coeffs.K2r,
        "K2i": coeffs.K2i,
        "K3": coeffs.K3,
        "margin1": verdict.margins[0],
        "margin2": verdict.margins[1],
        "margin3": verdict.margins[2],
        "stable": verdict.stable,
        "max real root": max_real_root(coeffs),
    }
    if args.variant == "filtered" and gains.kappa_i == 0 and abs(args.e_theta) <= math.pi / 2:
        cons = conservative_conditions(gains, L, Lg, args.rg, omega, envelope)
        out["conservative holds"] = cons.holds
        out["conservative margin1"] = cons.margin1
        out["conservative margin2"] = cons.margin2
    print(format_mapping(out))
    return EXIT_OK


def cmd_sweep(args) -> int:
    output = _output_path(args.output)
    gains = _gains_from_args(args)
    omega = 2.0 * math.pi * args.f
    result = impedance_sweep(gains, args.xl / omega, omega, args.xg, args.variant,
                             _envelope_from_args(args), Rg=args.rg)
    if output is None:
        result.table.to_csv(sys.stdout, index=False)
    else:
        sweep_to_csv(result, output)
        print(f"sweep -> {output}")
    first = "none" if result.first_unstable is None else f"{result.first_unstable:g}"
    print(f"first unstable Xg: {first}", file=sys.stderr)
    return EXIT_OK


def cmd_schema(args) -> int:
    print(json.dumps(ScenarioConfig.model_json_schema(), indent=2))
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "limits": cmd_limits,
    "gains": cmd_gains,
    "stability": cmd_stability,
    "sweep": cmd_sweep,
    "schema": cmd_schema,
}


# ============================================================================
# 3. ENTRY POINT
# ============================================================================

def cli_main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    configure_logging(args.verbose)

    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FlatPowerError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ANALYSIS


if __name__ == "__main__":
    sys.exit(cli_main())
