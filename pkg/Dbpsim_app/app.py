"""Command line entry point.

    python Dbpsim_app/app.py simulate --config configs/desk_scale.conf --out run.csv
    python Dbpsim_app/app.py sweep --policy dbp --values 1 2 4 --parallel 4 --out dbp.csv
    python Dbpsim_app/app.py bounds --config configs/desk_scale.conf --json

Exit codes: 0 success, 1 validation, 2 runtime, 3 numerical regime.
"""

import argparse
import dataclasses
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from Dbpsim_app import create_app
from exceptions import ConfigError, DbpSimError
from models import TradeoffPoint
from phy import quality_curve, required_power_curve
from selftest import MC_DRAWS, run_selftest
from services.export import export, write_plot_data, write_table
from simulation import csit_error_sweep, drift_check, run, sweep
from vcts import compute_bounds

logger = logging.getLogger(__name__)

# V marks of the reference tradeoff curves
DEFAULT_V_VALUES = (1, 2, 4, 6, 10, 15, 25, 40)
CURVE_RATES = (0.5, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0)
CURVE_SIGMA_E2 = (0.01, 0.05, 0.1, 0.2, 0.3)
CURVE_TARGET_PER = (0.1, 0.01, 0.001)
CURVE_DRAWS = 20_000


def _emit(args, payload, text_lines):
    if args.json:
        print(json.dumps(payload, indent=2, default=_json_default))
    else:
        for line in text_lines:
            print(line)


def _json_default(value):
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return str(value)


def _apply_overrides(config, args):
    changes = {}
    if args.slots is not None:
        changes["n_slots"] = args.slots
    if args.seed is not None:
        changes["seed"] = args.seed
    return config.with_mc(**changes) if changes else config


def _write_points(points, args):
    if args.out is None:
        return []
    path = export(points, args.format, args.out)
    return [str(path), str(write_plot_data(points, args.out))]


def cmd_simulate(app, args):
    config = app.config
    stats = run(config, track_fifo=args.fifo)
    bounds = None
    if config.policy.kind == "dbp":
        try:
            bounds = compute_bounds(config)
        except DbpSimError as exc:
            logger.warning(f"No analytical bounds for this point: {exc}")
    point = TradeoffPoint(
        policy=config.policy.kind,
        sweep_param=config.policy.sweep_param,
        stats=stats,
        bounds=bounds,
        config_hash=config.config_hash,
        sigma_e2=config.sigma_e2,
        p_cct=config.p_cct,
    )
    written = _write_points([point], args)
    lines = [f"{key}: {value}" for key, value in dataclasses.asdict(stats).items()]
    if bounds is not None:
        lines.append(f"delay_upper_s: {bounds.delay_upper:.6g}")
        lines.append(f"power_lower: {bounds.power_lower:.6g}")
    lines += [f"wrote {path}" for path in written]
    payload = {
        "stats": dataclasses.asdict(stats),
        "bounds": bounds.as_dict() if bounds else None,
        "config_hash": config.config_hash,
        "files": written,
    }
    _emit(args, payload, lines)
    return 0


def cmd_sweep(app, args):
    config = app.config
    points = []
    for kind in args.policy:
        values = args.values
        if values is None:
            if kind == "no-csit":
                raise ConfigError("sweep: --values is required for no-csit (fixed powers)")
            values = DEFAULT_V_VALUES
        points += sweep(config, kind, values, parallelism=args.parallel)
    written = _write_points(points, args)
    lines = [f"{'policy':<10} {'param':>8} {'delay_s':>12} {'power':>12} {'per':>8}"]
    for point in points:
        if point.failed:
            lines.append(f"{point.policy:<10} {point.sweep_param:>8g} failed: {point.error}")
            continue
        s = point.stats
        lines.append(
            f"{point.policy:<10} {point.sweep_param:>8g} {s.avg_delay:>12.6g} "
            f"{s.avg_power:>12.6g} {s.conditional_per:>8.4f}"
        )
    lines += [f"wrote {path}" for path in written]
    payload = {
        "points": [
            {
                "policy": p.policy,
                "sweep_param": p.sweep_param,
                "stats": dataclasses.asdict(p.stats) if p.stats else None,
                "bounds": p.bounds.as_dict() if p.bounds else None,
                "error": p.error,
            }
            for p in points
        ],
        "files": written,
    }
    _emit(args, payload, lines)
    failed = sum(p.failed for p in points)
    return 2 if failed == len(points) else 0


def cmd_bounds(app, args):
    config = app.config
    bounds = compute_bounds(config)
    report = bounds.as_dict()
    lines = [
        f"beta: {bounds.beta:.6g} +/- {bounds.beta_se:.2g}",
        f"beta_prime: {bounds.beta_prime:.6g} +/- {bounds.beta_prime_se:.2g}",
        f"leftover L*: {bounds.leftover_fixed_point:.6g} nats",
        f"t_d: {bounds.t_d:.6g} s",
        f"t_p: {bounds.t_p:.6g} s",
        f"delay upper bound: {bounds.delay_upper:.6g} s",
        f"power lower bound: {bounds.power_lower:.6g}",
    ]
    if bounds.random_arrivals:
        lines.insert(0, "arrivals: iid (random-arrival bounds)")
    if bounds.regime_note:
        lines.append(f"note: {bounds.regime_note}")
    _emit(args, {**report, "config_hash": config.config_hash}, lines)
    return 0


def cmd_validate(app, args):
    config = app.config
    _emit(
        args,
        {"valid": True, "config_hash": config.config_hash, "config": config.to_dict()},
        [f"valid (config hash {config.config_hash})"],
    )
    return 0


def cmd_selftest(app, args):
    checks = run_selftest(mc_draws=args.draws, seed=args.seed or 0)
    lines = []
    for c in checks:
        status = "PASS" if c.passed else "FAIL"
        lines.append(f"{status} {c.name:<28} max error {c.max_error:.3g} (tolerance {c.tolerance:g})")
    _emit(args, {"checks": [c.as_dict() for c in checks]}, lines)
    return 0 if all(c.passed for c in checks) else 3


def cmd_curves(app, args):
    config = app.config
    phy = config.phy_params
    rng = np.random.default_rng(config.mc.seed if args.seed is None else args.seed)
    stem = Path(args.out or "curves")
    power = required_power_curve(CURVE_RATES, CURVE_SIGMA_E2, phy, args.draws, rng)
    quality = quality_curve(CURVE_SIGMA_E2, CURVE_TARGET_PER, phy, args.draws, rng)
    written = [
        write_table(power, stem.with_name(f"{stem.stem}.power.csv")),
        write_table(quality, stem.with_name(f"{stem.stem}.quality.csv")),
    ]
    if args.delays:
        table = csit_error_sweep(
            config, CURVE_SIGMA_E2, args.delays, DEFAULT_V_VALUES, parallelism=args.parallel
        )
        written.append(write_table(table, stem.with_name(f"{stem.stem}.csit_error.csv")))
    _emit(args, {"files": [str(p) for p in written]}, [f"wrote {p}" for p in written])
    return 0


def cmd_drift(app, args):
    report = drift_check(app.config, bins=args.bins, inverted=args.inverted)
    table = report.table.drop(columns=["bin"])
    lines = [table.to_string(index=False), f"{report.policy}: {'PASS' if report.passed else 'FAIL'}"]
    payload = {
        "policy": report.policy,
        "passed": report.passed,
        "a_max": report.a_max,
        "r_max": report.r_max,
        "insufficient_bins": report.insufficient_bins,
        "bins": table.to_dict(orient="records"),
    }
    _emit(args, payload, lines)
    return 0 if report.passed else 2


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="config file (key = value lines)")
    common.add_argument("--out", type=Path, help="output file")
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    common.add_argument("--seed", type=int)
    common.add_argument("--slots", type=int)
    common.add_argument("--parallel", type=int, default=1)
    common.add_argument("--json", action="store_true", help="machine-readable output and diagnostics")
    common.add_argument("--log-level", choices=("DEBUG", "INFO", "WARNING", "ERROR"))
    common.add_argument("--cache-dir", help="persist Monte Carlo expectations here")

    parser = argparse.ArgumentParser(prog="dbpsim", description="DBP power/delay/CSIT toolkit")
    commands = parser.add_subparsers(dest="command", required=True)

    simulate = commands.add_parser("simulate", parents=[common], help="simulate the configured policy")
    simulate.add_argument("--fifo", action="store_true", help="also track FIFO sojourn times")
    simulate.set_defaults(handler=cmd_simulate)

    sweep_cmd = commands.add_parser("sweep", parents=[common], help="sweep V or the fixed power")
    sweep_cmd.add_argument(
        "--policy", action="append", choices=("dbp", "csit-only", "no-csit"), required=True
    )
    sweep_cmd.add_argument("--values", type=float, nargs="+")
    sweep_cmd.set_defaults(handler=cmd_sweep)

    commands.add_parser("bounds", parents=[common], help="analytical delay and power bounds").set_defaults(
        handler=cmd_bounds
    )
    commands.add_parser("validate", parents=[common], help="check a config file").set_defaults(
        handler=cmd_validate
    )

    selftest = commands.add_parser("specfun-selftest", parents=[common], help="special-function oracles")
    selftest.add_argument("--draws", type=int, default=MC_DRAWS, help="Monte Carlo draws (0 skips)")
    selftest.set_defaults(handler=cmd_selftest)

    curves = commands.add_parser("curves", parents=[common], help="required power and quality curves")
    curves.add_argument("--draws", type=int, default=CURVE_DRAWS)
    curves.add_argument("--delays", type=float, nargs="+", help="delay targets (s) for the CSIT error table")
    curves.set_defaults(handler=cmd_curves)

    drift = commands.add_parser("drift", parents=[common], help="Lyapunov drift check")
    drift.add_argument("--bins", type=int, default=10)
    drift.add_argument("--inverted", action="store_true", help="run the inverted negative control")
    drift.set_defaults(handler=cmd_drift)
    return parser


def _report_failure(args, exc, exit_code=None):
    problems = getattr(exc, "problems", [str(exc)])
    if getattr(args, "json", False):
        print(json.dumps({
            "error": type(exc).__name__,
            "exit_code": exc.exit_code if exit_code is None else exit_code,
            "problems": problems,
        }, indent=2))
    else:
        print(f"error ({type(exc).__name__}):", file=sys.stderr)
        for problem in problems:
            print(f"  {problem}", file=sys.stderr)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        app = create_app(args.config, log_level=args.log_level, cache_dir=args.cache_dir)
        app.config = _apply_overrides(app.config, args)
        return args.handler(app, args)
    except DbpSimError as exc:
        logger.debug("command failed", exc_info=True)
        _report_failure(args, exc)
        return exc.exit_code
    except Exception as exc:
        logger.exception(f"Unexpected {type(exc).__name__} while running {args.command}")
        _report_failure(args, exc, exit_code=DbpSimError.exit_code)
        return DbpSimError.exit_code


if __name__ == "__main__":
    sys.exit(main())
