"""
CV-QKD tracking simulator - command line front door

Verbs:
    run      simulate the configured measurements and write CSV outputs
    compare  compare the two estimator chains in a frames.csv
    sweep    re-run a reduced experiment over values of one parameter
    health   validate an output directory

Any config field can be overridden with its dotted name, e.g. --ukf.q_phi 1e-6
"""
import argparse
import logging
import sys
from pathlib import Path

from config.experiment import load_config, parse_value
from config.settings import (
    DEFAULT_PROFILE, LOG_FORMAT, LOG_LEVEL, PROFILES, SWEEP_PARAMETERS, SYSTEM_VERSION,
)
from engine.simulation_engine import SimulationEngine, compare, sweep
from utils.errors import ConfigError
from utils.health_check import check_output_health


def build_parser():
    parser = argparse.ArgumentParser(
        description="Joint polarization/phase tracking CV-QKD simulator (UKF vs CMA)."
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {SYSTEM_VERSION}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", type=str, default=None, help="JSON experiment config.")
        p.add_argument("--out", type=str, default=None, help="Output directory.")
        p.add_argument("--seed", type=int, default=None, help="Master seed.")
        p.add_argument("--workers", type=int, default=None, help="Parallel measurements.")
        p.add_argument("--profile", choices=sorted(PROFILES), default=DEFAULT_PROFILE,
                       help="Built-in parameter profile.")
        p.add_argument("--verbose", "-v", action="store_true", help="Debug logging.")

    add_common(sub.add_parser("run", help="Run all measurements."))

    p_compare = sub.add_parser("compare", help="Compare chains in a frames.csv.")
    p_compare.add_argument("frames_csv", type=str)
    p_compare.add_argument("--verbose", "-v", action="store_true")

    p_sweep = sub.add_parser("sweep", help="Sweep one parameter.")
    add_common(p_sweep)
    p_sweep.add_argument("--parameter", required=True,
                         help=f"One of: {', '.join(SWEEP_PARAMETERS)}.")
    p_sweep.add_argument("--values", required=True, help="Comma-separated values.")

    p_health = sub.add_parser("health", help="Validate an output directory.")
    p_health.add_argument("--out", type=str, default=None)
    p_health.add_argument("--verbose", "-v", action="store_true")
    return parser


def parse_overrides(extra):
    """['--ukf.q_phi', '1e-6', '--n_measurements=3'] -> [('ukf.q_phi', 1e-6), ('n_measurements', 3)]"""
    overrides = []
    i = 0
    while i < len(extra):
        token = extra[i]
        if not token.startswith("--") or len(token) == 2:
            raise ConfigError("arguments", f"unrecognized argument {token!r}")
        key = token[2:]
        if "=" in key:
            key, raw = key.split("=", 1)
        else:
            if i + 1 >= len(extra):
                raise ConfigError(key, "missing value")
            i += 1
            raw = extra[i]
        overrides.append((key, parse_value(raw)))
        i += 1
    return overrides


def resolve_config(args, extra):
    overrides = parse_overrides(extra)
    for flag, key in (("seed", "master_seed"), ("out", "output_dir"), ("workers", "workers")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides.append((key, value))
    return load_config(args.config, args.profile, overrides)


def cmd_run(args, extra):
    cfg = resolve_config(args, extra)
    run = SimulationEngine(cfg).run()
    return 1 if len(run.failed()) == cfg.n_measurements else 0


def cmd_compare(args, extra):
    if extra:
        raise ConfigError("arguments", f"unrecognized arguments {extra}")
    report = compare(args.frames_csv)
    print(report.table.to_string(index=False, float_format=lambda v: f"{v:.6g}"))
    print(f"\nFrames with UKF xi < CMA xi: {100 * report.ukf_better_fraction:.1f}%")
    for name, delta in report.deltas.items():
        print(f"  UKF - CMA {name}: {delta:+.6g}")
    return 0


def cmd_sweep(args, extra):
    cfg = resolve_config(args, extra)
    values = [parse_value(v.strip()) for v in args.values.split(",") if v.strip()]
    if not values:
        raise ConfigError("sweep.values", "no values given")
    table = sweep(cfg, args.parameter, values)
    print(table.to_string(index=False, float_format=lambda v: f"{v:.6g}"))
    return 0


def cmd_health(args, extra):
    out = args.out or load_config().output_dir
    healthy, _ = check_output_health(Path(out))
    return 0 if healthy else 1


COMMANDS = {"run": cmd_run, "compare": cmd_compare, "sweep": cmd_sweep, "health": cmd_health}


def main(argv=None):
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level="DEBUG" if args.verbose else LOG_LEVEL, format=LOG_FORMAT)
    try:
        return COMMANDS[args.command](args, extra)
    except ConfigError as e:
        print(f"\n✗ CONFIG ERROR: {str(e)}")
        return 2


if __name__ == "__main__":
    try:
        sys.exit(main())
    except Exception as e:
        print(f"\n✗ FATAL ERROR: {str(e)}")
        sys.exit(1)
