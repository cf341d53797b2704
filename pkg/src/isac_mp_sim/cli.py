"""Command line entry point.

    isac-mp-sim run --config FILE --seed N --out DIR
                    [--mode hvmp|pilot|position-only]
                    [--profile random|dft|optimized]
                    [--sweep KEY=v1,v2,...] [--preset NAME]
                    [--realizations N] [--slots N] [--trace]

Exit codes: 0 success, 2 configuration error, 3 numerical divergence in
more than 10 % of realizations.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import ConfigError, RunConfig, load_config, preset_config
from .harness import run_experiment, write_metrics

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3


def _set_by_path(cfg: RunConfig, dotted: str, value):
    section, _, key = dotted.partition(".")
    if not key:
        raise ConfigError(f"sweep key must be section.key, got {dotted!r}")
    target = getattr(cfg, section, None)
    if target is None or not hasattr(target, key):
        raise ConfigError(f"unknown sweep key {dotted!r}")
    current = getattr(target, key)
    caster = type(current) if current is not None else float
    setattr(target, key, caster(value))


def _parse_sweep(arg: str):
    key, _, values = arg.partition("=")
    if not values:
        raise ConfigError("sweep must look like section.key=v1,v2,...")
    return key.strip(), [v.strip() for v in values.split(",")]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="isac-mp-sim")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one experiment or a sweep")
    run.add_argument("--config", type=Path, help="TOML run configuration")
    run.add_argument("--preset", choices=["desk", "paper-fig5"],
                     help="built-in configuration (overridden by --config keys)")
    run.add_argument("--seed", type=int, help="master seed (overrides config)")
    run.add_argument("--out", type=Path, required=True, help="output directory")
    run.add_argument("--mode", choices=["hvmp", "pilot", "position-only"])
    run.add_argument("--profile", choices=["random", "dft", "optimized"])
    run.add_argument("--sweep", help="section.key=v1,v2,... one run per value")
    run.add_argument("--realizations", type=int)
    run.add_argument("--slots", type=int)
    run.add_argument("--trace", action="store_true",
                     help="write per-outer-iteration diagnostics")
    return parser


def _load(args) -> RunConfig:
    if args.config is not None:
        cfg = load_config(args.config)
    elif args.preset is not None:
        cfg = preset_config(args.preset)
    else:
        raise ConfigError("one of --config / --preset is required")
    if args.config is not None and args.preset is not None:
        raise ConfigError("--config and --preset are mutually exclusive")
    if args.seed is not None:
        cfg.run.seed = args.seed
    if args.mode is not None:
        cfg.run.mode = args.mode
    if args.profile is not None:
        cfg.run.profile = args.profile
    if args.realizations is not None:
        cfg.run.realizations = args.realizations
    if args.slots is not None:
        cfg.run.slots = args.slots
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load(args)
        cfg.validate()
        runs = [(None, cfg)]
        if args.sweep:
            key, values = _parse_sweep(args.sweep)
            runs = []
            for v in values:
                import copy
                c = copy.deepcopy(cfg)
                _set_by_path(c, key, v)
                runs.append((f"{key.replace('.', '_')}_{v}", c))
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    worst = EXIT_OK
    for tag, run_cfg in runs:
        out_dir = args.out if tag is None else args.out / f"sweep_{tag}"
        result = run_experiment(run_cfg, collect_trace=args.trace)
        write_metrics(result, out_dir)
        frac = result.diverged_realizations / max(result.realizations, 1)
        summary = result.summary()[-1]
        print(f"{tag or 'run'}: position_rmse={summary['position_rmse_m']:.4g} m, "
              f"bcrb={summary['bcrb_position_m']:.4g} m, "
              f"symbol_mse={summary['symbol_mse']:.4g}, "
              f"diverged={result.diverged_realizations}/{result.realizations}")
        if frac > 0.10:
            worst = EXIT_DIVERGED
    return worst


if __name__ == "__main__":
    sys.exit(main())
