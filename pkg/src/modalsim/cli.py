"""Command line entry point.

Exit codes: 0 success, 1 acceptance failure, 2 configuration error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .config import ScenarioConfig, config_from_dict, load_config
from .errors import ConfigError, ValidationError
from .scenarios import ScenarioError, run_scenario

EXIT_OK, EXIT_ACCEPTANCE, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="modalsim", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one scenario from a JSON config")
    run.add_argument("config")
    run.add_argument("--seed", type=int)
    run.add_argument("--trajectories", type=int, dest="n_trajectories")
    run.add_argument("--out", dest="output_dir")
    run.add_argument("--format", choices=("csv", "json"), dest="output_format")

    validate = sub.add_parser("validate", help="check a config and print its canonical form")
    validate.add_argument("config")

    oracle = sub.add_parser("oracle-check", help="compare lattice spectra against the closed forms")
    oracle.add_argument("--tolerance", type=float, default=1e-6)
    oracle.add_argument("--out", default="oracle_check_out")
    oracle.add_argument("--format", choices=("csv", "json"), default="csv")
    return parser


def _report_config_error(exc: ConfigError) -> int:
    print("configuration error:", file=sys.stderr)
    for line in exc.violations:
        print(f"  - {line}", file=sys.stderr)
    return EXIT_CONFIG


def _execute(config: ScenarioConfig) -> int:
    try:
        result, manifest = run_scenario(config)
    except ScenarioError as exc:
        print(f"error in scenario step {exc}", file=sys.stderr)
        return EXIT_CONFIG if isinstance(exc.cause, ValidationError) else EXIT_NUMERICAL
    for key, value in sorted(result.summary.items()):
        print(f"{key}: {value}")
    print(f"wrote {manifest}")
    if not result.passed:
        print("acceptance check FAILED", file=sys.stderr)
        return EXIT_ACCEPTANCE
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "validate":
            print(load_config(args.config).to_json(), end="")
            return EXIT_OK
        if args.command == "run":
            config = load_config(args.config).with_overrides(
                seed=args.seed,
                n_trajectories=args.n_trajectories,
                output_dir=args.output_dir,
                output_format=args.output_format,
            )
        else:
            config = config_from_dict(
                {
                    "scenario": "oracle_check",
                    "output_dir": args.out,
                    "output_format": args.format,
                    "parameters": {"tolerance": args.tolerance},
                }
            )
    except ConfigError as exc:
        return _report_config_error(exc)
    return _execute(config)


if __name__ == "__main__":
    sys.exit(main())
