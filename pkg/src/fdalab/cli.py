"""Command-line front end for the experiment studies.

Exit codes: 0 success, 2 configuration/usage error, 3 numerical error.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .errors import ConfigError, DomainError, NumericalError
from .harness import (
    load_config,
    run_downstream_study,
    run_observation_study,
    run_recon_study,
    write_manifest,
    write_study_tables,
)
from .media import SCENES, SCENE_DESCRIPTIONS

STUDY_COMMANDS = ("observe", "recon", "downstream", "all")


def _add_common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="PATH", help="JSON configuration file")
    parser.add_argument("--seed", metavar="N", type=int, help="override master_seed")
    parser.add_argument("--out", metavar="DIR", help="override output_dir")
    parser.add_argument(
        "--feedback", choices=("on", "off"), help="toggle the first-order kernel feedback"
    )
    parser.add_argument(
        "--format", choices=("csv", "json"), default="csv", help="output table format"
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fdalab",
        description="Reference-residual observation and reconstruction studies.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (
        ("observe", "observation-domain response and covariance study"),
        ("recon", "Tikhonov receiver, coding-path and cross-frequency study"),
        ("downstream", "ideal-anomaly and covariance-model study"),
        ("all", "run every study"),
        ("validate-config", "check a configuration file and exit"),
        ("show-scenes", "print the built-in scene registry"),
    ):
        cmd = sub.add_parser(name, help=helptext)
        _add_common_flags(cmd)
    return parser


def _load(args: argparse.Namespace):
    overrides = {
        "master_seed": args.seed,
        "output_dir": args.out,
        "feedback_on": None if args.feedback is None else args.feedback == "on",
    }
    return load_config(args.config, **overrides)


def _show_scenes() -> None:
    header = f"{'scene':<6}{'eps_inf':>9}{'delta_eps':>11}{'tau':>12}{'alpha':>8}{'sigma':>12}  medium"
    print(header)
    for tag, p in SCENES.items():
        print(
            f"{tag:<6}{p.eps_inf:>9.3g}{p.delta_eps:>11.4g}{p.tau:>12.4g}"
            f"{p.alpha:>8.3g}{p.sigma:>12.4g}  {SCENE_DESCRIPTIONS[tag]}"
        )


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    if args.command == "show-scenes":
        _show_scenes()
        return 0

    try:
        cfg = _load(args)
        if args.command == "validate-config":
            print("configuration OK")
            return 0
        tables: dict[str, list[dict]] = {}
        if args.command in ("observe", "all"):
            tables["observe"] = run_observation_study(cfg)
        if args.command in ("recon", "all"):
            tables.update(run_recon_study(cfg))
        if args.command in ("downstream", "all"):
            tables.update(run_downstream_study(cfg))
        written = write_study_tables(tables, cfg.output_dir, fmt=args.format)
        manifest = write_manifest(
            cfg, cfg.output_dir, {name: len(rows) for name, rows in tables.items()}
        )
        for path in written + [manifest]:
            print(path)
        return 0
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, np.linalg.LinAlgError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3
    except DomainError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
