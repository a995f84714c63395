"""Command-line interface.

Exit codes: 0 on success, 2 on validation failures (bad data, config or
arguments), 3 on estimation failures (rank, coverage, degenerate
samples).
"""
from __future__ import annotations

import argparse
import sys

from .core import EstimationError, ValidationError
from .io import OUTPUT_FORMATS, RunConfig, SPLIT_RULES
from .pipeline import COMMANDS, run_pipeline


def _csv_list(text: str) -> tuple[str, ...]:
    return tuple(part.strip() for part in text.split(",") if part.strip())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ordconverge",
        description=(
            "Measure convergence between two groups' ordinal response "
            "distributions under shifts in a continuous treatment."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for command in COMMANDS:
        p = sub.add_parser(command, help=f"run the {command} pipeline")
        p.add_argument("--config", help="JSON run configuration file")
        p.add_argument("--out-dir", required=True, help="directory for report files")
        p.add_argument("--format", choices=OUTPUT_FORMATS, help="records file format")
        p.add_argument("--reps", type=int, help="bootstrap replicates (0 = none)")
        p.add_argument("--seed", type=int, help="bootstrap / simulation seed")
        p.add_argument("--ci", type=float, help="confidence level, e.g. 0.95")
        p.add_argument("--workers", type=int, help="parallel bootstrap workers")
        if command != "simulate":
            p.add_argument("--data", required=True, help="respondent CSV file")
            p.add_argument("--questions", type=_csv_list, help="comma-separated question ids")
            p.add_argument("--controls", type=_csv_list,
                           help="comma-separated controls: oldest,sex,linear_age,flexible_age")
            p.add_argument("--hold-reference", action="store_true", default=None,
                           help="keep the reference group fixed across replicates")
        if command in ("hetero", "report"):
            p.add_argument("--countries", help="country means CSV (median-distance split)")
            p.add_argument("--split", choices=SPLIT_RULES, help="heterogeneity rule")
    return parser


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    config = (
        RunConfig.from_file(args.config) if args.config else RunConfig.default()
    )
    overrides = {
        "questions": getattr(args, "questions", None),
        "controls": getattr(args, "controls", None),
        "output_format": args.format,
        "seed": args.seed,
        "ci_level": args.ci,
        "workers": args.workers,
        "split": getattr(args, "split", None),
    }
    if args.reps is not None:
        overrides["reps"] = args.reps
    if getattr(args, "hold_reference", None):
        overrides["hold_reference"] = True
    config = config.with_overrides(**overrides)
    if args.ci is not None and config.reps == 0:
        raise ValidationError(
            "a confidence level was requested but reps is 0; pass --reps >= 1"
        )
    return config


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _config_from_args(args)
        written = run_pipeline(
            args.command,
            config,
            data_path=getattr(args, "data", None),
            countries_path=getattr(args, "countries", None),
            out_dir=args.out_dir,
        )
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 2
    except EstimationError as exc:
        print(f"estimation error: {exc}", file=sys.stderr)
        return 3
    for path in written:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
