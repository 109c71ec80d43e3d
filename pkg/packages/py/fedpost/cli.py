"""Command-line entry point: ``fedpost run | partition | summarize``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from .core.config import get_settings
from .core.exceptions import ConfigurationError, FedPostError
from .core.logging_config import setup_logging
from .partition import cell_table, heterogeneity_stat, write_manifest
from .runner import (
    ExperimentConfig,
    load_experiment_dataset,
    partition_for_seed,
    read_reports,
    run_sweep,
    summary_frame,
    write_reports,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_DOMAIN_ERROR = 2


def _parse_seeds(value: str) -> List[int]:
    try:
        return [int(part) for part in value.split(",") if part.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(
            f"seeds must be comma-separated integers: {value}"
        ) from exc


def _parse_alphas(value: str) -> List[float]:
    try:
        return [float(part) for part in value.split(",") if part.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(
            f"alphas must be comma-separated numbers: {value}"
        ) from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedpost", description="Federated fairness experiments"
    )
    parser.add_argument("--log-level", help="Override FEDPOST_LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser(
        "run",
        help="Run an experiment config over a seed sweep",
        description=(
            "Run an experiment config over a seed sweep. Reports record wallclock "
            "timings by default, so repeated runs differ in the timing fields; "
            "pass --no-timing for byte-identical reports."
        ),
    )
    run.add_argument("--config", required=True, type=Path, help="JSON experiment config")
    run.add_argument("--method", choices=["fedavg", "pp", "ft"])
    run.add_argument("--alpha", type=float)
    run.add_argument(
        "--alphas", type=_parse_alphas, help="Comma-separated alpha sweep, e.g. 0.5,5,500"
    )
    run.add_argument("--seeds", type=_parse_seeds, help="Comma-separated seeds, e.g. 0,1,2")
    run.add_argument("--out", type=Path, help="Report path; summary goes to stdout if omitted")
    run.add_argument("--format", choices=["csv", "json"], default="json", dest="fmt")
    run.add_argument(
        "--no-timing",
        action="store_true",
        help="Record zero timings; without it reports are not byte-identical across runs",
    )

    part = sub.add_parser("partition", help="Draw one partition and export its manifest")
    part.add_argument("--config", required=True, type=Path)
    part.add_argument("--alpha", type=float)
    part.add_argument("--seed", type=int, help="Defaults to the config's first seed")
    part.add_argument("--out", type=Path, help="Manifest JSON path")

    summ = sub.add_parser("summarize", help="Mean and std across seeds of JSON reports")
    summ.add_argument("reports", nargs="+", type=Path)
    summ.add_argument("--format", choices=["text", "json"], default="text", dest="fmt")
    return parser


def _cmd_run(args: argparse.Namespace) -> None:
    overrides = {
        "method": args.method,
        "alpha": args.alpha,
        "alphas": args.alphas,
        "seeds": args.seeds,
    }
    # A single --alpha replaces any sweep listed in the config.
    if args.alpha is not None and args.alphas is None:
        overrides["alphas"] = []
    if args.no_timing:
        overrides["record_timing"] = False
    config = ExperimentConfig.from_json_file(args.config, **overrides)
    reports = run_sweep(config)
    if args.out is not None:
        write_reports(reports, args.out, args.fmt)
        return
    for report in reports:
        if len(reports) > 1:
            print(f"alpha={report.config.alpha:g}")
        print(summary_frame(report.seeds).to_string())


def _cmd_partition(args: argparse.Namespace) -> None:
    config = ExperimentConfig.from_json_file(args.config, alpha=args.alpha)
    seed = config.seeds[0] if args.seed is None else args.seed
    if seed < 0:
        raise ConfigurationError(f"seed must be non-negative, got {seed}")

    drawn = partition_for_seed(config, load_experiment_dataset(config, seed), seed)
    print(cell_table(drawn.shards).to_string())
    if len(drawn.shards) > 1:
        print(f"heterogeneity (max pairwise TV): {heterogeneity_stat(drawn.shards):.6f}")
    if args.out is not None:
        write_manifest(
            args.out,
            drawn.partitions,
            dataset=config.dataset.value,
            alpha=config.alpha,
            seed=seed,
            attempts=drawn.attempts,
        )
        logger.info(f"Partition manifest written to {args.out}")


def _cmd_summarize(args: argparse.Namespace) -> None:
    reports = [report for path in args.reports for report in read_reports(path)]
    table = summary_frame(reports)
    if args.fmt == "json":
        print(table.to_json(orient="index"))
    else:
        print(table.to_string())


COMMANDS = {
    "run": _cmd_run,
    "partition": _cmd_partition,
    "summarize": _cmd_summarize,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)

    settings = get_settings()
    if args.log_level:
        settings = settings.model_copy(update={"LOG_LEVEL": args.log_level.upper()})
    setup_logging(settings)

    try:
        COMMANDS[args.command](args)
    except FedPostError as exc:
        logger.error(f"{args.command} failed: {exc}")
        print(json.dumps(exc.to_dict()), file=sys.stderr)
        return EXIT_DOMAIN_ERROR
    except Exception as exc:
        logger.exception(f"{args.command} failed unexpectedly")
        print(json.dumps({"error": "internal_error", "message": str(exc)}), file=sys.stderr)
        return EXIT_UNEXPECTED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
