"""Command-line entry point.

Subcommands:
  run      full pipeline: vanilla pass, perturbations, all reports
  rank     vanilla pass only, writes ranking.csv
  perturb  like run but restricted to the masking sets given via --sets

Exit codes: 0 success, 1 configuration or input-format error, 2 total
estimation failure (no frame pair could be registered, or every masking
cell failed).
"""

from __future__ import annotations

import argparse
import sys

from .errors import ConfigError, EstimationError, FormatError
from .masking import TAXONOMY_LABELS
from .pipeline import emit_ranking, emit_reports, parse_run_config, run_perturbations, run_vanilla

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_ESTIMATION = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="semattn",
        description="Semantic-attention explainability for pointcloud registration")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("run", "full pipeline with reports"),
        ("rank", "class ranking only"),
        ("perturb", "perturbations for a subset of masking sets"),
    ):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", required=True, help="key/value config file")
        cmd.add_argument("--seed", type=int, default=None,
                         help="override the masking (and synthetic) seed")
        cmd.add_argument("--out", default=None, help="override the output directory")
        if name == "perturb":
            cmd.add_argument("--sets", required=True,
                             help="comma-separated masking sets, from: "
                                  + ", ".join(TAXONOMY_LABELS))
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage problems; those are config errors here
        return EXIT_OK if exc.code in (0, None) else EXIT_CONFIG

    try:
        config = parse_run_config(args.config, seed_override=args.seed,
                                  out_override=args.out)
    except (ConfigError, FormatError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        vanilla = run_vanilla(config)
        if args.command == "rank":
            path = emit_ranking(vanilla, config.out_dir)
            print(f"wrote {path}")
            return EXIT_OK
        set_labels = None
        if args.command == "perturb":
            set_labels = [s.strip() for s in args.sets.split(",") if s.strip()]
        run = run_perturbations(vanilla, config, set_labels)
        for path in emit_reports(run, config.out_dir):
            print(f"wrote {path}")
        if run.total_failure:
            print("estimation failed for every masking cell", file=sys.stderr)
            return EXIT_ESTIMATION
        return EXIT_OK
    except (ConfigError, FormatError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except EstimationError as exc:
        print(f"estimation failure: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION


if __name__ == "__main__":
    raise SystemExit(main())
