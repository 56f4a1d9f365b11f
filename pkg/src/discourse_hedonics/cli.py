"""Command-line front end for the batch pipeline.

Two subcommands:

* ``run``        -- execute the pipeline (or one ``--stage``) for one window
  and sensitivity setting.
* ``robustness`` -- execute the shared stages once, then the full grid of
  window variants (A-C) and sample perturbations (S0-S3).

Configuration comes from a plain-text ``key=value`` file (``--config``);
command-line flags override file values.  Exit status is 0 on success and a
stage-specific nonzero code on failure.
"""

from __future__ import annotations

import argparse
import sys

from .pipeline import (
    SENSITIVITIES,
    STAGES,
    WINDOWS,
    StageError,
    load_run_config,
    run_pipeline,
    run_robustness,
)

EXIT_CODES = {
    "config": 2,
    "ingest": 3,
    "text": 4,
    "panel": 5,
    "visual": 6,
    "merge": 7,
    "fit": 8,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="discourse-hedonics",
        description="Discourse-to-price hedonic pipeline (batch runner).",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the pipeline (optionally a single stage)")
    run.add_argument("--config", required=True, help="key=value configuration file")
    run.add_argument("--stage", choices=("all", *STAGES), default="all")
    run.add_argument("--window", choices=WINDOWS, default=None)
    run.add_argument("--sensitivity", choices=SENSITIVITIES, default=None)
    run.add_argument("--out", default=None, help="output directory (overrides config)")
    run.add_argument("--seed", type=int, default=None)

    robust = sub.add_parser("robustness", help="run the robustness grid")
    robust.add_argument("--config", required=True)
    robust.add_argument("--out", default=None)
    robust.add_argument("--seed", type=int, default=None)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    overrides = {
        "window": getattr(args, "window", None),
        "sensitivity": getattr(args, "sensitivity", None),
        "out": args.out,
        "seed": args.seed,
    }
    try:
        config = load_run_config(args.config, overrides)
    except (OSError, ValueError) as exc:
        print(f"[config] {exc}", file=sys.stderr)
        return EXIT_CODES["config"]
    try:
        if args.command == "run":
            result = run_pipeline(config, stage=args.stage)
        else:
            result = run_robustness(config)
    except StageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CODES.get(exc.stage, 1)
    print(f"wrote {result.manifest_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
