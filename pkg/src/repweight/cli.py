"""Command-line entry points.

    repweight run <config.yaml>       execute the full grid, write artifacts
    repweight validate <config.yaml>  parse and check the config, run nothing
    repweight report <results.tsv>    re-render the aggregate table

Exit codes: 0 success, 1 configuration error, 2 every cell failed.
The output directory from the config can be overridden with the
REPWEIGHT_OUTPUT_DIR environment variable.
"""

from __future__ import annotations

import argparse
import sys

from .config import ConfigError, load_config
from .pipeline import emit_report, parse_results_tsv, run_pipeline


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="repweight",
        description="Balancing weights with learned covariate representations.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    run_p = sub.add_parser("run", help="run the configured seed x method grid")
    run_p.add_argument("config", help="path to the YAML run configuration")
    val_p = sub.add_parser("validate", help="check a configuration without running")
    val_p.add_argument("config", help="path to the YAML run configuration")
    rep_p = sub.add_parser("report", help="re-render the table from a results file")
    rep_p.add_argument("results", help="path to a results.tsv written by `run`")
    args = parser.parse_args(argv)

    if args.command in ("run", "validate"):
        try:
            cfg = load_config(args.config)
        except (ConfigError, OSError) as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return 1
        if args.command == "validate":
            print(f"ok: {len(cfg.methods)} methods x {len(cfg.seeds)} seeds ({cfg.task})")
            return 0
        result = run_pipeline(cfg)
        print(emit_report(result.records), end="")
        print(f"artifacts in {result.output_dir}")
        if result.n_ok == 0:
            return 2
        return 0

    try:
        with open(args.results, "r", encoding="utf-8") as fh:
            records = parse_results_tsv(fh.read())
    except (OSError, ValueError) as exc:
        print(f"report error: {exc}", file=sys.stderr)
        return 1
    print(emit_report(records), end="")
    return 0


if __name__ == "__main__":
    sys.exit(main())
