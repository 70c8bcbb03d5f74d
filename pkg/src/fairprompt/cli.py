"""Command line: ``run``, ``verify-causal`` and ``report``."""
from __future__ import annotations

import argparse
import json
import sys

from .errors import FairPromptError
from .harness import cmd_report, cmd_run, cmd_verify_causal, print_lines


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fairprompt", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="evaluate a benchmark under prompting strategies")
    run.add_argument("--config", required=True, help="run config (JSON)")

    ver = sub.add_parser("verify-causal", help="check independence claims on a graph")
    ver.add_argument("--graph", required=True, help="graph document (JSON)")
    ver.add_argument("--roles", help="role mapping JSON file (defaults to the graph's own 'roles')")
    ver.add_argument("--trials", type=int, default=0, help="random PPC search trials")
    ver.add_argument("--seed", type=int, default=0)
    ver.add_argument("--threshold", type=float, default=1e-9, help="independence threshold in nats")
    ver.add_argument("--independent", nargs=2, metavar=("X", "Y"), help="demand X independent of Y")
    ver.add_argument("--given", action="append", default=[], metavar="NAME=VALUE", help="evidence for the demand")
    ver.add_argument("--json", action="store_true", help="print the full JSON document")

    rep = sub.add_parser("report", help="recompute reports from a records file")
    rep.add_argument("--records", required=True)
    rep.add_argument("--format", action="append", choices=("json", "csv"), help="repeatable; default json")
    rep.add_argument("--out", help="output directory (default: next to the records)")
    rep.add_argument("--aggregation", choices=("mean", "median"), default="mean")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            result = cmd_run(args.config)
            print(f"run {result.run_id}: {len(result.records)} records -> {result.run_dir}")
            for err in result.errors:
                print(f"error: {err}", file=sys.stderr)
            if result.report_csv:
                print(result.report_csv, end="")
            return 1 if result.errors else 0
        if args.command == "verify-causal":
            out = cmd_verify_causal(
                args.graph, args.roles, args.trials, args.seed, args.threshold, args.independent, args.given
            )
            if args.json:
                print(json.dumps(out.document, indent=2, sort_keys=True))
            else:
                print_lines(out.lines)
            return out.exit_code
        written = cmd_report(args.records, args.format or ["json"], args.out, args.aggregation)
        for fmt, path in written.items():
            print(f"{fmt}: {path}")
        return 0
    except FairPromptError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
