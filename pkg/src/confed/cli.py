"""Command-line interface.

Subcommands:
    run <config> [--baseline] [--out DIR]   run an experiment
    preview-partition <config>              print the learner/class histogram
    export-dag <snapshot> --dot [--out F]   render a DAG snapshot to DOT
    report <metrics.csv> [--out DIR]        summary text + report.csv + figures
"""

from __future__ import annotations

import argparse
import sys

from .config import ConfigError, load_config
from .dag import load_snapshot
from .harness import preview_partition, run_experiment
from .report import write_report


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="confed",
        description="Deterministic confederated-learning simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_cmd = sub.add_parser("run", help="run an experiment from a config file")
    run_cmd.add_argument("config", help="path to the experiment config")
    run_cmd.add_argument("--baseline", action="store_true",
                         help="disable selection and divergence filtering (plain FedAvg)")
    run_cmd.add_argument("--out", default=None, help="output directory (overrides config)")

    preview_cmd = sub.add_parser("preview-partition",
                                 help="print the learner-by-class histogram as CSV")
    preview_cmd.add_argument("config", help="path to the experiment config")

    export_cmd = sub.add_parser("export-dag", help="render a DAG snapshot")
    export_cmd.add_argument("snapshot", help="path to a dag.jsonl snapshot")
    export_cmd.add_argument("--dot", action="store_true", required=True,
                            help="emit Graphviz DOT")
    export_cmd.add_argument("--out", default=None, help="write to a file instead of stdout")

    report_cmd = sub.add_parser("report", help="summarize a metrics.csv")
    report_cmd.add_argument("metrics", help="path to metrics.csv")
    report_cmd.add_argument("--out", default=None,
                            help="directory for report.csv and figures "
                                 "(default: next to the metrics file)")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            config = load_config(args.config)
            paths = run_experiment(config, out_dir=args.out, baseline=args.baseline)
            for name, path in sorted(paths.items()):
                print(f"{name}: {path}")
        elif args.command == "preview-partition":
            config = load_config(args.config)
            sys.stdout.write(preview_partition(config))
        elif args.command == "export-dag":
            dag = load_snapshot(args.snapshot)
            text = dag.export_dot()
            if args.out:
                with open(args.out, "w", encoding="utf-8") as fh:
                    fh.write(text)
            else:
                sys.stdout.write(text)
        elif args.command == "report":
            text, paths = write_report(args.metrics, out_dir=args.out)
            sys.stdout.write(text)
            for name, path in sorted(paths.items()):
                print(f"{name}: {path}")
    except (ConfigError, ValueError, KeyError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
