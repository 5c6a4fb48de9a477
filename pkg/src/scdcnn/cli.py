"""Command line front end: `scdcnn run <experiment> [options]`.

Exit codes: 0 success, 2 configuration error, 3 external data required,
4 I/O error writing the report.
"""

from __future__ import annotations

import argparse
import sys

from .experiments import (
    CSV_FORMAT,
    EXPERIMENT_IDS,
    JSON_FORMAT,
    ExperimentConfig,
    ExternalDataError,
    emit_report,
    report_csv,
    report_json,
    run_experiment,
)
from .weights import WeightFormatError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_EXTERNAL_DATA = 3
EXIT_IO = 4


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(tok) for tok in text.split(",") if tok)
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected a comma-separated integer list, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scdcnn",
        description="Stochastic-computing DCNN hardware simulator harness.")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser(
        "run", help="run one named experiment and emit its report")
    run.add_argument("experiment",
                     help=f"one of: {', '.join(EXPERIMENT_IDS)}")
    run.add_argument("--trials", type=int, default=None,
                     help="trials per grid cell (default 500)")
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--len", dest="lengths", type=_int_list, default=None,
                     metavar="L,...", help="bit-stream lengths")
    run.add_argument("--n", dest="ns", type=_int_list, default=None,
                     metavar="N,...", help="input sizes (or state counts)")
    run.add_argument("--w", dest="precisions", type=_int_list, default=None,
                     metavar="W,...", help="weight precisions in bits")
    run.add_argument("--c", dest="segment", type=int, default=None,
                     help="max-pool segment length")
    run.add_argument("--weights", default=None,
                     help="trained weight file (SCDW)")
    run.add_argument("--mnist", default=None,
                     help="directory holding IDX test files")
    run.add_argument("--out", default=None,
                     help="report path (default: stdout)")
    run.add_argument("--format", choices=(CSV_FORMAT, JSON_FORMAT),
                     default=CSV_FORMAT)
    run.add_argument("--quick", action="store_true",
                     help="scale trials by 0.1 for smoke runs")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    kwargs = {"experiment": args.experiment, "seed": args.seed,
              "quick": args.quick}
    if args.trials is not None:
        kwargs["trials"] = args.trials
    for name in ("lengths", "ns", "precisions", "segment"):
        value = getattr(args, name)
        if value is not None:
            kwargs[name] = value
    if args.weights is not None:
        kwargs["weights_path"] = args.weights
    if args.mnist is not None:
        kwargs["mnist_dir"] = args.mnist

    try:
        cfg = ExperimentConfig(**kwargs)
        report = run_experiment(cfg)
    except ExternalDataError as exc:
        print(f"scdcnn: {exc}", file=sys.stderr)
        return EXIT_EXTERNAL_DATA
    except (ValueError, WeightFormatError) as exc:
        print(f"scdcnn: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"scdcnn: {exc}", file=sys.stderr)
        return EXIT_IO

    for note in report.notes:
        print(f"scdcnn: note: {note}", file=sys.stderr)
    try:
        if args.out is None:
            text = report_csv(report) if args.format == CSV_FORMAT \
                else report_json(report)
            sys.stdout.write(text)
        else:
            emit_report(report, args.out, args.format)
    except OSError as exc:
        print(f"scdcnn: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
