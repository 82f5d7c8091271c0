"""Command-line entry point: ``nnpattern <subcommand> [options]``.

Exit codes: 0 success, 2 invalid experiment spec, 3 training diverged at
every point, 4 a requested gap has no crossing.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import sys

from . import experiments as ex
from . import mlp
from .records import CsvSink, compute_gap, curves, read_csv

EXIT_OK, EXIT_INVALID, EXIT_DIVERGED, EXIT_NO_CROSSING = 0, 2, 3, 4

# subcommand -> (kind, defaults)
DEFAULTS = {
    "sweep-l": ("awgn-sweep-L", dict(train_pattern="prbs7", window=list(ex.SWEEP_L_GRID),
                                      snr=(9.0, 9.0, 1.0), train_snr=10.0, train_size=1 << 19,
                                      eval_size=1 << 16)),
    "sweep-snr": ("awgn-sweep-snr", dict(train_pattern="prbs7", window=[13], snr=(4.0, 14.0, 1.0),
                                          train_snr=10.0, train_size=1 << 19, eval_size=1 << 18)),
    "repeated-random": ("repeated-random", dict(train_pattern="repeated-random", window=[33],
                                                 snr=(4.0, 14.0, 1.0), train_snr=10.0,
                                                 train_size=1 << 19, eval_size=1 << 16)),
    "imdd": ("imdd", dict(train_pattern="prbs15", window=[129], snr=(14.0, 34.0, 2.0),
                          train_snr=None, train_size=500_000, eval_size=1 << 17)),
}


def _add_run_args(p: argparse.ArgumentParser, defaults: dict) -> None:
    lo, hi, step = defaults["snr"]
    p.add_argument("--train-pattern", choices=ex.PATTERNS, default=defaults["train_pattern"])
    p.add_argument("--eval-pattern", choices=ex.PATTERNS, default="random")
    p.add_argument("--window", type=int, nargs="+", default=defaults["window"], metavar="L")
    p.add_argument("--topology", nargs="+", default=["8"], help="8, 64x64, or AxBx...")
    p.add_argument("--snr-min", type=float, default=lo)
    p.add_argument("--snr-max", type=float, default=hi)
    p.add_argument("--snr-step", type=float, default=step)
    p.add_argument("--train-snr", type=float, default=defaults["train_snr"],
                   help="training SNR in dB (imdd default: train at every evaluation SNR)")
    p.add_argument("--train-size", type=int, default=defaults["train_size"])
    p.add_argument("--eval-size", type=int, default=defaults["eval_size"])
    p.add_argument("--unit-length", type=int, default=128, help="repeated-random unit length")
    p.add_argument("--epochs", type=int, default=mlp.TrainConfig.epochs)
    p.add_argument("--learning-rate", type=float, default=mlp.TrainConfig.learning_rate)
    p.add_argument("--momentum", type=float, default=mlp.TrainConfig.momentum)
    p.add_argument("--batch-size", type=int, default=mlp.TrainConfig.batch_size)
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--out", default="-", help="CSV output file (default: stdout)")
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    p.add_argument("--allow-small-eval", action="store_true",
                   help="permit eval sets below 2**16 windows (smoke tests)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nnpattern", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, defaults) in DEFAULTS.items():
        _add_run_args(sub.add_parser(name), defaults)
    g = sub.add_parser("gap", help="SNR gap between two curves of result CSVs")
    g.add_argument("csv", nargs="+")
    g.add_argument("--reference", required=True, help="experiment id of the reference curve")
    g.add_argument("--comparison", required=True, nargs="+", help="experiment id(s) to compare")
    g.add_argument("--target-ber", type=float, default=1e-3)
    return parser


def spec_from_args(args) -> ex.ExperimentSpec:
    kind, _ = DEFAULTS[args.command]
    train = mlp.TrainConfig(learning_rate=args.learning_rate, momentum=args.momentum,
                            batch_size=args.batch_size, epochs=args.epochs)
    return ex.ExperimentSpec(
        kind=kind,
        train_pattern=args.train_pattern,
        eval_pattern=args.eval_pattern,
        windows=tuple(args.window),
        topologies=tuple(args.topology),
        snr_points=ex.snr_grid(args.snr_min, args.snr_max, args.snr_step),
        train_size=args.train_size,
        eval_size=args.eval_size,
        train_snr_db=args.train_snr,
        master_seed=args.seed,
        unit_length=args.unit_length,
        train=train,
        min_eval_size=1 if args.allow_small_eval else ex.MIN_EVAL_SIZE,
    )


def _run(args) -> int:
    try:
        spec = spec_from_args(args)
        spec.validate()
    except (ex.InvalidSpec, ValueError) as exc:
        print(f"invalid spec: {exc}", file=sys.stderr)
        return EXIT_INVALID
    result = ex.run(spec, workers=args.workers)
    if args.out == "-":
        CsvSink(stream=sys.stdout).write(result.records)
    else:
        with CsvSink(args.out) as sink:
            sink.write(result.records)
    if result.diverged:
        print("training diverged: " + ", ".join(result.diverged), file=sys.stderr)
    return EXIT_DIVERGED if result.all_diverged else EXIT_OK


def _gap(args) -> int:
    records = [r for path in args.csv for r in read_csv(path)]
    by_id = curves(records)
    missing = [c for c in [args.reference, *args.comparison] if c not in by_id]
    if missing:
        print(f"unknown curve id(s): {', '.join(missing)}", file=sys.stderr)
        return EXIT_INVALID
    out = csv.writer(sys.stdout, lineterminator="\n")
    out.writerow(["reference", "comparison", "target_ber", "reference_snr_db",
                  "comparison_snr_db", "delta_snr_db", "status"])
    code = EXIT_OK
    for comp in args.comparison:
        rep = compute_gap(by_id[args.reference], by_id[comp], args.target_ber, args.reference, comp)
        fmt = lambda v: "" if v is None else f"{v:.4f}"
        status = "ok" if rep.crossed else "no-crossing"
        out.writerow([rep.reference, rep.comparison, repr(rep.target_ber), fmt(rep.reference_snr_db),
                      fmt(rep.comparison_snr_db), fmt(rep.delta_snr_db), status])
        if not rep.crossed:
            code = EXIT_NO_CROSSING
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    if args.command == "gap":
        return _gap(args)
    return _run(args)


if __name__ == "__main__":
    sys.exit(main())
