"""Command-line entry point: ``python -m tstransformer <command>``.

Exit codes: 0 success, 1 usage error, 2 numerical failure, 3 I/O error.
The default output directory for ``run`` comes from ``TSTRANSFORMER_OUTPUT_DIR``.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import gradcheck
from .data import DatasetFormatError, DatasetSpec, DatasetSpecError, build_dataset, read_dataset, stack, write_dataset
from .inference import evaluate, forecast_batch
from .models import CheckpointError, ModelConfig, count_params, init_params, load_checkpoint, save_checkpoint
from .recipes import RECIPES, run_recipe, write_loss_curve, write_plot, write_summary, write_traces
from .training import TrainConfig, TrainingDivergedError, train

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3
OUTPUT_ENV = "TSTRANSFORMER_OUTPUT_DIR"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--kind", choices=["mits", "pots"], default="mits")
    p.add_argument("--d-model", type=int, default=8)
    p.add_argument("--ff", "--dim-feedforward", dest="ff", type=int, default=8)
    p.add_argument("--pos-expansion", type=int, default=None)
    p.add_argument("--nhead", type=int, default=2)
    p.add_argument("--d-input", type=int, default=1)
    p.add_argument("--dropout", type=float, default=0.1)


def _model_config(args) -> ModelConfig:
    if args.kind == "mits" and args.pos_expansion is not None:
        raise UsageError("--pos-expansion only applies to --kind pots")
    try:
        return ModelConfig(
            kind=args.kind, d_input=args.d_input, d_model=args.d_model, nhead=args.nhead,
            dim_feedforward=args.ff, dropout_p=args.dropout, pos_expansion_dim=args.pos_expansion,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tstransformer", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("count-params", help="print the number of learnable parameters")
    _add_model_flags(p)

    p = sub.add_parser("gen-data", help="write train/test sinusoid datasets as CSV")
    p.add_argument("--type", dest="kind", choices=["type1", "type2", "type3"], default="type1")
    p.add_argument("--w-list", type=_floats, default=[0.0, 1.0, 2.0, 3.0])
    p.add_argument("--w-max", type=float, default=3.0)
    p.add_argument("--n-train", type=int, default=100)
    p.add_argument("--n-test", type=int, default=30)
    p.add_argument("--repeat", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train-out", type=Path, required=True)
    p.add_argument("--test-out", type=Path, required=True)

    p = sub.add_parser("train", help="train a model on a dataset CSV")
    _add_model_flags(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--lr", type=float, default=0.023)
    p.add_argument("--milestones", type=_ints, default=[])
    p.add_argument("--gamma", type=float, default=0.1)
    p.add_argument("--epochs", type=int, default=2000)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--loss-curve", type=Path, default=None)

    for name, helptext in (("eval", "autoregressive test error of a checkpoint"),
                           ("forecast", "print autoregressive forecasts")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--checkpoint", type=Path, required=True)
        p.add_argument("--data", type=Path, required=True)
        p.add_argument("--traces", type=Path, default=None, help="directory for per-sequence t,truth,prediction files")
        p.add_argument("--summary", type=Path, default=None)
        p.add_argument("--plot", action="store_true")

    p = sub.add_parser("gradcheck", help="finite-difference check of all backward rules")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-4)

    p = sub.add_parser("run", help="run a named experiment recipe")
    p.add_argument("recipe")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--no-plot", action="store_true")
    return parser


def _cmd_count_params(args) -> int:
    print(count_params(_model_config(args)))
    return EXIT_OK


def _cmd_gen_data(args) -> int:
    try:
        spec = DatasetSpec(kind=args.kind, w_list=args.w_list, w_max=args.w_max, n_train=args.n_train,
                           n_test=args.n_test, repeat=args.repeat, seed=args.seed)
    except DatasetSpecError as exc:
        raise UsageError(str(exc)) from None
    train_set, test_set = build_dataset(spec)
    write_dataset(train_set, args.train_out)
    write_dataset(test_set, args.test_out)
    print(f"wrote {len(train_set)} train and {len(test_set)} test sequences")
    return EXIT_OK


def _cmd_train(args) -> int:
    cfg = _model_config(args)
    try:
        tcfg = TrainConfig(lr0=args.lr, milestones=args.milestones, gamma=args.gamma, epochs=args.epochs,
                           batch_size=args.batch_size, seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    dataset = read_dataset(args.data)
    params, report = train(cfg, init_params(cfg, args.seed), dataset, tcfg, log_every=100)
    save_checkpoint(params, cfg, args.checkpoint)
    if args.loss_curve:
        write_loss_curve(report.loss_curve, args.loss_curve)
    print(f"final_loss={report.final_loss!r} epochs={len(report.loss_curve)}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    params, cfg = load_checkpoint(args.checkpoint)
    test_set = read_dataset(args.data)
    report = evaluate(params, cfg, test_set)
    if args.traces:
        write_traces(report, args.traces, len(test_set[0].src))
        if args.plot:
            write_plot(report, test_set, Path(args.traces) / "forecast.svg")
    if args.summary:
        write_summary(report, args.summary)
    print(f"test_err={report.test_err!r} sequences={len(report.per_sequence)}")
    return EXIT_OK


def _cmd_forecast(args) -> int:
    params, cfg = load_checkpoint(args.checkpoint)
    test_set = read_dataset(args.data)
    src, tgt = stack(test_set)
    preds = forecast_batch(params, cfg, src, tgt.shape[0])
    for b, pair in enumerate(test_set):
        print(",".join([repr(float(pair.freq))] + [repr(float(v)) for v in preds[:, b, 0]]))
    if args.traces or args.summary:
        return _cmd_eval(args)
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    if args.tolerance <= 0:
        raise UsageError("--tolerance must be positive")
    results = gradcheck.run_all(args.seed, args.tolerance)
    print(gradcheck.format_report(results))
    return EXIT_OK if all(r.passed for r in results) else EXIT_NUMERIC


def _cmd_run(args) -> int:
    if args.recipe not in RECIPES:
        raise UsageError(f"unknown recipe {args.recipe!r}; valid: {', '.join(RECIPES)}")
    base = args.out or Path(os.environ.get(OUTPUT_ENV, "runs"))
    out = base if args.out else base / f"{args.recipe}-seed{args.seed}"
    report = run_recipe(args.recipe, args.seed, out, args.epochs, plot=not args.no_plot)
    if not np.isfinite(report.test_err):
        print(f"non-finite test error {report.test_err}", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"test_err={report.test_err!r} sequences={len(report.per_sequence)} "
          f"final_loss={report.final_loss!r} out={out}")
    return EXIT_OK


COMMANDS = {
    "count-params": _cmd_count_params,
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "forecast": _cmd_forecast,
    "gradcheck": _cmd_gradcheck,
    "run": _cmd_run,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, CheckpointError, DatasetFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
