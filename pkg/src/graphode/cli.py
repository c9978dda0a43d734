"""Command-line surface: dataset generation, training, evaluation,
the experiment matrix, and trajectory plots.

Options can come from a JSON config file (--config) with individual
flags overriding it.  The GRAPHODE_OUT environment variable sets the
default output root.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .data import load_dataset, save_dataset
from .evaluation import (ExperimentSpec, baseline_reports, evaluate,
                         format_csv, run_experiment_matrix)
from .model import LatentDynamicsModel, ModelConfig
from .simulate import generate_dataset
from .training import TrainConfig, train

log = logging.getLogger(__name__)


def _out_root(args) -> Path:
    root = getattr(args, "out", None) or os.environ.get("GRAPHODE_OUT") or "."
    return Path(root)


def _load_config_file(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def _merge(args: argparse.Namespace) -> argparse.Namespace:
    """Config-file values fill in any option left at its parser default."""
    if not getattr(args, "config", None):
        return args
    sub = args._subparser
    file_values = _load_config_file(args.config)
    for key, value in file_values.items():
        dest = key.replace("-", "_")
        if not hasattr(args, dest):
            raise SystemExit(f"unknown config key {key!r}")
        if sub.get_default(dest) == getattr(args, dest):
            setattr(args, dest, value)
    return args


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        learning_rate=args.lr, batch_size=args.batch_size, epochs=args.epochs,
        kl_weight=args.kl_weight, seed=args.seed, observed_ratio=args.ratio,
        observed_ratio_jitter=args.ratio_jitter,
        task=args.task, variant=args.variant, log_timing=args.log_timing,
        augment_rotations=args.augment_rotations,
    )


def cmd_gen_data(args) -> int:
    dataset = generate_dataset(
        system=args.system, n_samples=args.samples, seed=args.seed,
        n_objects=args.objects, with_future=args.with_future,
    )
    out = _out_root(args)
    out.mkdir(parents=True, exist_ok=True)
    path = out / args.name
    save_dataset(path, dataset)
    print(f"wrote {args.samples} {args.system} samples to {path}")
    return 0


def cmd_train(args) -> int:
    dataset = load_dataset(args.data)
    config = _train_config(args)
    result = train(dataset, config, _out_root(args))
    last = [r for r in result.history if r.get("split") == "train"]
    if last:
        print(f"final train elbo {last[-1]['elbo']:.6f}")
    print(f"best checkpoint: {result.best_checkpoint}")
    if result.aborted:
        print("training aborted on non-finite loss; last good checkpoint kept")
        return 1
    return 0


def cmd_eval(args) -> int:
    dataset = load_dataset(args.data)
    spec = ExperimentSpec(task=args.task, observed_ratio=args.ratio,
                          variant=args.variant, seed=args.seed)
    report = evaluate(args.checkpoint, spec, dataset)
    print(f"mse {report.mse!r} ci {report.ci!r} count {report.count}")
    if args.baselines:
        for name, rep in baseline_reports(spec, dataset).items():
            print(f"baseline {name}: mse {rep.mse!r} ci {rep.ci!r}")
    return 0


def cmd_matrix(args) -> int:
    train_data = load_dataset(args.train_data)
    test_data = load_dataset(args.test_data)
    model = None
    if args.checkpoint:
        model = LatentDynamicsModel.load(args.checkpoint, variant=args.variants[0])
    result = run_experiment_matrix(
        train_data, test_data, _out_root(args),
        tasks=tuple(args.tasks), ratios=tuple(args.ratios),
        variants=tuple(args.variants), seed=args.seed,
        train_config=_train_config(args) if not args.checkpoint else None,
        model=model, n_plots=args.plots,
    )
    print(format_csv(result.rows), end="")
    print(f"csv: {result.csv_path}")
    for task, ratio, variant, msg in result.failures:
        print(f"FAILED cell ({task}, {ratio}, {variant}): {msg}", file=sys.stderr)
    return 1 if result.failures else 0


def cmd_plot(args) -> int:
    from .evaluation import emit_plots

    dataset = load_dataset(args.data)
    model = LatentDynamicsModel.load(args.checkpoint, variant=args.variant)
    spec = ExperimentSpec(task=args.task, observed_ratio=args.ratio,
                          variant=args.variant, seed=args.seed)
    paths = emit_plots(model, dataset, spec, _out_root(args), n_plots=args.plots)
    for p in paths:
        print(f"wrote {p}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="graphode",
        description="Latent graph ODE models for interacting-system dynamics",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file; flags override it")
        p.add_argument("--out", help="output directory (default: $GRAPHODE_OUT or .)")
        p.add_argument("--seed", type=int, default=0)
        p.set_defaults(_subparser=p)

    p = sub.add_parser("gen-data", help="simulate and store a dataset")
    common(p)
    p.add_argument("--system", choices=("spring", "charged"), default="spring")
    p.add_argument("--samples", type=int, default=500)
    p.add_argument("--objects", type=int, default=3)
    p.add_argument("--with-future", action="store_true",
                   help="double the horizon and store extrapolation targets")
    p.add_argument("--name", default="dataset.bin")
    p.set_defaults(func=cmd_gen_data)

    def train_opts(p):
        p.add_argument("--lr", type=float, default=5e-4)
        p.add_argument("--batch-size", type=int, default=32)
        p.add_argument("--epochs", type=int, default=100)
        p.add_argument("--kl-weight", type=float, default=1.0)
        p.add_argument("--ratio", type=float, default=0.4)
        p.add_argument("--ratio-jitter", type=float, default=0.0,
                       help="train each sample at a ratio drawn uniformly "
                            "from [ratio, ratio + jitter]")
        p.add_argument("--task", choices=("interpolation", "extrapolation"),
                       default="interpolation")
        p.add_argument("--variant", default="full")
        p.add_argument("--log-timing", action="store_true",
                       help="include wall time in metric records")
        p.add_argument("--augment-rotations", action="store_true",
                       help="random planar rotation of each training sample")

    p = sub.add_parser("train", help="train a model on a stored dataset")
    common(p)
    train_opts(p)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--task", choices=("interpolation", "extrapolation"),
                   default="interpolation")
    p.add_argument("--ratio", type=float, default=0.4)
    p.add_argument("--variant", default="full")
    p.add_argument("--baselines", action="store_true",
                   help="also report zero and carry-forward baselines")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("matrix", help="run the task/ratio/variant experiment matrix")
    common(p)
    train_opts(p)
    p.add_argument("--train-data", required=True)
    p.add_argument("--test-data", required=True)
    p.add_argument("--checkpoint", help="evaluate this checkpoint instead of training")
    p.add_argument("--tasks", nargs="+", default=["interpolation"])
    p.add_argument("--ratios", nargs="+", type=float, default=[0.4, 0.6, 0.8])
    p.add_argument("--variants", nargs="+", default=["full"])
    p.add_argument("--plots", type=int, default=2, help="trajectory figures per cell")
    p.set_defaults(func=cmd_matrix)

    p = sub.add_parser("plot", help="render trajectory figures for a checkpoint")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--task", choices=("interpolation", "extrapolation"),
                   default="interpolation")
    p.add_argument("--ratio", type=float, default=0.4)
    p.add_argument("--variant", default="full")
    p.add_argument("--plots", type=int, default=2)
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    args = _merge(args)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
