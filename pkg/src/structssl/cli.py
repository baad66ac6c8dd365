"""Command-line interface: train, probe, interpret, mi-bench."""

from __future__ import annotations

import argparse
import csv
import io
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, TrainConfig, parse_config
from .data import DataError, Dataset, ShapesSpec, load_cifar10, synth_shapes
from .estimators import estimate_mi_discrete, estimate_mi_gaussian
from .evaluation import ProbeError, extract_features, linear_probe
from .exactinfo import GaussianPairSpec, JointError, random_joint
from .interpretation import InterpretationError, learn_masks, render_mask_grid
from .models import build_model
from .serialize import WeightFormatError, load_weights
from .tensor import DomainError, ShapeError
from .training import TrainingError, train

SYNTH_TRAIN_SEED = 100
SYNTH_TEST_SEED = 101

_USER_ERRORS = (ConfigError, DataError, TrainingError, ProbeError, InterpretationError,
                WeightFormatError, ShapeError, DomainError, JointError, ValueError,
                OSError)


def _load_dataset(selector: str, n: int, seed: int) -> Dataset:
    if selector == "synth":
        return synth_shapes(ShapesSpec(seed=seed), n)
    return load_cifar10(selector)


def _load_model(checkpoint: str, s: int, d: int, k: int):
    model = build_model(seed=0, s=s, d=d, k=k)
    model.load_arrays(load_weights(checkpoint))
    return model


def _cmd_train(args) -> int:
    cfg = parse_config(args.config) if args.config else TrainConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.max_iters is not None:
        cfg.max_iters = args.max_iters
    dataset = _load_dataset(cfg.dataset, args.train_size, SYNTH_TRAIN_SEED)
    result = train(cfg, dataset, out_dir=args.out)
    last = result.metrics[-1] if result.metrics else None
    bound = f"{last.bound:.6g}" if last else "n/a"
    print(f"trained {len(result.metrics)} iterations, final bound {bound}, "
          f"checkpoint {result.checkpoint_path}")
    return 0


def _csv_line(header: list[str], row: list) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(header)
    writer.writerow(row)
    return buf.getvalue().rstrip("\n")


def _cmd_probe(args) -> int:
    model = _load_model(args.checkpoint, args.s, args.d, args.k)
    if args.dataset == "synth":
        train_set = synth_shapes(ShapesSpec(seed=SYNTH_TRAIN_SEED), args.train_size)
        test_set = synth_shapes(ShapesSpec(seed=SYNTH_TEST_SEED), args.test_size)
        eval_feats = extract_features(model, test_set.images)
        eval_labels = test_set.labels
    else:
        train_set = load_cifar10(args.dataset)
        eval_feats = eval_labels = None
    feats = extract_features(model, train_set.images)
    result = linear_probe(feats, train_set.labels, epochs=args.epochs, seed=args.seed,
                          eval_features=eval_feats, eval_labels=eval_labels,
                          checkpoint_id=str(args.checkpoint))
    print(_csv_line(["accuracy", "epochs", "feature_dim", "checkpoint"],
                    [f"{result.accuracy:.6g}", result.epochs_trained,
                     result.feature_dim, result.checkpoint_id]))
    per_class = ", ".join(f"{v:.3f}" for v in result.per_class)
    print(f"probe accuracy {result.accuracy:.4f} after {result.epochs_trained} epochs; "
          f"per-class [{per_class}]")
    return 0


def _cmd_interpret(args) -> int:
    model = _load_model(args.checkpoint, args.s, args.d, args.k)
    if args.images == "synth":
        images = synth_shapes(ShapesSpec(seed=SYNTH_TEST_SEED), args.count).images
    else:
        images = load_cifar10(args.images).images[:args.count]
    masks, trace = learn_masks(model, images, iters=args.iters, lr=args.lr,
                               seed=args.seed, pairs_per_iter=args.pairs)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    grid_path = render_mask_grid(masks, images, out_dir / "masks.png")
    trace_path = out_dir / "loss_trace.csv"
    with open(trace_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "loss"])
        for i, value in enumerate(trace, start=1):
            writer.writerow([i, repr(value)])
    print(f"wrote {grid_path} and {trace_path}; final loss {trace[-1]:.6g}")
    return 0


def _cmd_mi_bench(args) -> int:
    header = ["estimator", "distribution", "true_mi", "estimate", "n", "seed"]
    if args.dist == "gaussian":
        spec = GaussianPairSpec(d=args.d, rho=args.rho)
        est = estimate_mi_gaussian(spec, n=args.n, seed=args.seed,
                                   n_bins=args.bins, steps=args.steps)
    else:
        cards = tuple(int(c) for c in args.cards.split(","))
        if len(cards) != 3:
            raise DataError(f"--cards needs three comma-separated sizes, got '{args.cards}'")
        joint = random_joint(cards, np.random.default_rng(args.seed))
        est = estimate_mi_discrete(joint, args.pair, n=args.n, seed=args.seed,
                                   steps=args.steps)
    print(_csv_line(header, [est.estimator, est.distribution, f"{est.true_mi:.6g}",
                             f"{est.estimate:.6g}", est.n, est.seed]))
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="structssl",
        description="Structured self-supervised learning toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run the SSL training loop")
    p_train.add_argument("--config", help="key=value config file")
    p_train.add_argument("--out", required=True, help="output directory")
    p_train.add_argument("--seed", type=int, help="override config seed")
    p_train.add_argument("--max-iters", type=int, help="override iteration cap")
    p_train.add_argument("--train-size", type=int, default=6000,
                         help="synthetic corpus size (default 6000)")
    p_train.set_defaults(func=_cmd_train)

    p_probe = sub.add_parser("probe", help="linear-probe a checkpoint")
    p_probe.add_argument("--checkpoint", required=True)
    p_probe.add_argument("--dataset", default="synth", help="'synth' or a CIFAR-10 dir")
    p_probe.add_argument("--epochs", type=int, default=100)
    p_probe.add_argument("--seed", type=int, default=0)
    p_probe.add_argument("--train-size", type=int, default=6000)
    p_probe.add_argument("--test-size", type=int, default=1500)
    for flag, default in (("--s", 8), ("--d", 8), ("--k", 2)):
        p_probe.add_argument(flag, type=int, default=default)
    p_probe.set_defaults(func=_cmd_probe)

    p_int = sub.add_parser("interpret", help="learn interpretation masks")
    p_int.add_argument("--checkpoint", required=True)
    p_int.add_argument("--images", default="synth", help="'synth' or a CIFAR-10 dir")
    p_int.add_argument("--iters", type=int, default=2000)
    p_int.add_argument("--out", required=True)
    p_int.add_argument("--count", type=int, default=16)
    p_int.add_argument("--lr", type=float, default=0.05)
    p_int.add_argument("--pairs", type=int, default=0,
                       help="pairs sampled per step (0 = all)")
    p_int.add_argument("--seed", type=int, default=0)
    for flag, default in (("--s", 8), ("--d", 8), ("--k", 2)):
        p_int.add_argument(flag, type=int, default=default)
    p_int.set_defaults(func=_cmd_interpret)

    p_mi = sub.add_parser("mi-bench", help="benchmark the sample-based MI estimator")
    p_mi.add_argument("--dist", choices=("gaussian", "discrete"), default="gaussian")
    p_mi.add_argument("--rho", type=float, default=0.8)
    p_mi.add_argument("--d", type=int, default=1)
    p_mi.add_argument("--n", type=int, default=10000)
    p_mi.add_argument("--seed", type=int, default=0)
    p_mi.add_argument("--bins", type=int, default=16)
    p_mi.add_argument("--steps", type=int, default=500)
    p_mi.add_argument("--cards", default="4,4,4", help="discrete joint cardinalities")
    p_mi.add_argument("--pair", default="XZ", choices=("XZ", "XA", "ZA"))
    p_mi.set_defaults(func=_cmd_mi_bench)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else 0
    try:
        return args.func(args)
    except _USER_ERRORS as e:
        message = " ".join(str(e).split())
        print(f"structssl: error: {message}", file=sys.stderr)
        return 1


def console_main() -> None:
    sys.exit(main())
