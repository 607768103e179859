"""Command-line front end.

Subcommands: corrupt (transform a dataset on disk), knn-eval and linear-eval
(accuracy between embedding files, JSON to stdout), feat-metrics (uniformity
and class-distance report), train-probe (fit the MLP probe, exporting
per-checkpoint embeddings), run (experiment config to report), inspect
(describe a dataset or embedding file).
Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric degeneracy.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from .datasets import read_embeddings, write_embeddings, write_image_dir
from .errors import BenchError, ConfigError
from .evaluation import (
    KnnConfig,
    LinearProbeConfig,
    evaluate_linear,
    knn_predict,
    train_linear_probe,
)
from .harness import load_dataset, parse_experiment, run_experiment
from .metrics import feature_distance, uniformity
from .pipeline import apply_pipeline, pipeline_from_text
from .probe import MlpModel, TrainConfig, train

log = logging.getLogger("corruptbench")


def _read_text(path: str) -> str:
    from .errors import DataError

    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise DataError(f"cannot read {path!r}: {exc}") from exc


def _print_json(payload: dict) -> None:
    print(json.dumps(payload, sort_keys=True, separators=(",", ":")))


def _cmd_corrupt(args) -> int:
    ds = load_dataset(args.src)
    pipe = pipeline_from_text(_read_text(args.pipeline))
    if args.seed is not None:
        pipe = pipe.with_seed(args.seed)
    out = apply_pipeline(ds, pipe, epoch=args.epoch)
    write_image_dir(out, args.out)
    h, w, c = out.image_shape
    print(f"wrote {len(out)} images ({h}x{w}x{c}) to {args.out}")
    return 0


def _cmd_knn_eval(args) -> int:
    bank = read_embeddings(args.train)
    queries = read_embeddings(args.test)
    cfg = KnnConfig(k=args.k, tau=args.tau)
    _, result = knn_predict(bank, queries, cfg)
    _print_json(result.to_dict())
    return 0


def _cmd_linear_eval(args) -> int:
    bank = read_embeddings(args.train)
    queries = read_embeddings(args.test)
    cfg = LinearProbeConfig(
        epochs=args.epochs,
        batch_size=args.batch,
        learning_rate=args.lr,
        weight_decay=args.weight_decay,
        seed=args.seed,
    )
    model, _ = train_linear_probe(bank, cfg)
    result = evaluate_linear(model, queries)
    _print_json(result.to_dict())
    return 0


def _parse_pairs(text: str):
    if text in ("auto", "exact"):
        return text
    try:
        return int(text)
    except ValueError:
        raise ConfigError(
            f"--pairs takes 'auto', 'exact', or a sample count, got {text!r}"
        ) from None


def _cmd_feat_metrics(args) -> int:
    emb = read_embeddings(args.emb)
    pairs = _parse_pairs(args.pairs)
    if args.class_id is not None:
        classes = [args.class_id]
    else:
        classes = list(range(emb.num_classes))
    overall = uniformity(emb, class_id=args.class_id, pairs=pairs)
    per_class = [uniformity(emb, class_id=c, pairs=pairs).value for c in classes]
    matrix = [
        [feature_distance(emb, i, j) for j in classes] for i in classes
    ]
    _print_json(
        {
            "uniformity": overall.value,
            "per_class_uniformity": per_class,
            "distance_matrix": matrix,
        }
    )
    return 0


def _cmd_train_probe(args) -> int:
    train_ds = load_dataset(args.data)
    eval_ds = load_dataset(args.eval_data, num_classes=train_ds.num_classes)
    input_dim = int(np.prod(train_ds.image_shape))
    hidden = [int(part) for part in args.hidden.split(",") if part.strip()]
    sizes = [input_dim, *hidden, args.feat, train_ds.num_classes]
    cfg = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch,
        learning_rate=args.lr,
        lam=args.lam,
        seed=args.seed,
        checkpoint_every=args.checkpoint_every,
    )
    pipeline = None
    if args.pipeline:
        pipeline = pipeline_from_text(_read_text(args.pipeline))
    model = MlpModel.initialize(sizes, cfg.seed)
    result = train(model, train_ds, eval_ds, cfg, pipeline=pipeline)
    os.makedirs(args.out_dir, exist_ok=True)
    for epoch, emb in zip(result.checkpoint_epochs, result.checkpoints):
        write_embeddings(emb, os.path.join(args.out_dir, f"checkpoint_{epoch:04d}.emb"))
    series_path = os.path.join(args.out_dir, "series.csv")
    acc = result.series.per_class_accuracy
    with open(series_path, "w", encoding="utf-8") as fh:
        header = ["epoch"] + [f"class_{c}" for c in range(acc.shape[1])] + ["mean"]
        fh.write(",".join(header) + "\n")
        for epoch, row in zip(result.checkpoint_epochs, acc):
            cells = [str(epoch)] + [f"{v:.6f}" for v in row] + [f"{row.mean():.6f}"]
            fh.write(",".join(cells) + "\n")
    final_acc = float(acc[-1].mean())
    print(
        f"trained {cfg.epochs} epochs, final loss {result.losses[-1]:.4f}, "
        f"mean per-class knn acc {final_acc * 100:.2f}%"
    )
    print(f"wrote {len(result.checkpoints)} checkpoints and {series_path}")
    return 0


def _cmd_run(args) -> int:
    cfg = parse_experiment(_read_text(args.config))
    base_dir = os.path.dirname(os.path.abspath(args.config))
    report = run_experiment(cfg, base_dir=base_dir)
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            fh.write(report.to_json())
    if args.csv:
        with open(args.csv, "w", encoding="utf-8") as fh:
            fh.write(report.to_csv())
    if not args.quiet:
        print(report.to_csv(), end="")
    return 0


def _cmd_inspect(args) -> int:
    if args.emb:
        emb = read_embeddings(args.emb)
        norm = "normalized" if emb.normalized else "raw"
        print(f"{args.emb}: {len(emb)} x {emb.dim} {norm} float32, "
              f"{emb.num_classes} classes")
        return 0
    ds = load_dataset(args.data)
    h, w, c = ds.image_shape
    from .datasets import class_histogram

    counts = class_histogram(ds.labels, ds.num_classes)
    print(f"{args.data}: {len(ds)} images {h}x{w}x{c}, {ds.num_classes} classes")
    print("per-class counts: " + " ".join(str(int(v)) for v in counts))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bench",
        description="Deterministic corruption-robustness benchmark for image models.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("corrupt", help="apply a transform pipeline to a dataset")
    p.add_argument("--in", dest="src", required=True,
                   help="image dir or CIFAR-style binary")
    p.add_argument("--out", required=True, help="output image directory")
    p.add_argument("--pipeline", required=True, help="pipeline config file")
    p.add_argument("--seed", type=int, default=None, help="override pipeline seed")
    p.add_argument("--epoch", type=int, default=0, help="epoch index for aug streams")
    p.set_defaults(func=_cmd_corrupt)

    p = sub.add_parser("knn-eval", help="weighted-KNN accuracy between embedding files")
    p.add_argument("--train", required=True, help="neighbor bank (EMB1)")
    p.add_argument("--test", required=True, help="query set (EMB1)")
    p.add_argument("--k", type=int, default=50)
    p.add_argument("--tau", type=float, default=0.07)
    p.set_defaults(func=_cmd_knn_eval)

    p = sub.add_parser("linear-eval", help="linear-probe accuracy between embedding files")
    p.add_argument("--train", required=True, help="probe training set (EMB1)")
    p.add_argument("--test", required=True, help="held-out set (EMB1)")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch", type=int, default=128)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--weight-decay", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_linear_eval)

    p = sub.add_parser("feat-metrics", help="uniformity and class-distance report")
    p.add_argument("--emb", required=True, help="EMB1 file")
    p.add_argument("--class", dest="class_id", type=int, default=None,
                   help="restrict to one class id")
    p.add_argument("--pairs", default="auto",
                   help="'auto', 'exact', or a pair sample count")
    p.set_defaults(func=_cmd_feat_metrics)

    p = sub.add_parser("train-probe", help="fit the MLP probe and export checkpoints")
    p.add_argument("--data", required=True, help="training dataset")
    p.add_argument("--eval", dest="eval_data", required=True,
                   help="evaluation dataset (checkpoint embeddings come from here)")
    p.add_argument("--lambda", dest="lam", type=float, default=0.0,
                   help="uniformity loss weight")
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True,
                   help="directory for checkpoint EMB1 files and series.csv")
    p.add_argument("--hidden", default="512", help="comma list of hidden sizes")
    p.add_argument("--feat", type=int, default=128)
    p.add_argument("--batch", type=int, default=128)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--checkpoint-every", type=int, default=1)
    p.add_argument("--pipeline", default=None, help="training-time transform config")
    p.set_defaults(func=_cmd_train_probe)

    p = sub.add_parser("run", help="run an experiment config, emit reports")
    p.add_argument("--config", required=True)
    p.add_argument("--json", default=None, help="write the JSON report here")
    p.add_argument("--csv", default=None, help="write the CSV grid here")
    p.add_argument("--quiet", action="store_true", help="no stdout table")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("inspect", help="describe a dataset or embedding file")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--data", help="image dir or CIFAR-style binary")
    group.add_argument("--emb", help="EMB1 file")
    p.set_defaults(func=_cmd_inspect)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except BenchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
