"""Command-line interface.

Exit codes: 0 success, 1 runtime or data error, 2 usage error. Machine-readable
results are printed to stdout as ``key=value`` lines.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from . import dataio
from .config import ConfigError, TrainConfig, load_config, parse_overrides
from .ensemble import ScoreSet, fuse_scores, top1_accuracy
from .network import extract_features
from .numeric_core import Rng
from .svm import SvmModel, decision_scores, fit_one_vs_all, predict_from_scores
from .trainer import TrainingError, params_from_checkpoint, run_pipeline

CHECKPOINT_NAME = "model.ufkm"
METRICS_NAME = "metrics.csv"


class UsageError(Exception):
    pass


def cmd_synth(args) -> int:
    try:
        ds = dataio.synth_dataset(args.classes, args.per_class, args.size, args.noise, Rng(args.seed))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    dataio.save_dataset(ds, args.out)
    print(f"images={len(ds)}")
    print(f"out={args.out}")
    return 0


def _train_config(args) -> TrainConfig:
    cfg = load_config(args.config) if args.config else TrainConfig()
    overrides = {}
    if args.preset:
        overrides["preset"] = args.preset
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value
    return cfg.with_overrides(**parse_overrides(overrides))


def cmd_train(args) -> int:
    cfg = _train_config(args)
    ds = dataio.load_dataset(args.data)
    os.makedirs(args.out, exist_ok=True)
    ckpt = os.path.join(args.out, CHECKPOINT_NAME)
    metrics = os.path.join(args.out, METRICS_NAME)
    resume = None
    if args.resume:
        resume = dataio.load_checkpoint(args.resume)
    elif os.path.exists(metrics):
        os.remove(metrics)
    _, history = run_pipeline(ds.images, cfg, checkpoint_path=ckpt, metrics_path=metrics, resume=resume,
                              stop_after=args.stop_after)
    print(f"epochs={len(history)}")
    print(f"checkpoint={ckpt}")
    print(f"metrics={metrics}")
    return 0


def cmd_extract(args) -> int:
    ck = dataio.load_checkpoint(args.checkpoint)
    params = params_from_checkpoint(ck)
    ds = dataio.load_dataset(args.data)
    if ds.images.shape[1:] != params.spec.input_shape:
        raise ValueError(f"dataset images {ds.images.shape[1:]} do not match network input "
                         f"{params.spec.input_shape}")
    feats = extract_features(params, ds.images)
    dataio.save_uft(feats, args.out)
    print(f"features={feats.shape[0]}x{feats.shape[1]}")
    return 0


def cmd_fit_svm(args) -> int:
    feats = dataio.load_uft(args.features)
    labels = dataio.load_labels(args.labels)
    if feats.ndim != 2 or len(labels) != len(feats):
        raise ValueError(f"features {feats.shape} and {len(labels)} labels do not line up")
    classes = args.classes or int(labels.max()) + 1
    model = fit_one_vs_all(feats, labels, classes, args.lam)
    ck = dataio.Checkpoint(tensors={"svm.weights": model.weights},
                           texts={"svm.lambda": repr(model.regularization)})
    dataio.save_checkpoint(ck, args.out)
    print(f"classes={classes}")
    return 0


def cmd_predict(args) -> int:
    ck = dataio.load_checkpoint(args.svm)
    model = SvmModel(ck.tensors["svm.weights"], float(ck.texts["svm.lambda"]))
    feats = dataio.load_uft(args.features)
    scores = decision_scores(model, feats)
    dataio.save_uft(scores, args.out_scores)
    print(f"scores={scores.shape[0]}x{scores.shape[1]}")
    return 0


def cmd_fuse(args) -> int:
    members = [ScoreSet(f"{i:04d}", dataio.load_uft(p)) for i, p in enumerate(args.scores)]
    fused = fuse_scores(members)
    dataio.save_uft(fused, args.out)
    print(f"members={len(members)}")
    return 0


def cmd_evaluate(args) -> int:
    truth = dataio.load_labels(args.labels)
    if args.scores:
        pred = predict_from_scores(dataio.load_uft(args.scores))
    else:
        pred = dataio.load_labels(args.pred)
    if len(pred) != len(truth):
        raise ValueError(f"{len(pred)} predictions vs {len(truth)} labels")
    print(f"top1={top1_accuracy(pred, truth)!r}")
    return 0


def cmd_selfcheck(args) -> int:
    from .selfcheck import run_all
    ok = run_all()
    print(f"selfcheck={'pass' if ok else 'fail'}")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="deepkmeans", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic archetype dataset")
    s.add_argument("--classes", type=int, default=4)
    s.add_argument("--per-class", type=int, default=500)
    s.add_argument("--size", type=int, default=16)
    s.add_argument("--noise", type=float, default=0.1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="unsupervised training by alternating clustering and SGD")
    s.add_argument("--data", required=True)
    s.add_argument("--config")
    s.add_argument("--preset", choices=["anet-mini", "vnet-mini"])
    s.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    s.add_argument("--resume", help="checkpoint to continue from")
    s.add_argument("--stop-after", type=int, help="stop after this many epochs (resumable)")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("extract", help="write feature-layer outputs as .uft")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("fit-svm", help="fit one-vs-all squared-hinge SVMs")
    s.add_argument("--features", required=True)
    s.add_argument("--labels", required=True)
    s.add_argument("--lambda", dest="lam", type=float, default=1.0)
    s.add_argument("--classes", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fit_svm)

    s = sub.add_parser("predict", help="write SVM decision scores")
    s.add_argument("--svm", required=True)
    s.add_argument("--features", required=True)
    s.add_argument("--out-scores", required=True)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("fuse", help="average score files")
    s.add_argument("--scores", nargs="+", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fuse)

    s = sub.add_parser("evaluate", help="print Top-1 accuracy")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--scores")
    g.add_argument("--pred")
    s.add_argument("--labels", required=True)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("selfcheck", help="run numerical self-checks")
    s.set_defaults(func=cmd_selfcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, dataio.FormatError, TrainingError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
