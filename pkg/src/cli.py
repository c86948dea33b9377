"""Command-line interface for BiERU.

Subcommands::

    bieru synth --seed 7 --out-dir data/ --conversations 20 --turns 5..10 --d 10 --classes 6
    bieru train --seed 7 --train data/train.jsonl --checkpoint run/model.ckpt --preset synthetic
    bieru eval --checkpoint run/model.ckpt --data data/test.jsonl --confusion cm.csv
    bieru predict --checkpoint run/model.ckpt --data data/test.jsonl
    bieru gradcheck
    bieru params --d 100 --k 100 --rank 10 --compare-full-rank
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, Generator, List, Optional, Tuple

import numpy as np

from . import __version__
from .bieru import init_model
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import PRESETS, ConfigError, RunConfig, resolve
from .data import DatasetError, draw_geometry, load_dataset, synth_dataset, write_dataset
from .gntb import FULL_RANK, LOW_RANK, GntbConfig, count_params
from .gradcheck import gradcheck_stream
from .heads import CLASSIFY, REGRESS
from .metrics import ZeroVarianceError, confusion_matrix, write_confusion_csv
from .numkit import NonFiniteError, SeededRng, ShapeError, StaleCacheError
from .train import (
    TrainState,
    evaluate,
    point_predictions,
    predict_dataset,
    report_params,
    train_stream,
)

logger = logging.getLogger(__name__)

# most specific first
ERROR_CATEGORIES: List[Tuple[type, str]] = [
    (ConfigError, "config"),
    (DatasetError, "data"),
    (CheckpointError, "checkpoint"),
    (ShapeError, "shape"),
    (NonFiniteError, "numeric"),
    (StaleCacheError, "internal"),
    (ZeroVarianceError, "metric"),
    (OSError, "io"),
    (ValueError, "value"),
]


def _categorize(exc: BaseException) -> str:
    for cls, name in ERROR_CATEGORIES:
        if isinstance(exc, cls):
            return name
    return "error"


def _parse_turns(spec: str) -> Tuple[int, int]:
    """Parse ``'5..10'`` (or a single number) into an inclusive range."""
    try:
        if ".." in spec:
            lo, hi = (int(x) for x in spec.split("..", 1))
        else:
            lo = hi = int(spec)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid turns range: {spec!r}")
    if not 1 <= lo <= hi:
        raise argparse.ArgumentTypeError(f"invalid turns range: {spec!r}")
    return lo, hi


def _drain(lines: Generator[str, None, int]) -> int:
    """Print every yielded line and return the generator's exit code."""
    while True:
        try:
            line = next(lines)
        except StopIteration as stop:
            return stop.value or 0
        print(line, end="", flush=True)


def _dumps(record: Dict[str, Any]) -> str:
    return json.dumps(record, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# Shared flags
# ---------------------------------------------------------------------------
def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="FILE", help="JSON config file (flags override it)")
    p.add_argument(
        "--preset",
        choices=sorted(PRESETS),
        help="Hyperparameter preset (default: none)",
    )


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model")
    g.add_argument("--d", type=int, help="Utterance feature dimension (default: from data, else 100)")
    g.add_argument("--k", type=int, help="Number of tensor slices (default: d)")
    g.add_argument("--rank", type=int, help="Low-rank factor rank (default: 10)")
    g.add_argument("--gntb-mode", dest="gntb_mode", choices=[LOW_RANK, FULL_RANK])
    g.add_argument(
        "--activation",
        choices=["tanh", "sigmoid", "relu"],
        help="GNTB activation (default: sigmoid to classify, relu to regress)",
    )
    g.add_argument("--hidden", type=int, help="LSTM hidden size (default: 100)")
    g.add_argument("--filters", type=int, help="Convolution filter count (default: 50)")
    g.add_argument("--kernel", type=int, help="Convolution window length (default: 3)")
    g.add_argument("--variant", choices=["gc", "lc"], help="Context wiring (default: lc)")
    g.add_argument("--task", choices=[CLASSIFY, REGRESS], help="Head kind (default: from data)")
    g.add_argument("--classes", dest="n_class", type=int, help="Number of classes (default: from data)")
    g.add_argument(
        "--ablation",
        choices=["full", "gntb-only", "tfe-only"],
        help="Module ablation (default: full)",
    )
    g.add_argument("--head-bias", dest="head_bias", action="store_true", default=None)


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("training")
    g.add_argument("--seed", type=int, help="Run seed (required)")
    g.add_argument("--epochs", type=int, help="Epoch count (default: 60)")
    g.add_argument("--lr", type=float, help="Adam learning rate (default: 0.0001)")
    g.add_argument("--dropout", type=float, help="Dropout rate (default: 0.8)")
    g.add_argument("--l2", type=float, help="L2 weight (default: 0.001)")
    g.add_argument("--l2-form", dest="l2_form", choices=["squared-norm", "norm"])
    g.add_argument("--patience", type=int, help="Early-stopping patience on validation loss")
    g.add_argument("--train", metavar="FILE", help="Training dataset")
    g.add_argument("--val", metavar="FILE", help="Validation dataset")
    g.add_argument("--checkpoint", metavar="FILE", help="Checkpoint to write")
    g.add_argument("--log-file", dest="log_file", metavar="FILE", help="Append epoch records here")
    g.add_argument("--resume", metavar="FILE", help="Resume from a checkpoint with optimizer state")


def _flags(args: argparse.Namespace) -> Dict[str, Any]:
    return {k: v for k, v in vars(args).items() if v is not None}


def _data_defaults(manifest) -> Dict[str, Any]:
    out: Dict[str, Any] = {"d": manifest.d, "task": manifest.task}
    if manifest.n_class is not None:
        out["n_class"] = manifest.n_class
    return out


def _resolve(args: argparse.Namespace, manifest=None) -> RunConfig:
    flags = _flags(args)
    if manifest is not None:
        # data dimensions beat presets and files, explicit flags beat data
        flags = {**_data_defaults(manifest), **flags}
    return resolve(flags, preset=args.preset, config_file=args.config)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------
def cmd_synth(args: argparse.Namespace) -> int:
    rng = SeededRng(args.seed)
    n_class = args.n_class if args.n_class is not None else 6
    task = args.task or CLASSIFY
    geometry = draw_geometry(rng, args.d, n_class, args.separation)
    counts = {
        "train": args.conversations,
        "val": args.val_conversations if args.val_conversations is not None else max(1, args.conversations // 2),
        "test": args.test_conversations if args.test_conversations is not None else max(1, args.conversations // 2),
    }
    generator = {
        "seed": args.seed,
        "d": args.d,
        "n_class": n_class,
        "task": task,
        "turns": list(args.turns),
        "separation": args.separation,
        "shift_prob": args.shift_prob,
        "noise": args.noise,
        "counts": counts,
    }
    out_dir = Path(args.out_dir)
    for split, n in counts.items():
        dataset = synth_dataset(
            rng,
            n,
            args.turns,
            args.d,
            n_class,
            task=task,
            separation=args.separation,
            shift_prob=args.shift_prob,
            noise=args.noise,
            geometry=geometry,
            split=split,
        )
        dataset.manifest.extra["generator"] = generator
        path = write_dataset(dataset, out_dir / f"{split}.jsonl")
        print(f"{path}: {len(dataset)} conversations, {dataset.num_utterances} utterances")
    return 0


def _train_lines(args: argparse.Namespace) -> Generator[str, None, int]:
    train_path = args.train
    if train_path is None and args.config:
        train_path = resolve({}, config_file=args.config).train
    if train_path is None:
        raise ConfigError("--train is required")
    train_set = load_dataset(train_path)
    run = _resolve(args, train_set.manifest)
    config = run.train_config()
    model_config = run.model_config()
    loss_config = run.loss_config()
    val_set = load_dataset(run.val) if run.val else None

    if args.resume:
        ckpt = load_checkpoint(args.resume, expected=model_config)
        model = ckpt.model
        state = ckpt.train_state
        if state is None:
            raise CheckpointError(f"{args.resume} holds no optimizer state to resume from")
        state.adam.lr = config.lr
    else:
        model = init_model(model_config, SeededRng(config.seed))
        state = TrainState.fresh(model, config)

    run_record = run.to_dict()
    yield _dumps({"run_config": run_record, "params": report_params(model).total})
    log = open(run.log_file, "a", encoding="utf-8") if run.log_file else None
    try:
        for record in train_stream(model, train_set, state, config, loss_config, val_set):
            line = _dumps(record.to_dict())
            if log is not None:
                log.write(line)
                log.flush()
            yield line
    finally:
        if log is not None:
            log.close()
    if run.checkpoint:
        save_checkpoint(run.checkpoint, model, state, run_record)
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    return _drain(_train_lines(args))


def _load_for_eval(args: argparse.Namespace):
    ckpt = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.data)
    if dataset.manifest.d != ckpt.model.config.d:
        raise ShapeError(
            f"dataset has d={dataset.manifest.d}, model expects d={ckpt.model.config.d}"
        )
    return ckpt, dataset


def cmd_eval(args: argparse.Namespace) -> int:
    ckpt, dataset = _load_for_eval(args)
    model = ckpt.model
    run = ckpt.run_config
    loss_config = None
    if run:
        loss_config = resolve({k: v for k, v in run.items() if v is not None}).loss_config()
    record = evaluate(model, dataset, loss_config, workers=args.workers)
    record["run_config"] = run
    record["dataset"] = dataset.manifest.to_dict()

    if args.confusion or args.features:
        results = predict_dataset(model, dataset.conversations, args.workers)
        if args.confusion:
            if model.config.task != CLASSIFY:
                raise ConfigError("--confusion needs a classification model")
            preds = np.concatenate([point_predictions(model, out) for out, _ in results])
            labels = np.concatenate([c.labels for c in dataset.conversations])
            cm = confusion_matrix(preds, labels, model.config.n_class)
            names = dataset.manifest.label_names or [str(c) for c in range(model.config.n_class)]
            write_confusion_csv(cm, args.confusion, names)
            record["confusion_csv"] = str(args.confusion)
        if args.features:
            feats = np.concatenate([f for _, f in results], axis=0)
            Path(args.features).parent.mkdir(parents=True, exist_ok=True)
            np.savetxt(args.features, feats, delimiter=",", fmt="%.17g")
            record["features_csv"] = str(args.features)

    line = _dumps(record)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(line)
    print(line, end="", flush=True)
    return 0


def cmd_predict(args: argparse.Namespace) -> int:
    ckpt, dataset = _load_for_eval(args)
    model = ckpt.model
    results = predict_dataset(model, dataset.conversations, args.workers)
    lines = [_dumps({"run_config": ckpt.run_config})]
    for conv, (out, _) in zip(dataset.conversations, results):
        rec: Dict[str, Any] = {"id": conv.id}
        preds = point_predictions(model, out)
        if model.config.task == CLASSIFY:
            rec["predictions"] = [int(x) for x in preds]
            rec["probabilities"] = [[float(x) for x in row] for row in out]
        else:
            rec["predictions"] = [float(x) for x in preds]
        lines.append(_dumps(rec))
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text("".join(lines))
    else:
        for line in lines:
            print(line, end="", flush=True)
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    return _drain(gradcheck_stream(seed=args.seed, corrupt=args.corrupt))


def cmd_params(args: argparse.Namespace) -> int:
    run = _resolve(args)
    model = init_model(run.model_config(), SeededRng(0))
    report = report_params(model)
    record: Dict[str, Any] = {
        "run_config": run.to_dict(),
        "modules": report.modules,
        "total": report.total,
        "closed_form": dict(report.closed_form),
    }
    if args.compare_full_rank:
        cfg = model.config.gntb
        for mode in (LOW_RANK, FULL_RANK):
            alt = GntbConfig(d=cfg.d, k=cfg.k, r=cfg.r, activation=cfg.activation, mode=mode)
            record["closed_form"][f"gntb_per_direction_{mode}"] = count_params(alt)
    if args.json:
        print(_dumps(record), end="")
        return 0
    if args.tensors:
        for name, count in report.tensors.items():
            print(f"{name:<24} {count:>10}")
    for line in report.lines():
        print(line)
    for name, count in record["closed_form"].items():
        print(f"{name:<24} {count:>10}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bieru",
        description="Bidirectional emotional recurrent unit for sentiment in conversations.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging on stderr")
    parser.add_argument("-q", "--quiet", action="store_true", help="Only warnings on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="Generate synthetic train/val/test conversations")
    p.add_argument("--seed", type=int, required=True, help="Generator seed")
    p.add_argument("--out-dir", dest="out_dir", default="data", help="Output directory (default: data)")
    p.add_argument("--conversations", type=int, default=20, help="Training conversations (default: 20)")
    p.add_argument("--val-conversations", dest="val_conversations", type=int)
    p.add_argument("--test-conversations", dest="test_conversations", type=int)
    p.add_argument("--turns", type=_parse_turns, default=(5, 10), help="Turns range, e.g. 5..10")
    p.add_argument("--d", type=int, default=10, help="Feature dimension (default: 10)")
    p.add_argument("--classes", dest="n_class", type=int, help="Latent classes (default: 6)")
    p.add_argument("--task", choices=[CLASSIFY, REGRESS])
    p.add_argument("--separation", type=float, default=5.0, help="Center scale (default: 5)")
    p.add_argument("--shift-prob", dest="shift_prob", type=float, default=0.2)
    p.add_argument("--noise", type=float, default=1.0, help="Feature noise std (default: 1)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="Train a model")
    _add_config_flags(p)
    _add_model_flags(p)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    for name, func, help_text in (
        ("eval", cmd_eval, "Evaluate a checkpoint on a dataset"),
        ("predict", cmd_predict, "Write eval-mode predictions per conversation"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--checkpoint", required=True, metavar="FILE")
        p.add_argument("--data", required=True, metavar="FILE")
        p.add_argument("--out", metavar="FILE", help="Also write the output here")
        p.add_argument("--workers", type=int, default=1, help="Evaluation threads (default: 1)")
        if name == "eval":
            p.add_argument("--confusion", metavar="CSV", help="Write the confusion matrix")
            p.add_argument("--features", metavar="CSV", help="Dump emotion features, one row each")
        p.set_defaults(func=func)

    p = sub.add_parser("gradcheck", help="Finite-difference check of every gradient")
    p.add_argument("--seed", type=int, default=0, help="Seed for the small configs (default: 0)")
    p.add_argument("--corrupt", default=None, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("params", help="Report parameter counts")
    _add_config_flags(p)
    _add_model_flags(p)
    p.add_argument("--compare-full-rank", dest="compare_full_rank", action="store_true")
    p.add_argument("--tensors", action="store_true", help="List every tensor")
    p.add_argument("--json", action="store_true", help="Machine-readable output")
    p.set_defaults(func=cmd_params)
    return parser


def main(argv: Optional[List[str]] = None) -> None:
    """Main entry point for the bieru CLI."""
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)

    try:
        sys.exit(args.func(args))
    except KeyboardInterrupt:
        print("\n--- interrupted ---", file=sys.stderr)
        sys.exit(130)
    except (ValueError, OSError) as exc:
        print(f"bieru: {_categorize(exc)}: {exc}", file=sys.stderr)
        sys.exit(1)


if __name__ == "__main__":
    main()
