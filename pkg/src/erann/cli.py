"""Command-line entry point: ``erann <command> ...``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import re
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .complexity import format_report
from .config import RunConfig, apply_overrides, load_config, serialize_config
from .dsp import MelConfig
from .errors import ErannError, InvalidConfig, NumericFailure
from .featcache import cached_features
from .manifest import load_dataset, load_manifest, read_class_list
from .metrics import accuracy, mean_average_precision
from .model import ErannConfig, apply_ema, build, forward, predict_in_batches
from .training import dataset_features, fine_tune, task_for_head, train
from .verify import run_suite

log = logging.getLogger("erann")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _kv(text: str) -> tuple:
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    key, value = text.split("=", 1)
    return key.strip(), value


def _run_config(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    overrides = list(getattr(args, "set", None) or [])
    for flag, key in (("seed", "seed"), ("iterations", "train.total_iterations"), ("batch_size", "train.batch_size")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides.append((key, str(value)))
    return apply_overrides(cfg, overrides)


def _load_data(manifest, classes, fold_filter=None):
    class_list = read_class_list(classes)
    entries = load_manifest(manifest, class_list)
    if fold_filter is not None:
        entries = [e for e in entries if fold_filter(e.fold)]
    return load_dataset(entries, class_list), class_list


def _split(args):
    """Training and validation sets from the manifest flags."""
    fold = getattr(args, "holdout_fold", None)
    if fold is None:
        train_set, class_list = _load_data(args.manifest, args.classes)
    else:
        train_set, class_list = _load_data(args.manifest, args.classes, lambda f: f != fold)
    val_set = None
    if getattr(args, "val_manifest", None):
        val_set, _ = _load_data(args.val_manifest, args.classes)
    elif fold is not None:
        val_set, _ = _load_data(args.manifest, args.classes, lambda f: f == fold)
    return train_set, val_set, class_list


def _write_outputs(out: Path, result, cfg: RunConfig) -> None:
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "last.ckpt", result.state, result.ema)
    if result.best_state is not None:
        save_checkpoint(out / "best.ckpt", result.best_state)
    (out / "config.txt").write_text(serialize_config(cfg))
    print(f"best_iteration={result.best_iteration} best_metric={result.best_metric}")
    print(f"wrote {out / 'last.ckpt'}")


# --------------------------------------------------------------------------
# commands


def cmd_features(args) -> int:
    cfg = _run_config(args).validate()
    class_list = read_class_list(args.classes)
    entries = load_manifest(args.manifest, class_list)
    reused = 0
    for e in entries:
        values, path, hit = cached_features(e.path, args.cache, cfg.features)
        reused += hit
        print(f"{e.path} -> {path} {values.shape[0]}x{values.shape[1]}{' (cached)' if hit else ''}")
    print(f"{len(entries)} clips, {reused} reused from cache")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _run_config(args)
    train_set, val_set, class_list = _split(args)
    cfg = dataclasses.replace(cfg, model=dataclasses.replace(cfg.model, n_classes=len(class_list))).validate()
    state = build(cfg.model, seed=cfg.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = train(state, train_set, cfg.train_config(), val=val_set, trace_path=out / "trace.txt")
    _write_outputs(out, result, cfg)
    return EXIT_OK


def cmd_finetune(args) -> int:
    state, _ = load_checkpoint(args.checkpoint)
    head = args.head or state.config.head
    if args.config is None:
        # fine-tuning defaults: constant 1e-4 and the task implied by the head,
        # still overridable with --set
        defaults = [("train.lr_policy", "constant"), ("train.lr", "0.0001"), ("train.task", task_for_head(head))]
        args.set = defaults + list(args.set or [])
    cfg = _run_config(args)
    if args.config is not None and args.head is None:
        head = cfg.model.head
    train_set, val_set, class_list = _split(args)
    model = dataclasses.replace(state.config, n_classes=len(class_list), head=head)
    cfg = dataclasses.replace(cfg, model=model).validate()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = fine_tune(state, train_set, cfg.train_config(), head=head, val=val_set, trace_path=out / "trace.txt")
    _write_outputs(out, result, cfg)
    return EXIT_OK


def cmd_eval(args) -> int:
    state, ema = load_checkpoint(args.checkpoint)
    if ema is not None and not args.raw:
        state = apply_ema(state, ema)
    dataset, class_list = _load_data(args.manifest, args.classes)
    if dataset.n_classes != state.config.n_classes:
        raise InvalidConfig(
            f"checkpoint has {state.config.n_classes} classes, class list has {dataset.n_classes}"
        )
    task = args.task or task_for_head(state.config.head)
    scores = predict_in_batches(state, dataset_features(dataset, MelConfig()))
    if task == "classification":
        print(f"clips={len(dataset)} task={task} accuracy={accuracy(scores, dataset.targets):.6f}")
        return EXIT_OK
    rep = mean_average_precision(scores, dataset.targets, report=True)
    print(f"clips={len(dataset)} task={task} mAP={rep.value:.6f}")
    for k, ap in sorted(rep.per_class.items()):
        print(f"class={class_list[k]} AP={ap:.6f}")
    if rep.skipped:
        print("skipped (no positives): " + ", ".join(class_list[k] for k in rep.skipped))
    return EXIT_OK


_MODEL_NAME = re.compile(r"^ERANN-(\d)-(\d+)$", re.IGNORECASE)


def _model_from_args(args) -> ErannConfig:
    W, s_m = args.W, args.s_m
    if args.model:
        m = _MODEL_NAME.match(args.model)
        if not m:
            raise InvalidConfig(f"--model: expected ERANN-<s_m>-<W>, got {args.model!r}")
        s_m, W = int(m.group(1)), int(m.group(2))
    return ErannConfig(W, s_m, args.N, "sigmoid").validate()


def cmd_analyze(args) -> int:
    print(format_report(_model_from_args(args), args.t))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    ok = run_suite(include_model=not args.operators_only)
    print("gradcheck: " + ("passed" if ok else "FAILED"))
    return EXIT_OK if ok else EXIT_NUMERIC


def cmd_bench(args) -> int:
    config = _model_from_args(args)
    state = build(config, seed=0)
    rng = np.random.default_rng(0)
    for b in args.batch_sizes:
        x = rng.standard_normal((b, 128, 128 * args.t)).astype(np.float32)
        forward(state, x)  # warm-up
        start = time.perf_counter()
        for _ in range(args.repeats):
            forward(state, x)
        elapsed = (time.perf_counter() - start) / args.repeats
        print(f"model={config.name} t={args.t}s batch={b} sec/batch={elapsed:.4f} clips/sec={b / elapsed:.2f}")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def _add_run_options(p, iterations=True):
    p.add_argument("--config", help="key=value run configuration file")
    p.add_argument("--set", type=_kv, action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")
    p.add_argument("--seed", type=int)
    if iterations:
        p.add_argument("--iterations", type=int)
        p.add_argument("--batch-size", type=int)


def _add_data_options(p):
    p.add_argument("--manifest", required=True, help="CSV with header path,labels,fold,group")
    p.add_argument("--classes", required=True, help="class list, one name per line")


def _add_model_options(p):
    p.add_argument("--model", help="shorthand ERANN-<s_m>-<W>")
    p.add_argument("--W", type=int, default=1, help="widening factor")
    p.add_argument("--s-m", dest="s_m", type=int, default=0, help="stages with temporal stride 4 (0..3)")
    p.add_argument("--N", type=int, default=527, help="number of classes")
    p.add_argument("--t", type=int, default=10, help="input length in seconds")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="erann", description="ERANN audio recognition toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("features", help="compute and cache log-mel spectrograms")
    _add_data_options(p)
    p.add_argument("--cache", required=True, help="cache directory")
    _add_run_options(p, iterations=False)
    p.set_defaults(func=cmd_features)

    for name, func, help_ in (
        ("train", cmd_train, "train a model from scratch"),
        ("finetune", cmd_finetune, "transfer a checkpoint to a new task and train"),
    ):
        p = sub.add_parser(name, help=help_)
        _add_data_options(p)
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--val-manifest", help="held-out manifest for early stopping")
        p.add_argument("--holdout-fold", type=int, help="validate on this manifest fold, train on the rest")
        _add_run_options(p)
        if name == "finetune":
            p.add_argument("--checkpoint", required=True)
            p.add_argument("--head", choices=("sigmoid", "softmax"))
        p.set_defaults(func=func)

    p = sub.add_parser("eval", help="score a checkpoint on a manifest")
    _add_data_options(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--task", choices=("tagging", "classification"))
    p.add_argument("--raw", action="store_true", help="use live weights instead of the EMA shadow")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="parameter count, MACs and stage shapes")
    _add_model_options(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("gradcheck", help="finite-difference verification of all operators")
    p.add_argument("--operators-only", action="store_true", help="skip the whole-model check")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("bench", help="time eval-mode forward passes")
    _add_model_options(p)
    p.set_defaults(t=1)
    p.add_argument("--batch-sizes", type=lambda s: [int(v) for v in s.split(",")], default=[1, 32])
    p.add_argument("--repeats", type=int, default=3)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except InvalidConfig as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericFailure as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ErannError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
