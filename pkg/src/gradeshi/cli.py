"""Command-line entry point.

Commands: split, train, transfer, evaluate, predict, export-metrics.
Runs are driven by a JSON config file, individual flags, or both; explicitly
given flags win over file values, and the fully resolved configuration is
echoed into the output directory so any run can be reproduced from its
artifacts alone.

Exit codes: 0 success, 2 usage errors, 1 runtime or data errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import architectures, checkpoint, data, report
from . import training as harness
from .errors import GradeshiError, TransferError


@dataclass
class RunConfig:
    data: str | None = None
    manifest: str | None = None
    category: str = "all"
    arch: str = "simple-cnn"
    image_size: int = 64
    epochs: int = 10
    batch_size: int = 32
    lr: float = 1e-3
    freeze_prefix: int = 0
    freeze_granularity: str = "block"
    seed: int = 0
    out: str | None = None
    train_fraction: float = 0.8
    subsample: int | None = None
    stage_widths: list[int] | None = None
    blocks_per_stage: int = 2
    dense_units: int = 128
    dropout_rate: float = 0.5
    invert: bool = True


_RUN_FIELDS = set(RunConfig.__dataclass_fields__)


def resolve_config(args: argparse.Namespace) -> tuple[RunConfig, set[str]]:
    """defaults < config file < explicitly passed flags.

    Also returns the set of keys that were set explicitly (file or flag).
    """
    merged = asdict(RunConfig())
    explicit: set[str] = set()
    config_path = getattr(args, "config", None)
    if config_path:
        with open(config_path, "r", encoding="utf-8") as fh:
            file_values = json.load(fh)
        unknown = set(file_values) - _RUN_FIELDS
        if unknown:
            raise GradeshiError(f"{config_path}: unknown config keys {sorted(unknown)}")
        merged.update(file_values)
        explicit.update(file_values)
    for key in _RUN_FIELDS:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
            explicit.add(key)
    return RunConfig(**merged), explicit


def _add_shared_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--data", help="dataset root: one directory per class id")
    p.add_argument("--manifest", help="JSON manifest mapping class id to name/category")
    p.add_argument("--category", choices=(*data.CATEGORIES, "all"),
                   help="restrict to one character category")
    p.add_argument("--arch", choices=architectures.FAMILIES)
    p.add_argument("--image-size", dest="image_size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--freeze-prefix", dest="freeze_prefix", type=int)
    p.add_argument("--freeze-granularity", dest="freeze_granularity", choices=("block", "layer"))
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--train-fraction", dest="train_fraction", type=float)
    p.add_argument("--subsample", type=int, help="seeded per-class cap on entries")
    p.add_argument("--dropout-rate", dest="dropout_rate", type=float)
    p.add_argument("--dense-units", dest="dense_units", type=int)
    p.add_argument("--blocks-per-stage", dest="blocks_per_stage", type=int)
    p.add_argument("--no-invert", dest="invert", action="store_false", default=None,
                   help="keep the scan polarity instead of mapping strokes high")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gradeshi",
        description="Train and run handwritten-character classifiers. "
                    "GRADESHI_THREADS caps internal parallelism.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("split", help="write train/test listing files")
    _add_shared_flags(p)

    p = sub.add_parser("train", help="train a model; writes checkpoint, metrics and figures")
    _add_shared_flags(p)

    p = sub.add_parser("transfer", help="fine-tune from a pretrained trunk")
    _add_shared_flags(p)
    p.add_argument("--base-checkpoint", dest="base_checkpoint", required=True)

    p = sub.add_parser("evaluate", help="score a checkpoint against a listing file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--listing", required=True, help="file of 'path,class-id' lines")
    p.add_argument("--batch-size", dest="batch_size", type=int, default=32)
    p.add_argument("--out", help="also write per-category table and figure here")

    p = sub.add_parser("predict", help="classify one image file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--top-k", dest="top_k", type=int, default=1)

    p = sub.add_parser("export-metrics", help="render figures from a metrics table")
    p.add_argument("--metrics", required=True, help="metrics.csv produced by train/transfer")
    p.add_argument("--out", required=True)

    return parser


def _load_index(cfg: RunConfig, parser) -> tuple[data.DatasetIndex, dict]:
    if not cfg.data:
        parser.error("--data (or a config file providing it) is required")
    manifest = data.load_manifest(cfg.manifest) if cfg.manifest else data.default_manifest()
    index = data.scan_dataset(cfg.data, manifest)
    if cfg.category != "all":
        index = data.filter_category(index, cfg.category)
    if cfg.subsample is not None:
        index = data.subsample(index, cfg.subsample, seed=cfg.seed)
    return index, manifest


def _arch_config(cfg: RunConfig, class_count: int) -> architectures.ArchConfig:
    return architectures.ArchConfig(
        family=cfg.arch,
        image_size=cfg.image_size,
        class_count=class_count,
        stage_widths=tuple(cfg.stage_widths or ()),
        blocks_per_stage=cfg.blocks_per_stage,
        dense_units=cfg.dense_units,
        dropout_rate=cfg.dropout_rate,
        freeze_prefix=cfg.freeze_prefix,
        freeze_granularity=cfg.freeze_granularity,
    )


def _echo_config(cfg: RunConfig, out_dir: Path):
    with open(out_dir / "config.json", "w", encoding="utf-8") as fh:
        json.dump(asdict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _frozen_summary(net) -> str:
    frozen_layers = sum(not layer.trainable for layer in net.layers)
    frozen_blocks = sum(all(not net.layers[i].trainable for i in span)
                        for _, span in net.block_units)
    return f"frozen blocks: {frozen_blocks}, frozen layers: {frozen_layers}"


def _run_training(cfg: RunConfig, net, index, parser) -> int:
    out_dir = Path(cfg.out) if cfg.out else None
    if out_dir is None:
        parser.error("--out is required")
    out_dir.mkdir(parents=True, exist_ok=True)
    split = data.SplitSpec(train_fraction=cfg.train_fraction, seed=cfg.seed)
    train_idx, val_idx = data.stratified_split(index, split)
    train_set = data.load_examples(train_idx, cfg.image_size, invert=cfg.invert)
    val_set = data.load_examples(val_idx, cfg.image_size, invert=cfg.invert)
    print(f"training on {len(train_set)} examples, validating on {len(val_set)} "
          f"({index.class_count} classes)")
    print(_frozen_summary(net))
    tcfg = harness.TrainConfig(epochs=cfg.epochs, batch_size=cfg.batch_size,
                               seed=cfg.seed, lr=cfg.lr)
    history = harness.train(net, train_set, val_set, tcfg)
    harness.export_metrics(history, out_dir / "metrics.csv")
    report.save_history_figures(history, out_dir)
    checkpoint.save_checkpoint(net, out_dir / "model.ckpt", index.manifest,
                               invert=cfg.invert, build_seed=cfg.seed)
    _echo_config(cfg, out_dir)
    with open(out_dir / "train.log", "w", encoding="utf-8") as fh:
        for r in history:
            fh.write(f"epoch {r.epoch}: {r.wall_time:.3f}s\n")
    last = history[-1]
    print(f"epoch {last.epoch}: train_acc={last.train_acc:.4f} val_acc={last.val_acc:.4f}")
    print(f"artifacts in {out_dir}")
    return 0


def cmd_split(args, parser) -> int:
    cfg, _ = resolve_config(args)
    if not 0.0 < cfg.train_fraction < 1.0:
        parser.error(f"--train-fraction must lie strictly between 0 and 1, got {cfg.train_fraction}")
    if not cfg.out:
        parser.error("--out is required")
    index, _ = _load_index(cfg, parser)
    train_idx, test_idx = data.stratified_split(
        index, data.SplitSpec(train_fraction=cfg.train_fraction, seed=cfg.seed))
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    data.write_listing(train_idx, out_dir / "train.txt")
    data.write_listing(test_idx, out_dir / "test.txt")
    print(f"train={len(train_idx)} test={len(test_idx)}")
    return 0


def cmd_train(args, parser) -> int:
    cfg, _ = resolve_config(args)
    index, _ = _load_index(cfg, parser)
    net = architectures.build(_arch_config(cfg, index.class_count), seed=cfg.seed)
    return _run_training(cfg, net, index, parser)


def cmd_transfer(args, parser) -> int:
    cfg, explicit = resolve_config(args)
    ck = checkpoint.read_checkpoint(args.base_checkpoint)
    if "arch" in explicit and cfg.arch != ck.arch.family:
        raise TransferError(
            f"checkpoint family {ck.arch.family!r} does not match --arch {cfg.arch!r}")
    # Unstated knobs inherit from the pretrained trunk.
    image_size = cfg.image_size if "image_size" in explicit else ck.image_size
    dropout = cfg.dropout_rate if "dropout_rate" in explicit else None
    cfg = RunConfig(**{**asdict(cfg), "arch": ck.arch.family, "image_size": image_size})
    index, _ = _load_index(cfg, parser)
    net = harness.transfer(ck, index.class_count, cfg.freeze_prefix,
                           granularity=cfg.freeze_granularity, head_seed=cfg.seed,
                           image_size=image_size, dropout_rate=dropout)
    return _run_training(cfg, net, index, parser)


def cmd_evaluate(args, parser) -> int:
    ck = checkpoint.read_checkpoint(args.checkpoint)
    listing = Path(args.listing)
    if not listing.exists() or not listing.read_text(encoding="utf-8").strip():
        parser.error(f"listing {listing} is missing or empty")
    index = data.read_listing(listing, ck.manifest)
    net = checkpoint.instantiate(ck)
    examples = data.load_examples(index, ck.image_size, invert=ck.invert)
    metrics = harness.evaluate(net, examples, args.batch_size)
    print(f"loss={metrics.loss:.6f} acc={metrics.accuracy:.6f}")
    by_cat = harness.evaluate_by_category(net, examples, index, args.batch_size)
    for cat, m in by_cat.items():
        print(f"category={cat} loss={m.loss:.6f} acc={m.accuracy:.6f} n={m.sample_count}")
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "category_metrics.csv", "w", encoding="utf-8") as fh:
            fh.write("category,loss,acc,n\n")
            for cat, m in by_cat.items():
                fh.write(f"{cat},{m.loss:.6f},{m.accuracy:.6f},{m.sample_count}\n")
        report.save_category_figure({c: m.accuracy for c, m in by_cat.items()},
                                    out_dir / "category_accuracy.png")
        print(f"artifacts in {out_dir}")
    return 0


def cmd_predict(args, parser) -> int:
    ck = checkpoint.read_checkpoint(args.checkpoint)
    class_count = len(ck.manifest)
    if not 1 <= args.top_k <= class_count:
        parser.error(f"--top-k must lie in 1..{class_count}")
    net = checkpoint.instantiate(ck)
    image = data.load_image(args.image, ck.image_size, invert=ck.invert)
    probs = net.forward(image, training=False).matrix[0]
    order = np.argsort(-probs, kind="stable")[: args.top_k]
    for cid in order:
        print(f"{ck.manifest[int(cid)].name},{probs[cid]:.6f}")
    return 0


def cmd_export_metrics(args, parser) -> int:
    rows = harness.read_metrics_csv(args.metrics)
    written = report.save_history_figures(rows, args.out)
    for path in written:
        print(f"wrote {path}")
    return 0


_COMMANDS = {
    "split": cmd_split,
    "train": cmd_train,
    "transfer": cmd_transfer,
    "evaluate": cmd_evaluate,
    "predict": cmd_predict,
    "export-metrics": cmd_export_metrics,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args, parser)
    except (GradeshiError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
