"""Epoch loop, evaluation passes, transfer initialization, metric export.

The whole pipeline is a pure function of (data bytes, config, seeds): batch
order, dropout masks and parameter initialization are all keyed off explicit
seeds, so two identical runs produce identical histories.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from . import architectures, data
from .checkpoint import Checkpoint
from .errors import ConfigError, DataError, NumericError, TransferError
from .network import Network
from .optim import Adam, BatchMetrics, LOG_CLAMP, softmax_cross_entropy_backward
from .tensor import argmax_last_axis


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int = 32
    seed: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float
    wall_time: float  # seconds; never written into deterministic artifacts


def _forward_stats(net: Network, examples: data.ExampleSet, batch_size: int):
    """Eval-mode pass over the whole set: per-example loss and correctness."""
    losses = np.empty(len(examples), dtype=np.float64)
    correct = np.empty(len(examples), dtype=bool)
    pos = 0
    for x, y in data.batches(examples, batch_size, shuffle=False):
        probs = net.forward(x, training=False)
        p = probs.matrix.astype(np.float64)
        t = y.matrix
        picked = np.maximum((p * t).sum(axis=1), LOG_CLAMP)
        n = p.shape[0]
        losses[pos : pos + n] = -np.log(picked)
        correct[pos : pos + n] = argmax_last_axis(probs) == np.argmax(t, axis=1)
        pos += n
    return losses, correct


def evaluate(net: Network, examples: data.ExampleSet, batch_size: int = 32) -> BatchMetrics:
    """Mean eval-mode loss and accuracy; independent of the batch partition."""
    if len(examples) == 0:
        raise DataError("cannot evaluate on an empty example set")
    losses, correct = _forward_stats(net, examples, batch_size)
    return BatchMetrics(loss=float(losses.mean()), accuracy=float(correct.mean()),
                        sample_count=len(examples))


def evaluate_by_category(net: Network, examples: data.ExampleSet,
                         index: data.DatasetIndex, batch_size: int = 32) -> dict[str, BatchMetrics]:
    """Per-category metrics; the index supplies each example's category tag."""
    if len(examples) != len(index):
        raise DataError("example set and index disagree in size")
    losses, correct = _forward_stats(net, examples, batch_size)
    cats = np.array([e.category for e in index.entries])
    out = {}
    for cat in data.CATEGORIES:
        mask = cats == cat
        n = int(mask.sum())
        if n:
            out[cat] = BatchMetrics(loss=float(losses[mask].mean()),
                                    accuracy=float(correct[mask].mean()), sample_count=n)
    return out


def train(net: Network, train_set: data.ExampleSet, val_set: data.ExampleSet,
          cfg: TrainConfig, optimizer: Adam | None = None) -> list[EpochRecord]:
    """Run the epoch loop, mutating ``net`` in place.

    Each epoch walks the seeded batch order once, then takes a full eval-mode
    pass over both sets; reported metrics never come from training-mode
    statistics.
    """
    if train_set.class_count != net.class_count:
        raise ConfigError(f"network has {net.class_count} classes, data has {train_set.class_count}")
    adam = optimizer if optimizer is not None else Adam(
        lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, epsilon=cfg.epsilon)
    history: list[EpochRecord] = []
    for epoch in range(1, cfg.epochs + 1):
        started = time.perf_counter()
        for bi, (x, y) in enumerate(
                data.batches(train_set, cfg.batch_size, shuffle_seed=cfg.seed, epoch=epoch)):
            try:
                probs = net.forward(x, training=True)
                loss = float(-np.log(np.maximum(
                    (probs.matrix.astype(np.float64) * y.matrix).sum(axis=1),
                    LOG_CLAMP)).mean())
                if not np.isfinite(loss):
                    raise NumericError("non-finite loss")
                grads = net.backward_from_logits(softmax_cross_entropy_backward(probs, y))
                adam.step(net, grads)
            except NumericError as exc:
                raise NumericError(f"epoch {epoch}, batch {bi}: {exc}") from exc
        train_m = evaluate(net, train_set, cfg.batch_size)
        val_m = evaluate(net, val_set, cfg.batch_size)
        history.append(EpochRecord(
            epoch=epoch, train_loss=train_m.loss, train_acc=train_m.accuracy,
            val_loss=val_m.loss, val_acc=val_m.accuracy,
            wall_time=time.perf_counter() - started))
    return history


def transfer(ck: Checkpoint, new_class_count: int, freeze_prefix: int,
             granularity: str = "block", head_seed: int = 0,
             image_size: int | None = None, dropout_rate: float | None = None) -> Network:
    """Build a network whose trunk is copied from a checkpoint and whose
    classification head is freshly initialized for ``new_class_count``.

    The head is re-initialized even when the class count is unchanged.
    """
    cfg = replace(
        ck.arch,
        class_count=new_class_count,
        freeze_prefix=freeze_prefix,
        freeze_granularity=granularity,
        image_size=ck.arch.image_size if image_size is None else image_size,
        dropout_rate=ck.arch.dropout_rate if dropout_rate is None else dropout_rate,
    )
    net = architectures.build(cfg, seed=head_seed, dtype=net_dtype(ck))
    for i, layer, pname, value in net.param_items():
        if i >= net.head_start:
            continue
        full = f"{layer.name}.{pname}"
        if full not in ck.tensors:
            raise TransferError(f"checkpoint lacks trunk tensor {full}")
        stored = ck.tensors[full]
        if stored.shape != value.shape:
            raise TransferError(
                f"trunk tensor {full}: checkpoint shape {stored.shape} != target {value.shape}")
        layer.params[pname] = stored
    for layer in net.layers[: net.head_start]:
        if layer.kind == "batchnorm" and ck.bn_initialized.get(layer.name):
            layer.stats_initialized = True
    return net


def net_dtype(ck: Checkpoint):
    for name, t in sorted(ck.tensors.items()):
        if not name.startswith("optim."):
            return t.dtype
    return np.float32


# ---- metric export -----------------------------------------------------------

METRIC_COLUMNS = ("epoch", "train_loss", "train_acc", "val_loss", "val_acc")


def export_metrics(history: list[EpochRecord], path):
    """Write the per-epoch table: fixed 6-decimal columns, one row per epoch."""
    if not history:
        raise DataError("history is empty; nothing to export")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(METRIC_COLUMNS) + "\n")
        for r in history:
            fh.write(f"{r.epoch},{r.train_loss:.6f},{r.train_acc:.6f},"
                     f"{r.val_loss:.6f},{r.val_acc:.6f}\n")


def read_metrics_csv(path) -> list[dict]:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if header != list(METRIC_COLUMNS):
            raise DataError(f"{path}: unexpected metrics header {header}")
        rows = []
        for line in fh:
            line = line.strip()
            if not line:
                continue
            values = line.split(",")
            rows.append({"epoch": int(values[0]),
                         **{k: float(v) for k, v in zip(METRIC_COLUMNS[1:], values[1:])}})
    if not rows:
        raise DataError(f"{path}: no metric rows")
    return rows
