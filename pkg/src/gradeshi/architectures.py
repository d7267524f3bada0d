"""Builders for the three network families, plus prefix freezing.

All three builders are deterministic: the same config and seed produce
bit-identical initial parameters. Convolutions followed by batch
normalization carry no bias.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError
from .layers import (BatchNorm, Conv2D, Dense, DepthwiseConv2D, Dropout, Flatten,
                     GlobalAveragePool, MaxPool2D, PointwiseConv2D, ReLU,
                     ResidualAdd, Softmax)
from .network import Network
from .tensor import FLOAT32

FAMILIES = ("simple-cnn", "mini-resnet", "mini-mobilenet")

_DEFAULT_WIDTHS = {
    "simple-cnn": (32, 64),
    "mini-resnet": (64, 128, 256),
    "mini-mobilenet": (32, 64, 128, 256),
}


@dataclass(frozen=True)
class ArchConfig:
    family: str
    image_size: int
    class_count: int
    stage_widths: tuple[int, ...] = ()
    blocks_per_stage: int = 2
    dense_units: int = 128
    dropout_rate: float = 0.5
    freeze_prefix: int = 0
    freeze_granularity: str = "block"

    def widths(self) -> tuple[int, ...]:
        return tuple(self.stage_widths) or _DEFAULT_WIDTHS[self.family]

    def downsample_factor(self) -> int:
        n = len(self.widths())
        if self.family == "simple-cnn":
            return 3 ** n
        if self.family == "mini-resnet":
            return 3 * 2 ** (n - 1)
        return 2 * 2 ** (n - 1)  # mini-mobilenet: strided stem plus strided stages

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "image_size": self.image_size,
            "class_count": self.class_count,
            "stage_widths": list(self.widths()),
            "blocks_per_stage": self.blocks_per_stage,
            "dense_units": self.dense_units,
            "dropout_rate": self.dropout_rate,
            "freeze_prefix": self.freeze_prefix,
            "freeze_granularity": self.freeze_granularity,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        return cls(
            family=d["family"],
            image_size=int(d["image_size"]),
            class_count=int(d["class_count"]),
            stage_widths=tuple(int(w) for w in d.get("stage_widths", ())),
            blocks_per_stage=int(d.get("blocks_per_stage", 2)),
            dense_units=int(d.get("dense_units", 128)),
            dropout_rate=float(d.get("dropout_rate", 0.5)),
            freeze_prefix=int(d.get("freeze_prefix", 0)),
            freeze_granularity=d.get("freeze_granularity", "block"),
        )


def _validate(cfg: ArchConfig):
    if cfg.family not in FAMILIES:
        raise ConfigError(f"unknown architecture family {cfg.family!r}; pick one of {FAMILIES}")
    if cfg.class_count < 2:
        raise ConfigError(f"class count must be >= 2, got {cfg.class_count}")
    if cfg.blocks_per_stage < 1:
        raise ConfigError("blocks_per_stage must be >= 1")
    if not 0.0 <= cfg.dropout_rate < 1.0:
        raise ConfigError(f"dropout rate must lie in [0, 1), got {cfg.dropout_rate}")
    if not cfg.widths():
        raise ConfigError("at least one stage width is required")
    min_size = 2 * cfg.downsample_factor()
    if cfg.image_size < min_size:
        raise ConfigError(
            f"image size {cfg.image_size} too small for {cfg.family} "
            f"(needs >= {min_size} for its downsampling chain)")
    if cfg.freeze_granularity not in ("block", "layer"):
        raise ConfigError(f"freeze granularity must be 'block' or 'layer', got {cfg.freeze_granularity!r}")


class _Assembler:
    """Accumulates layers, operand wiring, shape bookkeeping and block spans."""

    def __init__(self, image_size: int):
        self.layers = []
        self.inputs = []
        self.units = []  # (name, [layer indices])
        self.h = self.w = image_size
        self.c = 1

    @property
    def last(self) -> int:
        return len(self.layers) - 1

    def add(self, layer, src=None) -> int:
        if src is None:
            src = (self.last,) if self.layers else (-1,)
        self.layers.append(layer)
        self.inputs.append(tuple(src))
        return self.last

    def conv_shape(self, stride: int):
        # 'same' padding: spatial extent becomes ceil(extent / stride)
        self.h = -(-self.h // stride)
        self.w = -(-self.w // stride)

    def pool_shape(self, pool: int, stride: int):
        if self.h < pool or self.w < pool:
            raise ConfigError(
                f"feature map {self.h}x{self.w} too small for {pool}x{pool} pooling")
        self.h = (self.h - pool) // stride + 1
        self.w = (self.w - pool) // stride + 1

    def unit(self, name: str, start: int):
        self.units.append((name, list(range(start, self.last + 1))))


def build_simple_cnn(cfg: ArchConfig, seed: int = 0, dtype=FLOAT32) -> Network:
    """Stacked conv/relu/maxpool stages with a two-layer dense head."""
    _validate(cfg)
    rng = np.random.default_rng(seed)
    asm = _Assembler(cfg.image_size)
    for si, width in enumerate(cfg.widths()):
        start = asm.last + 1
        asm.add(Conv2D(f"s{si + 1}.conv", asm.c, width, kernel=3, stride=1,
                       padding="same", use_bias=True, seed=rng, dtype=dtype))
        asm.add(ReLU(f"s{si + 1}.relu"))
        asm.add(MaxPool2D(f"s{si + 1}.pool", pool=3))
        asm.conv_shape(1)
        asm.pool_shape(3, 3)
        asm.c = width
        asm.unit(f"s{si + 1}", start)
    head_start = asm.last + 1
    features = asm.h * asm.w * asm.c
    asm.add(Flatten("head.flatten"))
    asm.add(Dense("head.dense1", features, cfg.dense_units, seed=rng, dtype=dtype))
    asm.add(ReLU("head.relu"))
    asm.add(Dropout("head.dropout", cfg.dropout_rate, seed=int(rng.integers(2**32))))
    asm.add(Dense("head.dense2", cfg.dense_units, cfg.class_count, seed=rng, dtype=dtype))
    asm.add(Softmax("head.softmax"))
    net = Network(asm.layers, asm.inputs, (cfg.image_size, cfg.image_size, 1),
                  cfg.class_count, config=cfg, head_start=head_start, block_units=asm.units)
    return set_trainable_prefix(net, cfg.freeze_prefix, cfg.freeze_granularity)


def _residual_block(asm: _Assembler, name: str, width: int, stride: int, rng, dtype):
    entry = asm.last
    in_ch = asm.c
    asm.add(Conv2D(f"{name}.conv1", in_ch, width, kernel=3, stride=stride,
                   padding="same", use_bias=False, seed=rng, dtype=dtype))
    asm.add(BatchNorm(f"{name}.bn1", width, dtype=dtype))
    asm.add(ReLU(f"{name}.relu1"))
    asm.add(Conv2D(f"{name}.conv2", width, width, kernel=3, stride=1,
                   padding="same", use_bias=False, seed=rng, dtype=dtype))
    main = asm.add(BatchNorm(f"{name}.bn2", width, dtype=dtype))
    if in_ch != width or stride != 1:
        asm.add(Conv2D(f"{name}.proj", in_ch, width, kernel=1, stride=stride,
                       padding="same", use_bias=False, seed=rng, dtype=dtype), src=(entry,))
        skip = asm.add(BatchNorm(f"{name}.proj_bn", width, dtype=dtype))
    else:
        skip = entry
    asm.add(ResidualAdd(f"{name}.add"), src=(main, skip))
    asm.add(ReLU(f"{name}.relu2"))
    asm.conv_shape(stride)
    asm.c = width


def build_mini_resnet(cfg: ArchConfig, seed: int = 0, dtype=FLOAT32) -> Network:
    """Strided-stem residual network: stem conv+pool, then two-conv skip blocks."""
    _validate(cfg)
    rng = np.random.default_rng(seed)
    widths = cfg.widths()
    asm = _Assembler(cfg.image_size)
    asm.add(Conv2D("stem.conv", 1, widths[0], kernel=3, stride=1,
                   padding="same", use_bias=False, seed=rng, dtype=dtype))
    asm.add(BatchNorm("stem.bn", widths[0], dtype=dtype))
    asm.add(ReLU("stem.relu"))
    asm.add(MaxPool2D("stem.pool", pool=3))
    asm.conv_shape(1)
    asm.pool_shape(3, 3)
    asm.c = widths[0]
    asm.unit("stem", 0)
    for si, width in enumerate(widths):
        for b in range(cfg.blocks_per_stage):
            start = asm.last + 1
            stride = 2 if (si > 0 and b == 0) else 1
            _residual_block(asm, f"s{si + 1}.b{b}", width, stride, rng, dtype)
            asm.unit(f"s{si + 1}.b{b}", start)
    head_start = asm.last + 1
    asm.add(GlobalAveragePool("head.gap"))
    asm.add(Dropout("head.dropout", cfg.dropout_rate, seed=int(rng.integers(2**32))))
    asm.add(Dense("head.dense", asm.c, cfg.class_count, seed=rng, dtype=dtype))
    asm.add(Softmax("head.softmax"))
    net = Network(asm.layers, asm.inputs, (cfg.image_size, cfg.image_size, 1),
                  cfg.class_count, config=cfg, head_start=head_start, block_units=asm.units)
    return set_trainable_prefix(net, cfg.freeze_prefix, cfg.freeze_granularity)


def build_mini_mobilenet(cfg: ArchConfig, seed: int = 0, dtype=FLOAT32) -> Network:
    """Strided stem followed by depthwise-separable stages and a dense head."""
    _validate(cfg)
    rng = np.random.default_rng(seed)
    widths = cfg.widths()
    asm = _Assembler(cfg.image_size)
    asm.add(Conv2D("stem.conv", 1, widths[0], kernel=3, stride=2,
                   padding="same", use_bias=False, seed=rng, dtype=dtype))
    asm.add(BatchNorm("stem.bn", widths[0], dtype=dtype))
    asm.add(ReLU("stem.relu"))
    asm.conv_shape(2)
    asm.c = widths[0]
    asm.unit("stem", 0)
    for si, width in enumerate(widths[1:]):
        for b in range(cfg.blocks_per_stage):
            start = asm.last + 1
            stride = 2 if b == 0 else 1
            name = f"s{si + 1}.b{b}"
            asm.add(DepthwiseConv2D(f"{name}.dw", asm.c, kernel=3, stride=stride,
                                    padding="same", seed=rng, dtype=dtype))
            asm.add(BatchNorm(f"{name}.dw_bn", asm.c, dtype=dtype))
            asm.add(ReLU(f"{name}.dw_relu"))
            asm.add(PointwiseConv2D(f"{name}.pw", asm.c, width, seed=rng, dtype=dtype))
            asm.add(BatchNorm(f"{name}.pw_bn", width, dtype=dtype))
            asm.add(ReLU(f"{name}.pw_relu"))
            asm.conv_shape(stride)
            asm.c = width
            asm.unit(name, start)
    head_start = asm.last + 1
    asm.add(GlobalAveragePool("head.gap"))
    asm.add(Dense("head.dense1", asm.c, cfg.dense_units, seed=rng, dtype=dtype))
    asm.add(ReLU("head.relu"))
    asm.add(Dropout("head.dropout", cfg.dropout_rate, seed=int(rng.integers(2**32))))
    asm.add(Dense("head.dense2", cfg.dense_units, cfg.class_count, seed=rng, dtype=dtype))
    asm.add(Softmax("head.softmax"))
    net = Network(asm.layers, asm.inputs, (cfg.image_size, cfg.image_size, 1),
                  cfg.class_count, config=cfg, head_start=head_start, block_units=asm.units)
    return set_trainable_prefix(net, cfg.freeze_prefix, cfg.freeze_granularity)


_BUILDERS = {
    "simple-cnn": build_simple_cnn,
    "mini-resnet": build_mini_resnet,
    "mini-mobilenet": build_mini_mobilenet,
}


def build(cfg: ArchConfig, seed: int = 0, dtype=FLOAT32) -> Network:
    _validate(cfg)
    return _BUILDERS[cfg.family](cfg, seed=seed, dtype=dtype)


def set_trainable_prefix(net: Network, freeze_prefix: int, granularity: str = "block") -> Network:
    """Mark the first ``freeze_prefix`` units non-trainable, the rest trainable.

    Units are whole blocks (the stem counts as the first one) or individual
    layers. Frozen batch normalization also stops updating its running
    statistics and runs in inference mode.
    """
    if granularity == "block":
        total = len(net.block_units)
        if not 0 <= freeze_prefix <= total:
            raise ConfigError(f"freeze prefix {freeze_prefix} outside [0, {total}] blocks")
        frozen = set()
        for _, span in net.block_units[:freeze_prefix]:
            frozen.update(span)
    elif granularity == "layer":
        total = len(net.layers)
        if not 0 <= freeze_prefix <= total:
            raise ConfigError(f"freeze prefix {freeze_prefix} outside [0, {total}] layers")
        frozen = set(range(freeze_prefix))
    else:
        raise ConfigError(f"freeze granularity must be 'block' or 'layer', got {granularity!r}")
    for i, layer in enumerate(net.layers):
        layer.trainable = i not in frozen
        if isinstance(layer, BatchNorm):
            layer.set_frozen(i in frozen)
    if net.config is not None:
        net.config = replace(net.config, freeze_prefix=freeze_prefix,
                             freeze_granularity=granularity)
    return net
