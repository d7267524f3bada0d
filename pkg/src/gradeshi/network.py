"""Ordered layer graph with skip links and reverse-mode execution."""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, ShapeError
from .layers import Layer, Softmax
from .tensor import Tensor


class Network:
    """A sequence of layers wired as a DAG.

    ``inputs[i]`` lists the producer index of every operand of layer ``i``
    (-1 denotes the network input). The list order is a topological order, so
    forward walks it left to right and backward right to left. Residual skip
    links are simply layers whose operand list reaches further back than the
    previous layer.
    """

    def __init__(self, layers: list[Layer], inputs: list[tuple[int, ...]],
                 input_shape: tuple, class_count: int, config=None,
                 head_start: int = 0, block_units=None):
        if len(layers) != len(inputs):
            raise ConfigError("one operand list per layer is required")
        for i, ins in enumerate(inputs):
            if len(ins) != layers[i].n_inputs:
                raise ConfigError(f"layer {layers[i].name} expects {layers[i].n_inputs} operands")
            for j in ins:
                if not -1 <= j < i:
                    raise ConfigError(f"layer {layers[i].name} consumes index {j}, not yet produced")
        if not layers or not isinstance(layers[-1], Softmax):
            raise ConfigError("final layer must be softmax")
        self.layers = layers
        self.inputs = [tuple(ins) for ins in inputs]
        self.input_shape = tuple(input_shape)
        self.class_count = class_count
        self.config = config
        self.head_start = head_start
        # (unit name, layer index span) pairs; the freezing granularity "block".
        self.block_units = list(block_units or [])

    @property
    def skip_edges(self) -> list[tuple[int, int]]:
        """(source layer, residual-add layer) pairs for every skip link."""
        edges = []
        for i, layer in enumerate(self.layers):
            if layer.kind == "residual-add":
                edges.append((self.inputs[i][1], i))
        return edges

    def index_of(self, name: str) -> int:
        for i, layer in enumerate(self.layers):
            if layer.name == name:
                return i
        raise KeyError(name)

    def forward(self, x: Tensor, training: bool = False) -> Tensor:
        acts: list[Tensor | None] = [None] * len(self.layers)
        for i, layer in enumerate(self.layers):
            operands = tuple(x if j == -1 else acts[j] for j in self.inputs[i])
            acts[i] = layer.forward(*operands, training=training)
        return acts[-1]

    def backward_from_logits(self, dlogits: Tensor) -> list[dict[str, Tensor]]:
        """Backpropagate a gradient w.r.t. the pre-softmax logits.

        The softmax layer is skipped because the loss gradient is already the
        fused softmax+cross-entropy form. Returns one parameter-gradient map
        per layer (empty for parameterless layers).
        """
        n = len(self.layers)
        buf: list[Tensor | None] = [None] * n
        buf[self.inputs[-1][0]] = dlogits
        grads: list[dict[str, Tensor]] = [{} for _ in range(n)]
        for i in range(n - 2, -1, -1):
            g = buf[i]
            if g is None:
                continue
            lg = self.layers[i].backward(g)
            grads[i] = lg.params
            for j, gj in zip(self.inputs[i], lg.inputs):
                if j == -1:
                    continue
                buf[j] = gj if buf[j] is None else buf[j] + gj
        return grads

    def input_gradient(self, dlogits: Tensor) -> Tensor:
        """Gradient w.r.t. the network input; used by composition checks."""
        n = len(self.layers)
        buf: list[Tensor | None] = [None] * n
        buf[self.inputs[-1][0]] = dlogits
        dx: Tensor | None = None
        for i in range(n - 2, -1, -1):
            g = buf[i]
            if g is None:
                continue
            lg = self.layers[i].backward(g)
            for j, gj in zip(self.inputs[i], lg.inputs):
                if j == -1:
                    dx = gj if dx is None else dx + gj
                else:
                    buf[j] = gj if buf[j] is None else buf[j] + gj
        if dx is None:
            raise ShapeError("no path from the loss to the network input")
        return dx

    def param_items(self):
        """Yield (layer_index, layer, param_name, tensor) in network order."""
        for i, layer in enumerate(self.layers):
            for name, value in layer.params.items():
                yield i, layer, name, value

    def named_params(self) -> dict[str, Tensor]:
        out = {}
        for _, layer, name, value in self.param_items():
            out[f"{layer.name}.{name}"] = value
        return out

    def param_dtype(self):
        for _, _, _, value in self.param_items():
            return value.dtype
        return np.float32

    def trainable_param_count(self) -> int:
        total = 0
        for _, layer, name, value in self.param_items():
            if layer.trainable and name in layer.grad_param_names:
                total += value.size
        return total
