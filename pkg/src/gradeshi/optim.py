"""Loss, classification metrics, and the Adam update rule."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, NumericError, ShapeError
from .network import Network
from .tensor import Tensor, argmax_last_axis

PROB_SUM_TOL = 1e-4
LOG_CLAMP = 1e-12  # floor under -ln(p); prevents -ln(0) at 32-bit underflow


def _check_one_hot(targets: Tensor) -> np.ndarray:
    t = targets.matrix
    ones = (t == 1).sum(axis=1)
    if not ((ones == 1).all() and ((t == 0) | (t == 1)).all()):
        raise DataError("targets must be one-hot rows")
    return t


def cross_entropy(probs: Tensor, targets: Tensor) -> float:
    """Mean negative log-likelihood of the target class."""
    p = probs.matrix
    t = _check_one_hot(targets)
    if p.shape != t.shape:
        raise ShapeError(f"probabilities {p.shape} vs targets {t.shape}")
    sums = p.sum(axis=1)
    if np.abs(sums - 1.0).max() > PROB_SUM_TOL:
        raise DataError("probability rows do not sum to 1; pass softmax output")
    picked = np.maximum((p * t).sum(axis=1, dtype=np.float64), LOG_CLAMP)
    return float(-np.log(picked).mean())


def softmax_cross_entropy_backward(probs: Tensor, targets: Tensor) -> Tensor:
    """Gradient of the mean cross-entropy w.r.t. pre-softmax logits: (p - y)/B."""
    t = _check_one_hot(targets)
    p = probs.matrix
    if p.shape != t.shape:
        raise ShapeError(f"probabilities {p.shape} vs targets {t.shape}")
    g = (p - t.astype(p.dtype)) / p.dtype.type(p.shape[0])
    return Tensor._wrap(g.reshape(probs.shape))


def accuracy(probs: Tensor, targets: Tensor) -> float:
    """Fraction of rows whose argmax matches the target index."""
    pred = argmax_last_axis(probs)
    truth = np.argmax(targets.matrix, axis=1)
    return float((pred == truth).mean())


@dataclass
class BatchMetrics:
    loss: float
    accuracy: float
    sample_count: int


@dataclass
class AdamState:
    """First/second moment estimates and step counter for one parameter."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def like(cls, param: Tensor) -> "AdamState":
        return cls(m=np.zeros(param.shape, dtype=param.dtype),
                   v=np.zeros(param.shape, dtype=param.dtype))


def adam_step(param: Tensor, grad: Tensor, state: AdamState,
              lr=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8) -> Tensor:
    """One Adam update; returns the new parameter tensor and advances state."""
    if grad.shape != param.shape:
        raise ShapeError(f"gradient {grad.shape} does not match parameter {param.shape}")
    g = grad.data
    state.t += 1
    state.m = beta1 * state.m + (1.0 - beta1) * g
    state.v = beta2 * state.v + (1.0 - beta2) * (g * g)
    m_hat = state.m / (1.0 - beta1 ** state.t)
    v_hat = state.v / (1.0 - beta2 ** state.t)
    step = lr * m_hat / (np.sqrt(v_hat) + epsilon)
    return Tensor._wrap((param.data - step).astype(param.dtype, copy=False))


class Adam:
    """Network-level Adam: one state per trainable parameter, frozen layers skipped."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.states: dict[tuple[int, str], AdamState] = {}

    def step(self, net: Network, grads: list[dict[str, Tensor]]):
        for i, layer in enumerate(net.layers):
            if not layer.trainable:
                continue
            layer_grads = grads[i]
            for name in layer.grad_param_names:
                if name not in layer_grads:
                    continue
                g = layer_grads[name]
                if not np.isfinite(g.data).all():
                    raise NumericError(f"non-finite gradient for {layer.name}.{name}")
                key = (i, name)
                if key not in self.states:
                    self.states[key] = AdamState.like(layer.params[name])
                layer.params[name] = adam_step(
                    layer.params[name], g, self.states[key],
                    lr=self.lr, beta1=self.beta1, beta2=self.beta2, epsilon=self.epsilon)

    def state_tensors(self, net: Network) -> dict[str, Tensor]:
        """Moment estimates as named tensors, for checkpointing."""
        out = {}
        for (i, name), st in sorted(self.states.items()):
            prefix = f"optim.{net.layers[i].name}.{name}"
            out[f"{prefix}.m"] = Tensor._wrap(st.m.copy())
            out[f"{prefix}.v"] = Tensor._wrap(st.v.copy())
        return out

    def step_counts(self, net: Network) -> dict[str, int]:
        return {f"{net.layers[i].name}.{name}": st.t
                for (i, name), st in sorted(self.states.items())}
