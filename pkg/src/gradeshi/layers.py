"""Differentiable layers with explicit forward and backward passes.

Each layer caches whatever its backward pass needs during forward; a layer
instance therefore belongs to one network and one training step at a time.
Parameters live in ``layer.params`` as named tensors and are rebound (never
mutated) by the optimizer, so a frozen layer's tensors stay bit-identical
forever.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import convops
from .errors import NumericError, ParameterError, ShapeError, StateError
from .tensor import FLOAT32, SeedLike, Tensor, _as_rng


@dataclass
class LayerGrads:
    """Gradients produced by one backward step: one tensor per forward input,
    plus a map mirroring the layer's learnable parameters."""

    inputs: tuple[Tensor, ...]
    params: dict[str, Tensor] = field(default_factory=dict)


class Layer:
    kind = "?"
    n_inputs = 1

    def __init__(self, name: str):
        self.name = name
        self.params: dict[str, Tensor] = {}
        self.trainable = True
        self.cache = None

    @property
    def grad_param_names(self) -> tuple[str, ...]:
        """Parameters that receive gradients (statistics buffers excluded)."""
        return tuple(self.params.keys())

    def forward(self, x: Tensor, training: bool = False) -> Tensor:
        raise NotImplementedError

    def backward(self, upstream: Tensor) -> LayerGrads:
        raise NotImplementedError

    def _need_cache(self) -> dict:
        if self.cache is None:
            raise StateError(f"{self.name}: backward called before forward")
        return self.cache

    def __repr__(self):
        return f"{type(self).__name__}({self.name!r})"


class Conv2D(Layer):
    kind = "conv2d"

    def __init__(self, name, in_channels, out_channels, kernel=3, stride=1,
                 padding="same", use_bias=True, seed: SeedLike = 0, dtype=FLOAT32):
        super().__init__(name)
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.stride = stride
        self.padding = padding
        rng = _as_rng(seed)
        fan_in = kernel * kernel * in_channels
        self.params["weights"] = Tensor.he_normal(
            (kernel, kernel, in_channels, out_channels), fan_in, rng, dtype=dtype)
        if use_bias:
            self.params["bias"] = Tensor.zeros((1, 1, 1, out_channels), dtype=dtype)

    def forward(self, x: Tensor, training: bool = False) -> Tensor:
        b, h, w, c = x.shape
        if c != self.in_channels:
            raise ShapeError(f"{self.name}: expected {self.in_channels} input channels, got {c}")
        k, s = self.kernel, self.stride
        pads, oh, ow = convops.resolve_padding(h, w, k, k, s, self.padding)
        xp = convops.pad_spatial(x.data, pads)
        cols = convops.im2col(xp, k, k, s)
        wmat = self.params["weights"].data.reshape(k * k * c, self.out_channels)
        out2 = cols @ wmat
        if "bias" in self.params:
            out2 += self.params["bias"].data.reshape(1, self.out_channels)
        self.cache = {"cols": cols, "x_shape": x.shape, "padded_shape": xp.shape,
                      "pads": pads, "oh": oh, "ow": ow}
        return Tensor._wrap(out2.reshape(b, oh, ow, self.out_channels))

    def backward(self, upstream: Tensor) -> LayerGrads:
        c = self._need_cache()
        b, h, w, cin = c["x_shape"]
        k, s = self.kernel, self.stride
        dout2 = upstream.data.reshape(-1, self.out_channels)
        grads = {"weights": Tensor._wrap(
            (c["cols"].T @ dout2).reshape(k, k, cin, self.out_channels))}
        if "bias" in self.params:
            grads["bias"] = Tensor._wrap(dout2.sum(axis=0).reshape(1, 1, 1, -1))
        wmat = self.params["weights"].data.reshape(k * k * cin, self.out_channels)
        dwin = (dout2 @ wmat.T).reshape(b, c["oh"], c["ow"], k, k, cin)
        dxp = convops.col2im(dwin, c["padded_shape"], s)
        dx = convops.crop_spatial(dxp, c["pads"], h, w)
        return LayerGrads((Tensor._wrap(dx),), grads)


class PointwiseConv2D(Conv2D):
    """1x1 convolution: mixes channels with no spatial extent."""

    kind = "pointwise-conv2d"

    def __init__(self, name, in_channels, out_channels, use_bias=False,
                 seed: SeedLike = 0, dtype=FLOAT32):
        super().__init__(name, in_channels, out_channels, kernel=1, stride=1,
                         padding="valid", use_bias=use_bias, seed=seed, dtype=dtype)


class DepthwiseConv2D(Layer):
    """One spatial kernel per input channel, applied channel-independently."""

    kind = "depthwise-conv2d"

    def __init__(self, name, channels, kernel=3, stride=1, padding="same",
                 seed: SeedLike = 0, dtype=FLOAT32):
        super().__init__(name)
        self.channels = channels
        self.kernel = kernel
        self.stride = stride
        self.padding = padding
        fan_in = kernel * kernel
        self.params["weights"] = Tensor.he_normal(
            (kernel, kernel, channels, 1), fan_in, _as_rng(seed), dtype=dtype)

    def forward(self, x: Tensor, training: bool = False) -> Tensor:
        b, h, w, c = x.shape
        if c != self.channels:
            raise ShapeError(f"{self.name}: expected {self.channels} channels, got {c}")
        k, s = self.kernel, self.stride
        pads, oh, ow = convops.resolve_padding(h, w, k, k, s, self.padding)
        xp = convops.pad_spatial(x.data, pads)
        win = np.ascontiguousarray(convops.window_view(xp, k, k, s))
        w3 = self.params["weights"].data[:, :, :, 0]
        out = np.einsum("bhwuvc,uvc->bhwc", win, w3, optimize=True)
        self.cache = {"win": win, "x_shape": x.shape, "padded_shape": xp.shape, "pads": pads}
        return Tensor._wrap(out)

    def backward(self, upstream: Tensor) -> LayerGrads:
        c = self._need_cache()
        _, h, w, _ = c["x_shape"]
        up = upstream.data
        w3 = self.params["weights"].data[:, :, :, 0]
        dw3 = np.einsum("bhwuvc,bhwc->uvc", c["win"], up, optimize=True)
        dwin = up[:, :, :, None, None, :] * w3[None, None, None, :, :, :]
        dxp = convops.col2im(dwin, c["padded_shape"], self.stride)
        dx = convops.crop_spatial(dxp, c["pads"], h, w)
        return LayerGrads((Tensor._wrap(dx),),
                          {"weights": Tensor._wrap(dw3[:, :, :, None].copy())})


class Dense(Layer):
    kind = "dense"

    def __init__(self, name, in_features, units, use_bias=True,
                 seed: SeedLike = 0, dtype=FLOAT32):
        super().__init__(name)
        self.in_features = in_features
        self.units = units
        self.params["weights"] = Tensor.he_normal(
            (1, 1, in_features, units), in_features, _as_rng(seed), dtype=dtype)
        if use_bias:
            self.params["bias"] = Tensor.zeros((1, 1, 1, units), dtype=dtype)

    def forward(self, x: Tensor, training: bool = False) -> Tensor:
        xm = x.matrix
        if xm.shape[1] != self.in_features:
            raise ShapeError(f"{self.name}: expected {self.in_features} features, got {xm.shape[1]}")
        wmat = self.params["weights"].data.reshape(self.in_features, self.units)
        out = xm @ wmat
        if "bias" in self.params:
            out += self.params["bias"].data.reshape(1, self.units)
        self.cache = {"xm": xm}
        return Tensor._wrap(out.reshape(out.shape[0], 1, 1, self.units))

    def backward(self, upstream: Tensor) -> LayerGrads:
        c = self._need_cache()
        dm = upstream.matrix
        grads = {"weights": Tensor._wrap(
            (c["xm"].T @ dm).reshape(1, 1, self.in_features, self.units))}
        if "bias" in self.params:
            grads["bias"] = Tensor._wrap(dm.sum(axis=0).reshape(1, 1, 1, -1))
        wmat = self.params["weights"].data.reshape(self.in_features, self.units)
        dx = dm @ wmat.T
        return LayerGrads((Tensor._wrap(dx.reshape(dx.shape[0], 1, 1, -1)),), grads)


class ReLU(Layer):
    kind = "relu"

    def forward(self, x: Tensor, training: bool = False) -> Tensor:
        mask = x.data > 0  # derivative at exactly 0 is defined as 0
        self.cache = {"mask": mask}
        return Tensor._wrap(np.where(mask, x.data, x.dtype.type(0)))

    def backward(self, upstream: Tensor) -> LayerGrads:
        c = self._need_cache()
        return LayerGrads((Tensor._wrap(np.where(c["mask"], upstream.data, 0)),))


class MaxPool2D(Layer):
    kind = "maxpool2d"

    def __init__(self, name, pool, stride=None):
        super().__init__(name)
        if pool < 1:
            raise ParameterError(f"{self.name}: pool size must be >= 1, got {pool}")
        self.pool = pool
        self.stride = pool if stride is None else stride

    def forward(self, x: Tensor, training: bool = False) -> Tensor:
        b, h, w, c = x.shape
        p, s = self.pool, self.stride
        if h < p or w < p:
            raise ShapeError(f"{self.name}: input {h}x{w} smaller than one {p}x{p} window")
        win = convops.window_view(x.data, p, p, s)
        oh, ow = win.shape[1], win.shape[2]
        flat = win.reshape(b, oh, ow, p * p, c)
        idx = np.argmax(flat, axis=3)  # first max in scan order wins ties
        out = np.take_along_axis(flat, idx[:, :, :, None, :], axis=3)[:, :, :, 0, :]
        self.cache = {"idx": idx, "x_shape": x.shape, "oh": oh, "ow": ow}
        return Tensor._wrap(np.ascontiguousarray(out))

    def backward(self, upstream: Tensor) -> LayerGrads:
        c = self._need_cache()
        b, h, w, ch = c["x_shape"]
        p, s = self.pool, self.stride
        oh, ow = c["oh"], c["ow"]
        dflat = np.zeros((b, oh, ow, p * p, ch), dtype=upstream.dtype)
        np.put_along_axis(dflat, c["idx"][:, :, :, None, :],
                          upstream.data[:, :, :, None, :], axis=3)
        dwin = dflat.reshape(b, oh, ow, p, p, ch)
        dx = convops.col2im(dwin, (b, h, w, ch), s)
        return LayerGrads((Tensor._wrap(dx),))


class Dropout(Layer):
    """Inverted dropout: kept activations are scaled at train time so the
    evaluation pass is the identity."""

    kind = "dropout"

    def __init__(self, name, rate, seed: SeedLike = 0):
        super().__init__(name)
        if not 0.0 <= rate < 1.0:
            raise ParameterError(f"{self.name}: dropout rate must lie in [0, 1), got {rate}")
        self.rate = rate
        self._rng = _as_rng(seed)
        self.fixed_mask_seed: int | None = None  # pin the mask for gradient checks

    def forward(self, x: Tensor, training: bool = False) -> Tensor:
        if not training or self.rate == 0.0:
            self.cache = {"mask": None}
            return x
        rng = self._rng if self.fixed_mask_seed is None else np.random.default_rng(self.fixed_mask_seed)
        keep = rng.random(x.shape) >= self.rate
        mask = keep.astype(x.dtype) * x.dtype.type(1.0 / (1.0 - self.rate))
        self.cache = {"mask": mask}
        return Tensor._wrap(x.data * mask)

    def backward(self, upstream: Tensor) -> LayerGrads:
        c = self._need_cache()
        if c["mask"] is None:
            return LayerGrads((upstream,))
        return LayerGrads((Tensor._wrap(upstream.data * c["mask"]),))


class BatchNorm(Layer):
    """Per-channel standardization over (batch, height, width).

    Training normalizes with batch statistics and folds them into running
    statistics; evaluation uses the running statistics. A frozen layer runs in
    inference mode even while training and never touches its statistics.
    """

    kind = "batchnorm"

    def __init__(self, name, channels, momentum=0.9, epsilon=1e-5, dtype=FLOAT32):
        super().__init__(name)
        self.channels = channels
        self.momentum = momentum
        self.epsilon = epsilon
        self.params["gamma"] = Tensor.full((1, 1, 1, channels), 1.0, dtype=dtype)
        self.params["beta"] = Tensor.zeros((1, 1, 1, channels), dtype=dtype)
        self.params["running_mean"] = Tensor.zeros((1, 1, 1, channels), dtype=dtype)
        self.params["running_var"] = Tensor.full((1, 1, 1, channels), 1.0, dtype=dtype)
        self.stats_initialized = False
        self.frozen_stats = False

    @property
    def grad_param_names(self):
        return ("gamma", "beta")

    def set_frozen(self, frozen: bool):
        self.frozen_stats = frozen
        if frozen:
            # Freezing finalizes whatever statistics the layer has.
            self.stats_initialized = True

    def forward(self, x: Tensor, training: bool = False) -> Tensor:
        if x.shape[3] != self.channels:
            raise ShapeError(f"{self.name}: expected {self.channels} channels, got {x.shape[3]}")
        gamma = self.params["gamma"].data
        beta = self.params["beta"].data
        if training and not self.frozen_stats:
            mean = x.data.mean(axis=(0, 1, 2), keepdims=True)
            var = x.data.var(axis=(0, 1, 2), keepdims=True)
            inv_std = 1.0 / np.sqrt(var + self.epsilon)
            xhat = (x.data - mean) * inv_std
            m = x.dtype.type(self.momentum)
            self.params["running_mean"] = Tensor._wrap(
                m * self.params["running_mean"].data + (1 - m) * mean)
            self.params["running_var"] = Tensor._wrap(
                m * self.params["running_var"].data + (1 - m) * var)
            self.stats_initialized = True
            n = x.shape[0] * x.shape[1] * x.shape[2]
            self.cache = {"xhat": xhat, "inv_std": inv_std, "n": n, "batch_stats": True}
        else:
            if not self.stats_initialized:
                raise StateError(f"{self.name}: no running statistics yet; train first or load a checkpoint")
            inv_std = 1.0 / np.sqrt(self.params["running_var"].data + self.epsilon)
            xhat = (x.data - self.params["running_mean"].data) * inv_std
            self.cache = {"xhat": xhat, "inv_std": inv_std, "batch_stats": False}
        return Tensor._wrap((gamma * xhat + beta).astype(x.dtype, copy=False))

    def backward(self, upstream: Tensor) -> LayerGrads:
        c = self._need_cache()
        up = upstream.data
        xhat, inv_std = c["xhat"], c["inv_std"]
        grads = {
            "gamma": Tensor._wrap((up * xhat).sum(axis=(0, 1, 2)).reshape(1, 1, 1, -1)),
            "beta": Tensor._wrap(up.sum(axis=(0, 1, 2)).reshape(1, 1, 1, -1)),
        }
        gamma = self.params["gamma"].data
        if c["batch_stats"]:
            n = c["n"]
            dxhat = up * gamma
            dx = (inv_std / n) * (
                n * dxhat
                - dxhat.sum(axis=(0, 1, 2), keepdims=True)
                - xhat * (dxhat * xhat).sum(axis=(0, 1, 2), keepdims=True)
            )
        else:
            dx = up * gamma * inv_std
        return LayerGrads((Tensor._wrap(dx.astype(up.dtype, copy=False)),), grads)


class Softmax(Layer):
    kind = "softmax"

    def forward(self, x: Tensor, training: bool = False) -> Tensor:
        z = x.matrix
        if np.isnan(z).any():
            raise NumericError(f"{self.name}: NaN logits")
        z = z - z.max(axis=1, keepdims=True)  # shift for overflow safety
        e = np.exp(z)
        p = e / e.sum(axis=1, keepdims=True)
        self.cache = {"p": p}
        return Tensor._wrap(p.reshape(x.shape))

    def backward(self, upstream: Tensor) -> LayerGrads:
        c = self._need_cache()
        p = c["p"]
        dm = upstream.matrix
        dz = p * (dm - (dm * p).sum(axis=1, keepdims=True))
        return LayerGrads((Tensor._wrap(dz.reshape(upstream.shape)),))


class ResidualAdd(Layer):
    kind = "residual-add"
    n_inputs = 2

    def forward(self, main: Tensor, skip: Tensor, training: bool = False) -> Tensor:
        if main.shape != skip.shape:
            raise ShapeError(f"{self.name}: branch shapes differ: {main.shape} vs {skip.shape}")
        self.cache = {}
        return main + skip

    def backward(self, upstream: Tensor) -> LayerGrads:
        self._need_cache()
        return LayerGrads((upstream, upstream))


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x: Tensor, training: bool = False) -> Tensor:
        b, h, w, c = x.shape
        self.cache = {"x_shape": x.shape}
        return x.reshape((b, 1, 1, h * w * c))

    def backward(self, upstream: Tensor) -> LayerGrads:
        c = self._need_cache()
        return LayerGrads((upstream.reshape(c["x_shape"]),))


class GlobalAveragePool(Layer):
    kind = "global-avgpool"

    def forward(self, x: Tensor, training: bool = False) -> Tensor:
        b, h, w, c = x.shape
        self.cache = {"x_shape": x.shape}
        return Tensor._wrap(x.data.mean(axis=(1, 2), keepdims=True))

    def backward(self, upstream: Tensor) -> LayerGrads:
        c = self._need_cache()
        b, h, w, ch = c["x_shape"]
        dx = np.broadcast_to(upstream.data / (h * w), (b, h, w, ch))
        return LayerGrads((Tensor._wrap(np.ascontiguousarray(dx)),))


def depthwise_separable_block(x: Tensor, dw_weights: Tensor, pw_weights: Tensor,
                              stride: int = 1, training: bool = True) -> Tensor:
    """Apply one depthwise-separable block: DW -> BN -> ReLU -> PW -> BN -> ReLU.

    Normalization uses fresh unit-scale parameters; this is the functional form
    of the block the network builders assemble from individual layers.
    """
    kh, kw, c, one = dw_weights.shape
    if one != 1:
        raise ShapeError(f"depthwise weights must have a single kernel per channel, got {dw_weights.shape}")
    if pw_weights.shape[0] != 1 or pw_weights.shape[1] != 1 or pw_weights.shape[2] != c:
        raise ShapeError(f"pointwise weights {pw_weights.shape} do not match {c} channels")
    dtype = dw_weights.dtype
    dw = DepthwiseConv2D("dsb.dw", c, kernel=kh, stride=stride, dtype=dtype)
    dw.params["weights"] = dw_weights
    bn1 = BatchNorm("dsb.bn1", c, dtype=dtype)
    pw = PointwiseConv2D("dsb.pw", c, pw_weights.shape[3], dtype=dtype)
    pw.params["weights"] = pw_weights
    bn2 = BatchNorm("dsb.bn2", pw_weights.shape[3], dtype=dtype)
    relu1, relu2 = ReLU("dsb.relu1"), ReLU("dsb.relu2")
    out = relu1.forward(bn1.forward(dw.forward(x, training), training), training)
    return relu2.forward(bn2.forward(pw.forward(out, training), training), training)
