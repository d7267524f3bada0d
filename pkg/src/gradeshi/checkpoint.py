"""Versioned binary model files.

Layout (all integers little-endian):

    magic   4 bytes  b"GDSH"
    version u32      currently 1
    hlen    u64      header length in bytes
    header  JSON     architecture, build seed, class manifest, preprocessing
                     settings, batch-norm statistics flags, tensor count,
                     optional optimizer hyperparameters and step counts
    then ``tensor count`` records, each:
        u16 name length, name (utf-8)
        u8  dtype code (0 = float32, 1 = float64)
        4 x u32 extents
        raw element data

The header carries everything needed to classify a raw image file with no
other inputs: rebuild the network, restore tensors, preprocess with the
stored image size and inversion flag.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from . import architectures, data
from .errors import CheckpointFormatError, CheckpointIntegrityError
from .network import Network
from .optim import Adam, AdamState
from .tensor import Tensor

MAGIC = b"GDSH"
VERSION = 1

_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


@dataclass
class Checkpoint:
    arch: architectures.ArchConfig
    build_seed: int
    manifest: dict[int, data.ClassInfo]
    image_size: int
    invert: bool
    bn_initialized: dict[str, bool]
    tensors: dict[str, Tensor]
    optimizer: dict | None = None


def _bn_flags(net: Network) -> dict[str, bool]:
    return {layer.name: layer.stats_initialized
            for layer in net.layers if layer.kind == "batchnorm"}


def save_checkpoint(net: Network, path, manifest: dict[int, data.ClassInfo],
                    invert: bool = True, build_seed: int = 0,
                    optimizer: Adam | None = None):
    """Write the network (and optionally optimizer moments) to ``path``."""
    tensors = dict(net.named_params())
    header = {
        "architecture": net.config.to_dict(),
        "build_seed": build_seed,
        "manifest": data.manifest_to_dict(manifest),
        "preprocessing": {"image_size": net.config.image_size, "invert": bool(invert)},
        "bn_initialized": _bn_flags(net),
        "optimizer": None,
    }
    if optimizer is not None:
        tensors.update(optimizer.state_tensors(net))
        header["optimizer"] = {
            "lr": optimizer.lr, "beta1": optimizer.beta1,
            "beta2": optimizer.beta2, "epsilon": optimizer.epsilon,
            "steps": optimizer.step_counts(net),
        }
    header["tensor_count"] = len(tensors)
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for name, tensor in sorted(tensors.items()):
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            code = _DTYPE_CODES[np.dtype(tensor.dtype)]
            fh.write(struct.pack("<B", code))
            fh.write(struct.pack("<4I", *tensor.shape))
            fh.write(np.ascontiguousarray(tensor.data).astype(_CODE_DTYPES[code], copy=False).tobytes())


def _read_exact(fh, count: int, what: str) -> bytes:
    buf = fh.read(count)
    if len(buf) != count:
        raise CheckpointIntegrityError(f"truncated checkpoint while reading {what}")
    return buf


def read_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise CheckpointFormatError(f"{path}: bad magic {magic!r}")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != VERSION:
            raise CheckpointFormatError(f"{path}: unsupported version {version}")
        (hlen,) = struct.unpack("<Q", _read_exact(fh, 8, "header length"))
        try:
            header = json.loads(_read_exact(fh, hlen, "header").decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointIntegrityError(f"{path}: unreadable header: {exc}") from exc
        count = int(header["tensor_count"])
        tensors: dict[str, Tensor] = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", _read_exact(fh, 2, "tensor name length"))
            name = _read_exact(fh, nlen, "tensor name").decode("utf-8")
            (code,) = struct.unpack("<B", _read_exact(fh, 1, "dtype"))
            if code not in _CODE_DTYPES:
                raise CheckpointIntegrityError(f"{path}: unknown dtype code {code} for {name}")
            shape = struct.unpack("<4I", _read_exact(fh, 16, "shape"))
            dt = _CODE_DTYPES[code]
            nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
            raw = _read_exact(fh, nbytes, f"data of {name}")
            arr = np.frombuffer(raw, dtype=dt).reshape(shape).astype(dt.newbyteorder("="))
            tensors[name] = Tensor._wrap(arr)
        if fh.read(1):
            raise CheckpointIntegrityError(f"{path}: trailing bytes after {count} declared tensors")
    optimizer = header.get("optimizer")
    return Checkpoint(
        arch=architectures.ArchConfig.from_dict(header["architecture"]),
        build_seed=int(header.get("build_seed", 0)),
        manifest=data.manifest_from_dict(header["manifest"]),
        image_size=int(header["preprocessing"]["image_size"]),
        invert=bool(header["preprocessing"]["invert"]),
        bn_initialized={str(k): bool(v) for k, v in header.get("bn_initialized", {}).items()},
        tensors=tensors,
        optimizer=optimizer,
    )


def instantiate(ck: Checkpoint) -> Network:
    """Rebuild the architecture and install the stored tensors."""
    first = next((t for name, t in sorted(ck.tensors.items())
                  if not name.startswith("optim.")), None)
    dtype = first.dtype if first is not None else np.float32
    net = architectures.build(ck.arch, seed=ck.build_seed, dtype=dtype)
    for _, layer, pname, value in net.param_items():
        full = f"{layer.name}.{pname}"
        if full not in ck.tensors:
            raise CheckpointIntegrityError(f"checkpoint lacks tensor {full}")
        stored = ck.tensors[full]
        if stored.shape != value.shape:
            raise CheckpointIntegrityError(
                f"tensor {full} has shape {stored.shape}, expected {value.shape}")
        layer.params[pname] = stored
    for layer in net.layers:
        if layer.kind == "batchnorm" and ck.bn_initialized.get(layer.name):
            layer.stats_initialized = True
    return net


def load_checkpoint(path) -> Network:
    return instantiate(read_checkpoint(path))


def restore_adam(net: Network, ck: Checkpoint) -> Adam:
    """Rebuild optimizer moments saved alongside the model, if any."""
    if not ck.optimizer:
        raise CheckpointIntegrityError("checkpoint has no optimizer section")
    adam = Adam(lr=ck.optimizer["lr"], beta1=ck.optimizer["beta1"],
                beta2=ck.optimizer["beta2"], epsilon=ck.optimizer["epsilon"])
    steps = ck.optimizer.get("steps", {})
    for i, layer in enumerate(net.layers):
        for pname in layer.grad_param_names:
            full = f"{layer.name}.{pname}"
            mkey = f"optim.{full}.m"
            if mkey not in ck.tensors:
                continue
            state = AdamState(m=ck.tensors[mkey].data.copy(),
                              v=ck.tensors[f"optim.{full}.v"].data.copy(),
                              t=int(steps.get(full, 0)))
            adam.states[(i, pname)] = state
    return adam
