"""Convolution kernels in (batch, height, width, channels) layout.

im2col turns sliding windows into rows of a matrix so the convolution itself
is a single BLAS matmul; col2im scatters window gradients back. Both are the
throughput-critical paths of the engine.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .errors import ShapeError


def same_pad_amount(extent: int, kernel: int, stride: int) -> tuple[int, int]:
    """Zero padding for 'same' semantics: output extent is ceil(extent/stride).

    The asymmetric remainder goes to the bottom/right side; checkpoint
    compatibility depends on this split, so it is fixed here.
    """
    out = -(-extent // stride)
    total = max((out - 1) * stride + kernel - extent, 0)
    lo = total // 2
    return lo, total - lo


def out_extent(padded: int, kernel: int, stride: int) -> int:
    span = padded - kernel
    if span < 0:
        raise ShapeError(f"kernel of size {kernel} exceeds padded extent {padded}")
    return span // stride + 1


def pad_spatial(x: np.ndarray, pads: tuple[int, int, int, int]) -> np.ndarray:
    """Zero-pad the two spatial axes of a BHWC array: (top, bottom, left, right)."""
    pt, pb, pl, pr = pads
    if pt == pb == pl == pr == 0:
        return x
    return np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)))


def resolve_padding(h: int, w: int, kh: int, kw: int, stride: int, padding: str):
    """Return ((top, bottom, left, right), out_h, out_w) for a padding mode."""
    if padding == "same":
        pt, pb = same_pad_amount(h, kh, stride)
        pl, pr = same_pad_amount(w, kw, stride)
    elif padding == "valid":
        pt = pb = pl = pr = 0
    else:
        raise ShapeError(f"unknown padding mode {padding!r}")
    oh = out_extent(h + pt + pb, kh, stride)
    ow = out_extent(w + pl + pr, kw, stride)
    return (pt, pb, pl, pr), oh, ow


def window_view(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """Strided view of shape (B, oh, ow, kh, kw, C) over a padded BHWC array.

    The view aliases xp; callers must copy before writing.
    """
    b, hp, wp, c = xp.shape
    oh = out_extent(hp, kh, stride)
    ow = out_extent(wp, kw, stride)
    sb, sh, sw, sc = xp.strides
    return as_strided(
        xp,
        shape=(b, oh, ow, kh, kw, c),
        strides=(sb, sh * stride, sw * stride, sh, sw, sc),
        writeable=False,
    )


def im2col(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """Materialize windows as a (B*oh*ow, kh*kw*C) matrix."""
    win = window_view(xp, kh, kw, stride)
    b, oh, ow = win.shape[:3]
    c = xp.shape[3]
    return win.reshape(b * oh * ow, kh * kw * c)


def col2im(dwin: np.ndarray, padded_shape: tuple, stride: int) -> np.ndarray:
    """Scatter-add window gradients (B, oh, ow, kh, kw, C) back onto the padded grid."""
    b, oh, ow, kh, kw, c = dwin.shape
    out = np.zeros(padded_shape, dtype=dwin.dtype)
    for u in range(kh):
        for v in range(kw):
            out[:, u : u + stride * oh : stride, v : v + stride * ow : stride, :] += dwin[:, :, :, u, v, :]
    return out


def crop_spatial(xp: np.ndarray, pads: tuple[int, int, int, int], h: int, w: int) -> np.ndarray:
    pt, _, pl, _ = pads
    if pads == (0, 0, 0, 0):
        return xp
    return xp[:, pt : pt + h, pl : pl + w, :]
