"""Differentiable tensor operations.

Each function computes its forward result eagerly (heavy lifting lives in
``kernels``) and, when an active tape sees a differentiable input, records
a closure that maps the output gradient to input gradients. Gradients in
closures are returned as fresh arrays or aliased read-only buffers; the
tape accumulates without mutating them.
"""

from __future__ import annotations

from typing import Optional, Sequence, Union

import numpy as np

from . import kernels
from .errors import ShapeError
from .tensor import Tensor, active_tape


def _wrap(op: str, inputs: Sequence[Tensor], out_data: np.ndarray, backward_fn) -> Tensor:
    out = Tensor(out_data)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(op, inputs, out, backward_fn)
    return out


# ---------------------------------------------------------------- pointwise


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add: {a.shape} vs {b.shape}")
    return _wrap("add", (a, b), a.data + b.data, lambda g: (g, g))


def add_scalar(x: Tensor, c: float) -> Tensor:
    return _wrap("add_scalar", (x,), x.data + np.float32(c), lambda g: (g,))


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul: {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data
    return _wrap("mul", (a, b), ad * bd, lambda g: (g * bd, g * ad))


def scale(x: Tensor, s: Union[float, Tensor]) -> Tensor:
    """x * s for a python float or a scalar tensor (differentiable in both)."""
    if isinstance(s, Tensor):
        if s.data.shape != ():
            raise ShapeError(f"scale factor must be scalar, got {s.data.shape}")
        xd, sd = x.data, s.data

        def bwd(g):
            gs = np.float32((g.astype(np.float64) * xd).sum())
            return g * sd, np.asarray(gs, dtype=np.float32)

        return _wrap("scale", (x, s), xd * sd, bwd)
    f = np.float32(s)
    return _wrap("scale", (x,), x.data * f, lambda g: (g * f,))


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    total = np.asarray(x.data.sum(dtype=np.float64), dtype=np.float32)
    return _wrap("sum", (x,), total, lambda g: (np.full(shape, g, dtype=np.float32),))


def log(x: Tensor) -> Tensor:
    xd = x.data
    return _wrap("log", (x,), np.log(xd), lambda g: (g / xd,))


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    xd = x.data
    out = np.clip(xd, lo, hi)
    mask = ((xd >= lo) & (xd <= hi)).astype(np.float32)
    return _wrap("clamp", (x,), out, lambda g: (g * mask,))


def relu(x: Tensor) -> Tensor:
    mask = (x.data > 0).astype(np.float32)
    return _wrap("relu", (x,), x.data * mask, lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    out = np.empty_like(xd)
    pos = xd >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
    ex = np.exp(xd[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _wrap("sigmoid", (x,), out, lambda g: (g * out * (1.0 - out),))


def softmax_axis(x: Tensor, axis: int) -> Tensor:
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"softmax axis {axis} invalid for shape {x.shape}")
    xd = x.data
    m = xd.max(axis=axis, keepdims=True)
    e = np.exp(xd - m)
    out = (e / e.sum(axis=axis, keepdims=True)).astype(np.float32)

    def bwd(g):
        inner = (out * g).sum(axis=axis, keepdims=True)
        return (out * (g - inner),)

    return _wrap("softmax", (x,), out, bwd)


def concat_channels(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise ShapeError("concat of zero tensors")
    hw = parts[0].shape[1:]
    for p in parts:
        if p.ndim != 3 or p.shape[1:] != hw:
            raise ShapeError(f"concat spatial mismatch: {p.shape} vs (*, {hw})")
    sizes = [p.shape[0] for p in parts]
    out = np.concatenate([p.data for p in parts], axis=0)
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.ascontiguousarray(piece) for piece in np.split(g, splits, axis=0))

    return _wrap("concat", tuple(parts), out, bwd)


# ------------------------------------------------------------- convolution


def conv2d(x: Tensor, w: Tensor, bias: Optional[Tensor] = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    if x.ndim != 3 or w.ndim != 4:
        raise ShapeError(f"conv2d expects (C,H,W) and (O,C,kh,kw), got {x.shape}, {w.shape}")
    if w.shape[1] != x.shape[0]:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape[0]} vs weight {w.shape[1]}")
    kh, kw = w.shape[2], w.shape[3]
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d kernel must be odd, got {kh}x{kw}")
    if padding < 0 or stride < 1:
        raise ShapeError("conv2d needs padding >= 0 and stride >= 1")
    if bias is not None and bias.shape != (w.shape[0],):
        raise ShapeError(f"conv2d bias shape {bias.shape} != ({w.shape[0]},)")

    xd, wd = x.data, w.data
    bd = bias.data if bias is not None else None
    out = kernels.conv2d_fwd(xd, wd, bd, stride, padding)
    inputs = (x, w) if bias is None else (x, w, bias)

    def bwd(g):
        g = np.ascontiguousarray(g)
        gx, gw, gb = kernels.conv2d_bwd(
            xd, wd, g, stride, padding,
            x.requires_grad, w.requires_grad,
            bias is not None and bias.requires_grad,
        )
        return (gx, gw) if bias is None else (gx, gw, gb)

    return _wrap("conv2d", inputs, out, bwd)


def shift(x: Tensor, dx: int, dy: int) -> Tensor:
    """out[c,i,j] = x[c, i+dx, j+dy], zero where the source is out of bounds."""
    if x.ndim != 3:
        raise ShapeError(f"shift expects (C,H,W), got {x.shape}")
    c, h, w = x.shape
    if abs(dx) >= min(h, w) or abs(dy) >= min(h, w):
        raise ShapeError(f"shift offset ({dx},{dy}) too large for {h}x{w}")

    def _shift_arr(arr, sx, sy):
        out = np.zeros_like(arr)
        r0, r1 = max(0, -sx), h - max(0, sx)
        c0, c1 = max(0, -sy), w - max(0, sy)
        if r0 < r1 and c0 < c1:
            out[:, r0:r1, c0:c1] = arr[:, r0 + sx : r1 + sx, c0 + sy : c1 + sy]
        return out

    return _wrap("shift", (x,), _shift_arr(x.data, dx, dy),
                 lambda g: (_shift_arr(g, -dx, -dy),))


def shift_conv(x: Tensor, dx: int, dy: int) -> Tensor:
    """Shift realized as a per-channel 3x3 convolution with a fixed one-hot kernel."""
    if x.ndim != 3:
        raise ShapeError(f"shift_conv expects (C,H,W), got {x.shape}")
    if abs(dx) > 1 or abs(dy) > 1:
        raise ShapeError(f"shift_conv supports offsets in {{-1,0,1}}, got ({dx},{dy})")
    kern = np.zeros((3, 3), dtype=np.float32)
    kern[1 + dx, 1 + dy] = 1.0
    mirror = np.zeros((3, 3), dtype=np.float32)
    mirror[1 - dx, 1 - dy] = 1.0
    out = kernels.depthwise3x3_fwd(x.data, kern)
    return _wrap("shift_conv", (x,), out,
                 lambda g: (kernels.depthwise3x3_fwd(np.ascontiguousarray(g), mirror),))


def bilinear_upsample(x: Tensor, scale_factor: int) -> Tensor:
    if x.ndim != 3:
        raise ShapeError(f"bilinear_upsample expects (C,H,W), got {x.shape}")
    if scale_factor < 1:
        raise ShapeError(f"scale must be >= 1, got {scale_factor}")
    c, h, w = x.shape
    out = kernels.bilinear_fwd(x.data, scale_factor)
    return _wrap("upsample", (x,), out,
                 lambda g: (kernels.bilinear_bwd(np.ascontiguousarray(g), scale_factor, h, w),))


# ---------------------------------------------------------------- attention


def local_attention(q: Tensor, k: Tensor, v: Tensor, heads: int, radius: int) -> Tensor:
    """Multi-head attention over a clipped square pixel window.

    Logits are scaled dot products (1/sqrt(d) with d = C/heads), softmaxed
    over the window clipped to valid pixels; the output linearly combines
    the value projections with those weights, heads concatenated.
    """
    if not (q.shape == k.shape == v.shape) or q.ndim != 3:
        raise ShapeError(f"attention shapes differ: {q.shape}, {k.shape}, {v.shape}")
    c = q.shape[0]
    if c % heads != 0:
        raise ShapeError(f"channels {c} not divisible by heads {heads}")
    if radius < 1:
        raise ShapeError(f"window radius must be >= 1, got {radius}")
    qd, kd, vd = q.data, k.data, v.data
    out, attn = kernels.local_attn_fwd(qd, kd, vd, heads, radius)

    def bwd(g):
        return kernels.local_attn_bwd(qd, kd, vd, attn, np.ascontiguousarray(g), heads, radius)

    return _wrap("local_attention", (q, k, v), out, bwd)


def attention_weights(q: Tensor, k: Tensor, heads: int, radius: int) -> np.ndarray:
    """The (heads,H,W,window) softmax weights, for inspection; not differentiable."""
    _, attn = kernels.local_attn_fwd(q.data, k.data, k.data, heads, radius)
    return attn


# --------------------------------------------------- projected-group mixing


def group_mix(q: Tensor, k: Tensor, v: Tensor, weights: Tensor) -> Tensor:
    """Per-head linear recombination of the 3 projections into k**2 maps.

    ``weights`` has shape (k2, groups, d, 3d); group g of output map m is
    weights[m,g] @ concat(q_g, k_g, v_g). Output shape (k2, C, H, W).
    """
    if not (q.shape == k.shape == v.shape) or q.ndim != 3:
        raise ShapeError(f"group_mix projections differ: {q.shape}, {k.shape}, {v.shape}")
    k2, groups, d, d3 = weights.shape
    c, h, w = q.shape
    if groups * d != c or d3 != 3 * d:
        raise ShapeError(f"group_mix weights {weights.shape} incompatible with C={c}")

    def stack(qd, kd, vd):
        # (groups, 3d, H*W)
        u = np.empty((groups, 3 * d, h * w), dtype=np.float32)
        u[:, :d] = qd.reshape(groups, d, -1)
        u[:, d : 2 * d] = kd.reshape(groups, d, -1)
        u[:, 2 * d :] = vd.reshape(groups, d, -1)
        return u

    u = stack(q.data, k.data, v.data)
    wd = weights.data
    out = np.empty((k2, groups, d, h * w), dtype=np.float32)
    for g in range(groups):
        out[:, g] = (wd[:, g].reshape(k2 * d, 3 * d) @ u[g]).reshape(k2, d, -1)
    out = out.reshape(k2, c, h, w)

    def bwd(gout):
        gout = gout.reshape(k2, groups, d, h * w)
        gu = np.empty_like(u)
        gw = np.empty_like(wd)
        for g in range(groups):
            gm = gout[:, g].reshape(k2 * d, h * w)
            gu[g] = wd[:, g].reshape(k2 * d, 3 * d).T @ gm
            gw[:, g] = (gm @ u[g].T).reshape(k2, d, 3 * d)
        gq = np.ascontiguousarray(gu[:, :d].reshape(c, h, w))
        gk = np.ascontiguousarray(gu[:, d : 2 * d].reshape(c, h, w))
        gv = np.ascontiguousarray(gu[:, 2 * d :].reshape(c, h, w))
        return gq, gk, gv, gw

    return _wrap("group_mix", (q, k, v, weights), out, bwd)


def take_map(x: Tensor, index: int) -> Tensor:
    """Select slice ``index`` along the leading axis."""
    if not 0 <= index < x.shape[0]:
        raise ShapeError(f"take_map index {index} out of range for {x.shape}")
    shape = x.shape

    def bwd(g):
        gx = np.zeros(shape, dtype=np.float32)
        gx[index] = g
        return (gx,)

    return _wrap("take_map", (x,), x.data[index].copy(), bwd)
