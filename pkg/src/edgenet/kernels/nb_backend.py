"""Numba @njit implementations of the hot kernels.

Signature-compatible with ``np_backend``. Parallel loops only ever write
disjoint output slices, so results are deterministic regardless of thread
scheduling; dot products accumulate in float64. ``cache=True`` keeps
compilation cost to the first process that ever runs a kernel.

1x1 convolutions are reshaped matmuls and go straight to BLAS in both
backends; a jit loop cannot beat that.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .np_backend import conv1x1_bwd, conv1x1_fwd


@njit(cache=True)
def _conv2d_fwd(x, w, bias, stride, padding, has_bias):
    cin, h, wdt = x.shape
    cout, _, kh, kw = w.shape
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wdt + 2 * padding - kw) // stride + 1
    out = np.empty((cout, ho, wo), dtype=np.float32)
    for o in range(cout):
        b = bias[o] if has_bias else 0.0
        for i in range(ho):
            for j in range(wo):
                acc = 0.0
                r_base = i * stride - padding
                c_base = j * stride - padding
                for p in range(kh):
                    r = r_base + p
                    if r < 0 or r >= h:
                        continue
                    for q in range(kw):
                        c = c_base + q
                        if c < 0 or c >= wdt:
                            continue
                        for ci in range(cin):
                            acc += w[o, ci, p, q] * x[ci, r, c]
                out[o, i, j] = acc + b
    return out


def conv2d_fwd(x, w, bias, stride, padding):
    if w.shape[2] == 1 and w.shape[3] == 1 and padding == 0:
        return conv1x1_fwd(x, w, bias, stride)
    has_bias = bias is not None
    b = bias if has_bias else np.zeros(1, dtype=np.float32)
    return _conv2d_fwd(x, w, b, stride, padding, has_bias)


@njit(cache=True)
def _conv2d_bwd_gw(x, gy, kh, kw, stride, padding):
    cin, h, wdt = x.shape
    cout, ho, wo = gy.shape
    gw = np.zeros((cout, cin, kh, kw), dtype=np.float32)
    for o in range(cout):
        for ci in range(cin):
            for p in range(kh):
                for q in range(kw):
                    acc = 0.0
                    for i in range(ho):
                        r = i * stride - padding + p
                        if r < 0 or r >= h:
                            continue
                        for j in range(wo):
                            c = j * stride - padding + q
                            if c < 0 or c >= wdt:
                                continue
                            acc += gy[o, i, j] * x[ci, r, c]
                    gw[o, ci, p, q] = acc
    return gw


@njit(cache=True)
def _conv2d_bwd_gx(w, gy, h, wdt, stride, padding):
    cout, cin, kh, kw = w.shape
    _, ho, wo = gy.shape
    gx = np.zeros((cin, h, wdt), dtype=np.float32)
    for o in range(cout):
        for i in range(ho):
            for j in range(wo):
                g = gy[o, i, j]
                r_base = i * stride - padding
                c_base = j * stride - padding
                for p in range(kh):
                    r = r_base + p
                    if r < 0 or r >= h:
                        continue
                    for q in range(kw):
                        c = c_base + q
                        if c < 0 or c >= wdt:
                            continue
                        for ci in range(cin):
                            gx[ci, r, c] += np.float32(g * w[o, ci, p, q])
    return gx


@njit(cache=True)
def _conv2d_bwd_gb(gy):
    cout = gy.shape[0]
    gb = np.empty(cout, dtype=np.float32)
    for o in range(cout):
        acc = 0.0
        for i in range(gy.shape[1]):
            for j in range(gy.shape[2]):
                acc += gy[o, i, j]
        gb[o] = acc
    return gb


def conv2d_bwd(x, w, gy, stride, padding, need_gx, need_gw, need_gb):
    if w.shape[2] == 1 and w.shape[3] == 1 and padding == 0:
        return conv1x1_bwd(x, w, gy, stride, need_gx, need_gw, need_gb)
    gx = gw = gb = None
    if need_gw:
        gw = _conv2d_bwd_gw(x, gy, w.shape[2], w.shape[3], stride, padding)
    if need_gx:
        gx = _conv2d_bwd_gx(w, gy, x.shape[1], x.shape[2], stride, padding)
    if need_gb:
        gb = _conv2d_bwd_gb(gy)
    return gx, gw, gb


@njit(cache=True)
def depthwise3x3_fwd(x, kern):
    c, h, w = x.shape
    out = np.zeros((c, h, w), dtype=np.float32)
    for ci in range(c):
        for i in range(h):
            for j in range(w):
                acc = np.float32(0.0)
                for p in range(3):
                    r = i + p - 1
                    if r < 0 or r >= h:
                        continue
                    for q in range(3):
                        cc = j + q - 1
                        if cc < 0 or cc >= w:
                            continue
                        acc += np.float32(kern[p, q] * x[ci, r, cc])
                out[ci, i, j] = acc
    return out


@njit(cache=True, fastmath=True)
def _local_attn_fwd(q, k, v, heads, radius):
    c, h, w = q.shape
    d = c // heads
    side = 2 * radius + 1
    k2 = side * side
    scale = 1.0 / np.sqrt(d)
    attn = np.zeros((heads, h, w, k2), dtype=np.float32)
    out = np.zeros((c, h, w), dtype=np.float32)
    logits = np.empty(k2, dtype=np.float64)
    for i in range(h):
        rlo = -radius if i >= radius else -i
        rhi = radius if i + radius < h else h - 1 - i
        for j in range(w):
            clo = -radius if j >= radius else -j
            chi = radius if j + radius < w else w - 1 - j
            for n in range(heads):
                base = n * d
                mx = -1e300
                for dr in range(rlo, rhi + 1):
                    for dc in range(clo, chi + 1):
                        idx = (dr + radius) * side + (dc + radius)
                        acc = 0.0
                        for e in range(d):
                            acc += q[base + e, i, j] * k[base + e, i + dr, j + dc]
                        acc *= scale
                        logits[idx] = acc
                        if acc > mx:
                            mx = acc
                denom = 0.0
                for dr in range(rlo, rhi + 1):
                    for dc in range(clo, chi + 1):
                        idx = (dr + radius) * side + (dc + radius)
                        e_ = np.exp(logits[idx] - mx)
                        logits[idx] = e_
                        denom += e_
                for dr in range(rlo, rhi + 1):
                    for dc in range(clo, chi + 1):
                        idx = (dr + radius) * side + (dc + radius)
                        a = np.float32(logits[idx] / denom)
                        attn[n, i, j, idx] = a
                        for e in range(d):
                            out[base + e, i, j] += a * v[base + e, i + dr, j + dc]
    return out, attn


def local_attn_fwd(q, k, v, heads, radius):
    return _local_attn_fwd(q, k, v, heads, radius)


@njit(cache=True, fastmath=True)
def _local_attn_bwd(q, k, v, attn, gout, heads, radius):
    c, h, w = q.shape
    d = c // heads
    side = 2 * radius + 1
    k2 = side * side
    scale = 1.0 / np.sqrt(d)
    gq = np.zeros((c, h, w), dtype=np.float32)
    gk = np.zeros((c, h, w), dtype=np.float32)
    gv = np.zeros((c, h, w), dtype=np.float32)
    ga = np.empty(k2, dtype=np.float64)
    for i in range(h):
        rlo = -radius if i >= radius else -i
        rhi = radius if i + radius < h else h - 1 - i
        for j in range(w):
            clo = -radius if j >= radius else -j
            chi = radius if j + radius < w else w - 1 - j
            for n in range(heads):
                base = n * d
                inner = 0.0
                for dr in range(rlo, rhi + 1):
                    for dc in range(clo, chi + 1):
                        idx = (dr + radius) * side + (dc + radius)
                        a = attn[n, i, j, idx]
                        acc = 0.0
                        for e in range(d):
                            acc += gout[base + e, i, j] * v[base + e, i + dr, j + dc]
                            gv[base + e, i + dr, j + dc] += np.float32(a * gout[base + e, i, j])
                        ga[idx] = acc
                        inner += a * acc
                for dr in range(rlo, rhi + 1):
                    for dc in range(clo, chi + 1):
                        idx = (dr + radius) * side + (dc + radius)
                        gl = attn[n, i, j, idx] * (ga[idx] - inner) * scale
                        for e in range(d):
                            gq[base + e, i, j] += np.float32(gl * k[base + e, i + dr, j + dc])
                            gk[base + e, i + dr, j + dc] += np.float32(gl * q[base + e, i, j])
    return gq, gk, gv


def local_attn_bwd(q, k, v, attn, gout, heads, radius):
    return _local_attn_bwd(q, k, v, attn, gout, heads, radius)


@njit(cache=True)
def _bilinear_fwd(x, scale):
    c, h, w = x.shape
    ho, wo = h * scale, w * scale
    out = np.empty((c, ho, wo), dtype=np.float32)
    for i in range(ho):
        sr = (i + 0.5) / scale - 0.5
        if sr < 0.0:
            sr = 0.0
        if sr > h - 1.0:
            sr = h - 1.0
        r0 = int(np.floor(sr))
        r1 = min(r0 + 1, h - 1)
        fr = sr - r0
        for j in range(wo):
            sc = (j + 0.5) / scale - 0.5
            if sc < 0.0:
                sc = 0.0
            if sc > w - 1.0:
                sc = w - 1.0
            c0 = int(np.floor(sc))
            c1 = min(c0 + 1, w - 1)
            fc = sc - c0
            for ci in range(c):
                top = x[ci, r0, c0] * (1.0 - fc) + x[ci, r0, c1] * fc
                bot = x[ci, r1, c0] * (1.0 - fc) + x[ci, r1, c1] * fc
                out[ci, i, j] = top * (1.0 - fr) + bot * fr
    return out


def bilinear_fwd(x, scale):
    if scale == 1:
        return x.copy()
    return _bilinear_fwd(x, scale)


@njit(cache=True)
def _bilinear_bwd(gy, scale, h, w):
    c, ho, wo = gy.shape
    gx = np.zeros((c, h, w), dtype=np.float64)
    for i in range(ho):
        sr = (i + 0.5) / scale - 0.5
        if sr < 0.0:
            sr = 0.0
        if sr > h - 1.0:
            sr = h - 1.0
        r0 = int(np.floor(sr))
        r1 = min(r0 + 1, h - 1)
        fr = sr - r0
        for j in range(wo):
            sc = (j + 0.5) / scale - 0.5
            if sc < 0.0:
                sc = 0.0
            if sc > w - 1.0:
                sc = w - 1.0
            c0 = int(np.floor(sc))
            c1 = min(c0 + 1, w - 1)
            fc = sc - c0
            for ci in range(c):
                g = gy[ci, i, j]
                gx[ci, r0, c0] += g * (1.0 - fr) * (1.0 - fc)
                gx[ci, r0, c1] += g * (1.0 - fr) * fc
                gx[ci, r1, c0] += g * fr * (1.0 - fc)
                gx[ci, r1, c1] += g * fr * fc
    return gx.astype(np.float32)


def bilinear_bwd(gy, scale, h, w):
    if scale == 1:
        return gy.copy()
    return _bilinear_bwd(gy, scale, h, w)


@njit(cache=True)
def _sample_or_zero_scalar(p, r, c):
    h, w = p.shape
    if r < 0.0 or r > h - 1.0 or c < 0.0 or c > w - 1.0:
        return 0.0
    r0 = int(np.floor(r))
    c0 = int(np.floor(c))
    r1 = min(r0 + 1, h - 1)
    c1 = min(c0 + 1, w - 1)
    fr = r - r0
    fc = c - c0
    return (
        p[r0, c0] * (1 - fr) * (1 - fc)
        + p[r0, c1] * (1 - fr) * fc
        + p[r1, c0] * fr * (1 - fc)
        + p[r1, c1] * fr * fc
    )


@njit(cache=True)
def _nms_thin(prob):
    h, w = prob.shape
    p = prob.astype(np.float64)
    out = np.zeros((h, w), dtype=np.float32)
    for i in range(h):
        for j in range(w):
            gx = 0.0
            gy = 0.0
            for a in range(-1, 2):
                r = min(max(i + a, 0), h - 1)
                for b in range(-1, 2):
                    c = min(max(j + b, 0), w - 1)
                    # sobel taps: x weights by column offset, y by row offset
                    if b != 0:
                        gx += b * (2.0 if a == 0 else 1.0) * p[r, c]
                    if a != 0:
                        gy += a * (2.0 if b == 0 else 1.0) * p[r, c]
            mag = np.sqrt(gx * gx + gy * gy)
            if mag <= 1e-12:
                out[i, j] = prob[i, j]
                continue
            ux = gx / mag
            uy = gy / mag
            n1 = _sample_or_zero_scalar(p, i + uy, j + ux)
            n2 = _sample_or_zero_scalar(p, i - uy, j - ux)
            if n1 - p[i, j] <= 1e-6 and n2 - p[i, j] <= 1e-6:
                out[i, j] = prob[i, j]
    return out


def nms_thin(prob):
    return _nms_thin(np.ascontiguousarray(prob, dtype=np.float32))


@njit(cache=True)
def _greedy_match(pred_rc, gt_rc, maxdist_px):
    np_ = pred_rc.shape[0]
    ng = gt_rc.shape[0]
    if np_ == 0 or ng == 0:
        return 0
    lim = maxdist_px * maxdist_px
    cap = 0
    for a in range(np_):
        for b in range(ng):
            dr = pred_rc[a, 0] - gt_rc[b, 0]
            dc = pred_rc[a, 1] - gt_rc[b, 1]
            if dr * dr + dc * dc <= lim:
                cap += 1
    if cap == 0:
        return 0
    d2s = np.empty(cap, dtype=np.int64)
    pis = np.empty(cap, dtype=np.int64)
    gis = np.empty(cap, dtype=np.int64)
    t = 0
    for a in range(np_):
        for b in range(ng):
            dr = pred_rc[a, 0] - gt_rc[b, 0]
            dc = pred_rc[a, 1] - gt_rc[b, 1]
            d2 = dr * dr + dc * dc
            if d2 <= lim:
                d2s[t] = d2
                pis[t] = a
                gis[t] = b
                t += 1
    # stable sort on (distance, pred index, gt index); enumeration order
    # is already (pred, gt)-lexicographic so one stable distance sort does it
    order = np.argsort(d2s, kind="mergesort")
    used_p = np.zeros(np_, dtype=np.bool_)
    used_g = np.zeros(ng, dtype=np.bool_)
    tp = 0
    for t in range(cap):
        o = order[t]
        a, b = pis[o], gis[o]
        if not used_p[a] and not used_g[b]:
            used_p[a] = True
            used_g[b] = True
            tp += 1
    return tp


def greedy_match(pred_rc, gt_rc, maxdist_px):
    return _greedy_match(
        np.ascontiguousarray(pred_rc, dtype=np.int64),
        np.ascontiguousarray(gt_rc, dtype=np.int64),
        float(maxdist_px),
    )
