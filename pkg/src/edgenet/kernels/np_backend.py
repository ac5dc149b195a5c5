"""Pure-numpy implementations of the hot kernels.

Every function here has a signature-identical twin in ``nb_backend`` (numba
@njit). The active backend is chosen in ``kernels.__init__`` via the
EDGE_BACKEND environment variable. Arrays in/out are float32 unless noted;
reductions that feed gradients accumulate in float64 where it is cheap.
"""

from __future__ import annotations

import numpy as np


def _patch_view(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """Strided (C, kh, kw, Ho, Wo) window view over a padded (C, H, W) array."""
    sc, sh, sw = xp.strides
    return np.lib.stride_tricks.as_strided(
        xp,
        shape=(xp.shape[0], kh, kw, ho, wo),
        strides=(sc, sh, sw, sh * stride, sw * stride),
        writeable=False,
    )


def conv1x1_fwd(x, w, bias, stride):
    """Pointwise convolution as a BLAS matmul over flattened pixels."""
    xs = x[:, ::stride, ::stride]
    ho, wo = xs.shape[1], xs.shape[2]
    y = w[:, :, 0, 0] @ np.ascontiguousarray(xs).reshape(x.shape[0], -1)
    if bias is not None:
        y = y + bias[:, None]
    return np.ascontiguousarray(y.reshape(w.shape[0], ho, wo), dtype=np.float32)


def conv1x1_bwd(x, w, gy, stride, need_gx, need_gw, need_gb):
    cin, h, wdt = x.shape
    cout = w.shape[0]
    gy_flat = gy.reshape(cout, -1)
    xs = np.ascontiguousarray(x[:, ::stride, ::stride]).reshape(cin, -1)
    gx = gw = gb = None
    if need_gw:
        gw = (gy_flat @ xs.T).reshape(cout, cin, 1, 1).astype(np.float32)
    if need_gx:
        gs = (w[:, :, 0, 0].T @ gy_flat).reshape(cin, gy.shape[1], gy.shape[2])
        if stride == 1:
            gx = np.ascontiguousarray(gs, dtype=np.float32)
        else:
            gx = np.zeros((cin, h, wdt), dtype=np.float32)
            gx[:, ::stride, ::stride] = gs
    if need_gb:
        gb = gy.sum(axis=(1, 2), dtype=np.float64).astype(np.float32)
    return gx, gw, gb


def conv2d_fwd(x, w, bias, stride, padding):
    if w.shape[2] == 1 and w.shape[3] == 1 and padding == 0:
        return conv1x1_fwd(x, w, bias, stride)
    cin, h, wdt = x.shape
    cout, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wdt + 2 * padding - kw) // stride + 1
    view = _patch_view(xp, kh, kw, stride, ho, wo)
    y = np.tensordot(w, view, axes=([1, 2, 3], [0, 1, 2]))
    if bias is not None:
        y = y + bias[:, None, None]
    return np.ascontiguousarray(y, dtype=np.float32)


def conv2d_bwd(x, w, gy, stride, padding, need_gx, need_gw, need_gb):
    if w.shape[2] == 1 and w.shape[3] == 1 and padding == 0:
        return conv1x1_bwd(x, w, gy, stride, need_gx, need_gw, need_gb)
    cin, h, wdt = x.shape
    cout, _, kh, kw = w.shape
    _, ho, wo = gy.shape
    gx = gw = gb = None
    if need_gw:
        xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
        view = _patch_view(xp, kh, kw, stride, ho, wo)
        gw = np.tensordot(gy, view, axes=([1, 2], [3, 4])).astype(np.float32)
    if need_gx:
        gxp = np.zeros((cin, h + 2 * padding, wdt + 2 * padding), dtype=np.float32)
        for p in range(kh):
            for q in range(kw):
                # (O,C)^T @ (O,Ho,Wo) scattered at the tap's footprint
                contrib = np.tensordot(w[:, :, p, q], gy, axes=([0], [0]))
                gxp[:, p : p + ho * stride : stride, q : q + wo * stride : stride] += contrib
        if padding:
            gx = np.ascontiguousarray(gxp[:, padding:-padding, padding:-padding])
        else:
            gx = gxp
    if need_gb:
        gb = gy.sum(axis=(1, 2), dtype=np.float64).astype(np.float32)
    return gx, gw, gb


def depthwise3x3_fwd(x, kern):
    """Per-channel 3x3 convolution with one shared kernel, zero padding 1."""
    c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    out = np.zeros_like(x)
    for p in range(3):
        for q in range(3):
            out += kern[p, q] * xp[:, p : p + h, q : q + w]
    return out


def _window_offsets(radius):
    side = 2 * radius + 1
    return [(dr, dc) for dr in range(-radius, radius + 1) for dc in range(-radius, radius + 1)], side


def local_attn_fwd(q, k, v, heads, radius):
    """Per-pixel multi-head attention over a clipped square window.

    Returns the (C,H,W) output and the (heads,H,W,K2) attention weights;
    weights of clipped (out-of-image) window slots are exactly zero.
    """
    c, h, w = q.shape
    d = c // heads
    offsets, side = _window_offsets(radius)
    k2 = side * side
    scale = 1.0 / np.sqrt(d)
    qh = q.reshape(heads, d, h, w)
    kh_ = k.reshape(heads, d, h, w)
    vh = v.reshape(heads, d, h, w)
    logits = np.full((heads, h, w, k2), -np.inf, dtype=np.float32)
    for idx, (dr, dc) in enumerate(offsets):
        r0, r1 = max(0, -dr), h - max(0, dr)
        c0, c1 = max(0, -dc), w - max(0, dc)
        if r0 >= r1 or c0 >= c1:
            continue
        prod = np.einsum(
            "ndij,ndij->nij",
            qh[:, :, r0:r1, c0:c1],
            kh_[:, :, r0 + dr : r1 + dr, c0 + dc : c1 + dc],
            dtype=np.float64,
        )
        logits[:, r0:r1, c0:c1, idx] = prod * scale
    m = logits.max(axis=-1, keepdims=True)
    e = np.exp(logits - m)
    attn = (e / e.sum(axis=-1, keepdims=True)).astype(np.float32)
    out = np.zeros((heads, d, h, w), dtype=np.float32)
    for idx, (dr, dc) in enumerate(offsets):
        r0, r1 = max(0, -dr), h - max(0, dr)
        c0, c1 = max(0, -dc), w - max(0, dc)
        if r0 >= r1 or c0 >= c1:
            continue
        out[:, :, r0:r1, c0:c1] += (
            attn[:, r0:r1, c0:c1, idx][:, None] * vh[:, :, r0 + dr : r1 + dr, c0 + dc : c1 + dc]
        )
    return out.reshape(c, h, w), attn


def local_attn_bwd(q, k, v, attn, gout, heads, radius):
    c, h, w = q.shape
    d = c // heads
    offsets, side = _window_offsets(radius)
    k2 = side * side
    scale = 1.0 / np.sqrt(d)
    qh = q.reshape(heads, d, h, w)
    kh_ = k.reshape(heads, d, h, w)
    vh = v.reshape(heads, d, h, w)
    gh = gout.reshape(heads, d, h, w)
    gq = np.zeros_like(qh)
    gk = np.zeros_like(kh_)
    gv = np.zeros_like(vh)
    gattn = np.zeros((heads, h, w, k2), dtype=np.float32)
    for idx, (dr, dc) in enumerate(offsets):
        r0, r1 = max(0, -dr), h - max(0, dr)
        c0, c1 = max(0, -dc), w - max(0, dc)
        if r0 >= r1 or c0 >= c1:
            continue
        gv[:, :, r0 + dr : r1 + dr, c0 + dc : c1 + dc] += (
            attn[:, r0:r1, c0:c1, idx][:, None] * gh[:, :, r0:r1, c0:c1]
        )
        gattn[:, r0:r1, c0:c1, idx] = np.einsum(
            "ndij,ndij->nij",
            gh[:, :, r0:r1, c0:c1],
            vh[:, :, r0 + dr : r1 + dr, c0 + dc : c1 + dc],
            dtype=np.float64,
        )
    # softmax jacobian: glogit = a * (gattn - sum(a * gattn))
    inner = (attn.astype(np.float64) * gattn).sum(axis=-1, keepdims=True)
    glog = (attn * (gattn - inner)).astype(np.float32)
    for idx, (dr, dc) in enumerate(offsets):
        r0, r1 = max(0, -dr), h - max(0, dr)
        c0, c1 = max(0, -dc), w - max(0, dc)
        if r0 >= r1 or c0 >= c1:
            continue
        gl = glog[:, r0:r1, c0:c1, idx][:, None] * scale
        gq[:, :, r0:r1, c0:c1] += gl * kh_[:, :, r0 + dr : r1 + dr, c0 + dc : c1 + dc]
        gk[:, :, r0 + dr : r1 + dr, c0 + dc : c1 + dc] += gl * qh[:, :, r0:r1, c0:c1]
    return gq.reshape(c, h, w), gk.reshape(c, h, w), gv.reshape(c, h, w)


def _bilinear_grid(n_out, n_in, scale):
    src = np.clip((np.arange(n_out) + 0.5) / scale - 0.5, 0.0, n_in - 1.0)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    f = (src - i0).astype(np.float32)
    return i0, i1, f


def bilinear_fwd(x, scale):
    c, h, w = x.shape
    if scale == 1:
        return x.copy()
    ho, wo = h * scale, w * scale
    r0, r1, fr = _bilinear_grid(ho, h, scale)
    c0, c1, fc = _bilinear_grid(wo, w, scale)
    top = x[:, r0, :] * (1.0 - fr)[None, :, None] + x[:, r1, :] * fr[None, :, None]
    out = top[:, :, c0] * (1.0 - fc)[None, None, :] + top[:, :, c1] * fc[None, None, :]
    return np.ascontiguousarray(out, dtype=np.float32)


def bilinear_bwd(gy, scale, h, w):
    c = gy.shape[0]
    if scale == 1:
        return gy.copy()
    ho, wo = h * scale, w * scale
    r0, r1, fr = _bilinear_grid(ho, h, scale)
    c0, c1, fc = _bilinear_grid(wo, w, scale)
    gx = np.zeros(c * h * w, dtype=np.float64)
    base = (np.arange(c) * (h * w))[:, None, None]
    for ri, rw in ((r0, 1.0 - fr), (r1, fr)):
        for ci, cw in ((c0, 1.0 - fc), (c1, fc)):
            weights = (gy * rw[None, :, None] * cw[None, None, :]).ravel()
            idx = (base + ri[None, :, None] * w + ci[None, None, :]).ravel()
            gx += np.bincount(idx, weights=weights, minlength=c * h * w)
    return gx.reshape(c, h, w).astype(np.float32)


_SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64)
_SOBEL_Y = _SOBEL_X.T


def _sample_or_zero(p, rr, cc):
    """Bilinear sample of p at float coords; coordinates outside return 0."""
    h, w = p.shape
    inb = (rr >= 0) & (rr <= h - 1) & (cc >= 0) & (cc <= w - 1)
    rcl = np.clip(rr, 0.0, h - 1.0)
    ccl = np.clip(cc, 0.0, w - 1.0)
    r0 = np.floor(rcl).astype(np.int64)
    c0 = np.floor(ccl).astype(np.int64)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    fr = rcl - r0
    fc = ccl - c0
    val = (
        p[r0, c0] * (1 - fr) * (1 - fc)
        + p[r0, c1] * (1 - fr) * fc
        + p[r1, c0] * fr * (1 - fc)
        + p[r1, c1] * fr * fc
    )
    return np.where(inb, val, 0.0)


def nms_thin(prob):
    """Suppress pixels not maximal along the local gradient direction.

    Orientation comes from Sobel gradients of the probability map
    (edge-replicated borders). The two comparison neighbours are sampled
    bilinearly one pixel away along +/- the gradient; samples outside the
    image count as 0. Ties (within 1e-6) retain the pixel, as do pixels
    with no defined gradient, so plateaus and ideal ridges survive.
    """
    p = prob.astype(np.float64)
    h, w = p.shape
    pp = np.pad(p, 1, mode="edge")
    gx = np.zeros_like(p)
    gy = np.zeros_like(p)
    for i in range(3):
        for j in range(3):
            sl = pp[i : i + h, j : j + w]
            gx += _SOBEL_X[i, j] * sl
            gy += _SOBEL_Y[i, j] * sl
    mag = np.hypot(gx, gy)
    defined = mag > 1e-12
    ux = np.where(defined, gx / np.where(defined, mag, 1.0), 0.0)
    uy = np.where(defined, gy / np.where(defined, mag, 1.0), 0.0)
    rows = np.arange(h)[:, None] + 0.0 * ux
    cols = np.arange(w)[None, :] + 0.0 * ux
    n1 = _sample_or_zero(p, rows + uy, cols + ux)
    n2 = _sample_or_zero(p, rows - uy, cols - ux)
    keep = ~defined | ((n1 - p <= 1e-6) & (n2 - p <= 1e-6))
    return np.where(keep, prob, 0.0).astype(np.float32)


def greedy_match(pred_rc, gt_rc, maxdist_px):
    """One-to-one greedy matching of pixel coordinate lists.

    Candidate pairs within the Euclidean tolerance are processed in
    ascending (squared distance, pred index, gt index) order; every pixel
    matches at most once. Returns the number of matched pairs.
    """
    np_, ng = len(pred_rc), len(gt_rc)
    if np_ == 0 or ng == 0:
        return 0
    dr = pred_rc[:, 0:1] - gt_rc[None, :, 0]
    dc = pred_rc[:, 1:2] - gt_rc[None, :, 1]
    d2 = dr * dr + dc * dc
    lim = maxdist_px * maxdist_px
    pi, gi = np.nonzero(d2 <= lim)
    if len(pi) == 0:
        return 0
    dists = d2[pi, gi]
    order = np.lexsort((gi, pi, dists))
    used_p = np.zeros(np_, dtype=bool)
    used_g = np.zeros(ng, dtype=bool)
    tp = 0
    for t in order:
        a, b = pi[t], gi[t]
        if not used_p[a] and not used_g[b]:
            used_p[a] = True
            used_g[b] = True
            tp += 1
    return tp
