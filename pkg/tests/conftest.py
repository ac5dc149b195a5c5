"""Shared test utilities: finite-difference gradient checks and synthetic data."""

from __future__ import annotations

import numpy as np
import pytest

from edgenet import ops
from edgenet.tensor import ComputationTape, Tensor


def weighted_loss(out: Tensor, weights: np.ndarray) -> Tensor:
    """Scalar probe loss sum(out * weights); generic direction for grad checks."""
    return ops.sum_all(ops.mul(out, Tensor(weights)))


def fd_gradcheck(apply_fn, wrt, eps=1e-3, tol=1e-3, rng=None, max_elements=None):
    """Compare tape gradients of sum(apply_fn() * W) against central differences.

    ``apply_fn`` must rebuild its output from the current ``wrt`` tensor data
    on every call. The numeric side reduces in float64 so the comparison is
    limited by the float32 forward, not by the probe reduction.
    Returns the worst relative error over all checked parameters.
    """
    rng = rng or np.random.default_rng(0)
    with ComputationTape() as tape:
        out = apply_fn()
        weights = rng.normal(0.0, 1.0, out.shape).astype(np.float32)
        loss = weighted_loss(out, weights)
    for t in wrt:
        t.grad = None
    tape.backward(loss)
    w64 = weights.astype(np.float64)

    def scalar_loss():
        return float((apply_fn().data.astype(np.float64) * w64).sum())

    worst = 0.0
    for t in wrt:
        assert t.grad is not None, "no gradient reached a checked tensor"
        analytic = np.asarray(t.grad, dtype=np.float64).reshape(-1)
        flat = t.data.reshape(-1)
        idxs = range(flat.size)
        if max_elements is not None and flat.size > max_elements:
            idxs = rng.choice(flat.size, size=max_elements, replace=False)
        numeric = np.zeros(analytic.shape)
        checked = np.zeros(analytic.shape, dtype=bool)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + eps
            hi = scalar_loss()
            flat[i] = orig - eps
            lo = scalar_loss()
            flat[i] = orig
            numeric[i] = (hi - lo) / (2.0 * eps)
            checked[i] = True
        diff = np.abs(analytic[checked] - numeric[checked]).max() if checked.any() else 0.0
        scale = max(np.abs(numeric[checked]).max() if checked.any() else 0.0, 1e-2)
        worst = max(worst, diff / scale)
    assert worst < tol, f"gradient mismatch: rel error {worst:.2e} >= {tol}"
    return worst


def sampled_network_fd(net, image, n_params: int = 20, eps: float = 1e-3, seed: int = 0):
    """Finite differences on one random element of ``n_params`` sampled tensors.

    Returns (analytic, numeric) vectors over the sample. Deep float32
    composition leaves ~1e-4 absolute noise on individual tiny gradients,
    so callers compare with a vector-level relative error: a wrong backward
    rule shifts mid-magnitude components by orders of magnitude more.
    """
    from edgenet.tensor import ComputationTape

    rng = np.random.default_rng(seed)
    params = net.parameters()
    names = sorted(params)
    picked = rng.choice(len(names), size=n_params, replace=False)
    with ComputationTape() as tape:
        out = net.forward(image).fused
        weights = rng.normal(0.0, 1.0, out.shape).astype(np.float32)
        loss = weighted_loss(out, weights)
    for t in params.values():
        t.grad = None
    tape.backward(loss)
    w64 = weights.astype(np.float64)

    def scalar_loss():
        return float((net.forward(image).fused.data.astype(np.float64) * w64).sum())

    analytic, numeric = [], []
    for i in picked:
        t = params[names[i]]
        flat = t.data.reshape(-1)
        j = int(rng.integers(flat.size))
        orig = flat[j]
        flat[j] = orig + eps
        hi = scalar_loss()
        flat[j] = orig - eps
        lo = scalar_loss()
        flat[j] = orig
        numeric.append((hi - lo) / (2.0 * eps))
        analytic.append(0.0 if t.grad is None else float(np.asarray(t.grad).reshape(-1)[j]))
    return np.array(analytic), np.array(numeric)


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    diff = np.abs(a - b).max() if a.size else 0.0
    scale = max(np.abs(a).max() if a.size else 0.0,
                np.abs(b).max() if b.size else 0.0, 1e-12)
    return diff / scale


# ----------------------------------------------------------- synthetic scenes


def synthetic_shapes(size: int = 64):
    """Four deterministic shape images with single-pixel boundary ground truth.

    High-contrast filled shapes on textured backgrounds; edges sit exactly
    on the gt pixels, which is what a memorization run must reproduce.
    """
    rng = np.random.default_rng(7)
    scenes = []
    yy, xx = np.mgrid[0:size, 0:size]

    def finish(mask, colors):
        inside, outside = colors
        image = np.empty((3, size, size), dtype=np.float32)
        noise = rng.normal(0.0, 0.02, (3, size, size))
        for ch in range(3):
            image[ch] = np.where(mask, inside[ch], outside[ch]) + noise[ch]
        image = np.clip(image, 0.0, 1.0).astype(np.float32)
        er = np.zeros_like(mask)
        er[1:-1, 1:-1] = (
            mask[1:-1, 1:-1]
            & mask[:-2, 1:-1] & mask[2:, 1:-1] & mask[1:-1, :-2] & mask[1:-1, 2:]
        )
        boundary = (mask & ~er)
        boundary[0, :] = boundary[-1, :] = False  # no labels on the image frame
        boundary[:, 0] = boundary[:, -1] = False
        return image, boundary.astype(np.float32)

    rect = (yy >= 14) & (yy < 46) & (xx >= 18) & (xx < 50)
    scenes.append(finish(rect, ((0.85, 0.25, 0.2), (0.1, 0.4, 0.75))))
    circle = (yy - 32) ** 2 + (xx - 30) ** 2 <= 18 ** 2
    scenes.append(finish(circle, ((0.2, 0.8, 0.3), (0.7, 0.65, 0.1))))
    tri = (xx >= 10) & (yy <= 54) & (yy >= 10 + (xx - 10))
    scenes.append(finish(tri, ((0.9, 0.85, 0.2), (0.25, 0.15, 0.55))))
    bars = ((yy + 2 * xx) % 24 < 8)
    scenes.append(finish(bars, ((0.75, 0.3, 0.7), (0.2, 0.6, 0.6))))
    return scenes


@pytest.fixture(scope="session")
def shape_dataset():
    return synthetic_shapes(64)
