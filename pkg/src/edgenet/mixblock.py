"""Residual block mixing local self-attention with shift-decomposed convolution.

One set of three 1x1 projections (query/key/value) is computed per forward
pass and feeds two aggregation paths:

* conv path: a per-head linear layer recombines the 3N projected groups
  into k**2 full-channel maps; map (p,q) is shifted by its kernel offset
  through a fixed one-hot depthwise convolution and the maps are summed,
  which is exactly a dense kxk convolution in decomposed form.
* attention path: per-pixel multi-head attention over a clipped square
  window, followed by a 1x1 output projection.

The paths are fused as relu(alpha * attention + beta * conv + input) with
learnable scalars alpha and beta.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import ConfigError, ShapeError
from .tensor import Tensor


@dataclass(frozen=True)
class MixConfig:
    channels: int
    heads: int = 4
    kernel_size: int = 3
    window_radius: int = 3

    def __post_init__(self):
        if self.channels % self.heads != 0:
            raise ConfigError(f"channels {self.channels} not divisible by heads {self.heads}")
        if self.kernel_size % 2 == 0 or self.kernel_size < 1:
            raise ConfigError(f"kernel_size must be odd, got {self.kernel_size}")
        if self.window_radius < 1:
            raise ConfigError(f"window_radius must be >= 1, got {self.window_radius}")

    @property
    def head_dim(self) -> int:
        return self.channels // self.heads


class MixBlock:
    def __init__(self, config: MixConfig, rng: np.random.Generator):
        self.config = config
        c = config.channels
        d = config.head_dim
        k2 = config.kernel_size ** 2
        proj_std = np.sqrt(1.0 / c)
        self.w_q = Tensor(rng.normal(0.0, proj_std, (c, c, 1, 1)), requires_grad=True)
        self.w_k = Tensor(rng.normal(0.0, proj_std, (c, c, 1, 1)), requires_grad=True)
        self.w_v = Tensor(rng.normal(0.0, proj_std, (c, c, 1, 1)), requires_grad=True)
        mix_std = np.sqrt(1.0 / (3 * d * k2))
        self.conv_mix = Tensor(
            rng.normal(0.0, mix_std, (k2, config.heads, d, 3 * d)), requires_grad=True
        )
        self.out_w = Tensor(rng.normal(0.0, proj_std, (c, c, 1, 1)), requires_grad=True)
        self.out_b = Tensor(np.zeros(c), requires_grad=True)
        # both paths contribute from step zero
        self.alpha = Tensor(np.float32(1.0), requires_grad=True)
        self.beta = Tensor(np.float32(1.0), requires_grad=True)

    def parameters(self) -> dict[str, Tensor]:
        return {
            "w_q": self.w_q,
            "w_k": self.w_k,
            "w_v": self.w_v,
            "conv_mix": self.conv_mix,
            "out_w": self.out_w,
            "out_b": self.out_b,
            "alpha": self.alpha,
            "beta": self.beta,
        }

    def project(self, x: Tensor):
        """The shared 1x1 projections; applied once, consumed by both paths."""
        if x.shape[0] != self.config.channels:
            raise ShapeError(f"expected {self.config.channels} channels, got {x.shape[0]}")
        q = ops.conv2d(x, self.w_q)
        k = ops.conv2d(x, self.w_k)
        v = ops.conv2d(x, self.w_v)
        return q, k, v

    def conv_path(self, q: Tensor, k: Tensor, v: Tensor) -> Tensor:
        ks = self.config.kernel_size
        half = ks // 2
        maps = ops.group_mix(q, k, v, self.conv_mix)
        out = None
        for m in range(ks * ks):
            dr = m // ks - half
            dc = m % ks - half
            feat = ops.take_map(maps, m)
            if abs(dr) <= 1 and abs(dc) <= 1:
                shifted = ops.shift_conv(feat, dr, dc)
            else:
                shifted = ops.shift(feat, dr, dc)
            out = shifted if out is None else ops.add(out, shifted)
        return out

    def attention_path(self, q: Tensor, k: Tensor, v: Tensor) -> Tensor:
        gathered = ops.local_attention(
            q, k, v, self.config.heads, self.config.window_radius
        )
        return ops.conv2d(gathered, self.out_w, self.out_b)

    def forward(self, x: Tensor) -> Tensor:
        q, k, v = self.project(x)
        f_att = self.attention_path(q, k, v)
        f_conv = self.conv_path(q, k, v)
        fused = ops.add(ops.add(ops.scale(f_att, self.alpha), ops.scale(f_conv, self.beta)), x)
        return ops.relu(fused)

    def attention_maps(self, x: Tensor) -> np.ndarray:
        """Softmax window weights per head/pixel, for inspection and tests."""
        q, k, _ = self.project(x)
        return ops.attention_weights(q, k, self.config.heads, self.config.window_radius)


def block_from_dense_kernel(kernel: np.ndarray, heads: int = 1,
                            window_radius: int = 1) -> MixBlock:
    """Build a block whose conv path reproduces a dense CxCxkxk convolution.

    Picks rotation-of-identity projections so that within each head the
    stacked q/k/v rows span all channels, then solves the per-head mixing
    weights exactly. Needs 3*C/heads >= C, i.e. at most 3 heads.
    """
    c, c2, kh, kw = kernel.shape
    if c != c2 or kh != kw:
        raise ConfigError(f"dense kernel must be (C,C,k,k), got {kernel.shape}")
    if heads > 3:
        raise ConfigError("per-head mixing can express a dense kernel only for heads <= 3")
    cfg = MixConfig(channels=c, heads=heads, kernel_size=kh, window_radius=window_radius)
    block = MixBlock(cfg, np.random.default_rng(0))
    d = cfg.head_dim
    eye = np.eye(c, dtype=np.float32)
    wq = eye
    wk = np.roll(eye, -d, axis=0)
    wv = np.roll(eye, -2 * d, axis=0)
    block.w_q.data = wq.reshape(c, c, 1, 1).copy()
    block.w_k.data = wk.reshape(c, c, 1, 1).copy()
    block.w_v.data = wv.reshape(c, c, 1, 1).copy()
    mix = np.empty((kh * kw, heads, d, 3 * d), dtype=np.float32)
    for g in range(heads):
        rows = slice(g * d, (g + 1) * d)
        span = np.vstack([wq[rows], wk[rows], wv[rows]])  # (3d, C)
        for m in range(kh * kw):
            target = kernel[rows, :, m // kw, m % kw]  # (d, C)
            sol, *_ = np.linalg.lstsq(span.T.astype(np.float64), target.T.astype(np.float64), rcond=None)
            mix[m, g] = sol.T
    block.conv_mix.data = mix
    return block
