"""Densely connected edge-detection backbone with six supervised heads.

Five main blocks of stacked {mix block + 1x1 conv} sub-blocks run at
decreasing resolution. Block i consumes a strided 1x1 projection of its
predecessor plus strided 1x1 projections of every earlier level (dense
skips). Six upsampling heads (stem + five blocks, no shared weights)
produce full-resolution logit maps; a 1x1 fusion conv over the stacked
logits yields the final map. All maps pass through a sigmoid.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from . import ops
from .errors import CheckpointError, ConfigError, DataError, ShapeError
from .loss import supervision_terms
from .mixblock import MixBlock, MixConfig
from .tensor import ComputationTape, Tensor

SIDE_OUTPUTS = 6


@dataclass(frozen=True)
class NetworkConfig:
    channels: tuple[int, ...] = (16, 32, 48, 64, 80)
    subblocks: tuple[int, ...] = (2, 2, 3, 3, 3)
    downsample: tuple[int, ...] = (1, 2, 4, 8, 16)
    heads: int = 4
    kernel_size: int = 3
    window_radius: int = 3
    side_outputs: int = SIDE_OUTPUTS

    def __post_init__(self):
        for name in ("channels", "subblocks", "downsample"):
            value = tuple(getattr(self, name))
            object.__setattr__(self, name, value)
            if len(value) != 5:
                raise ConfigError(f"{name} must list 5 main blocks, got {len(value)}")
        if self.side_outputs != SIDE_OUTPUTS:
            raise ConfigError(f"side_outputs is fixed at {SIDE_OUTPUTS}")
        for c in self.channels:
            if c % self.heads != 0:
                raise ConfigError(f"channels {c} not divisible by heads {self.heads}")
        factors = (1,) + self.downsample
        for prev, cur in zip(factors, factors[1:]):
            if cur < prev or cur % prev != 0:
                raise ConfigError(f"downsample factors must grow by integer steps: {self.downsample}")

    @property
    def level_factors(self) -> tuple[int, ...]:
        """Resolution divisor of every level: stem plus the five blocks."""
        return (1,) + self.downsample

    @property
    def max_factor(self) -> int:
        return max(self.downsample)


class EdgeOutputs(NamedTuple):
    sides: list[Tensor]  # six (1,H,W) sigmoid maps
    fused: Tensor        # (1,H,W) sigmoid map


class SubBlock:
    """One mix block followed by a 1x1 channel-exchange convolution."""

    def __init__(self, channels: int, cfg: NetworkConfig, rng: np.random.Generator):
        self.mix = MixBlock(
            MixConfig(channels, cfg.heads, cfg.kernel_size, cfg.window_radius), rng
        )
        std = np.sqrt(1.0 / channels)
        self.conv_w = Tensor(rng.normal(0.0, std, (channels, channels, 1, 1)), requires_grad=True)
        self.conv_b = Tensor(np.zeros(channels), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(self.mix.forward(x), self.conv_w, self.conv_b)

    def parameters(self) -> dict[str, Tensor]:
        params = {f"mix.{k}": v for k, v in self.mix.parameters().items()}
        params["conv.w"] = self.conv_w
        params["conv.b"] = self.conv_b
        return params


class EdgeNetwork:
    def __init__(self, config: NetworkConfig, rng: np.random.Generator):
        self.config = config
        self.step_count = 0
        c1 = config.channels[0]
        self.stem_w = Tensor(rng.normal(0.0, np.sqrt(2.0 / 27), (c1, 3, 3, 3)), requires_grad=True)
        self.stem_b = Tensor(np.zeros(c1), requires_grad=True)
        level_ch = (c1,) + config.channels
        self.trans = []
        self.skips: dict[tuple[int, int], tuple[Tensor, Tensor]] = {}
        self.blocks: list[list[SubBlock]] = []
        for i in range(1, 6):
            cin, cout = level_ch[i - 1], level_ch[i]
            std = np.sqrt(1.0 / cin)
            self.trans.append(
                (
                    Tensor(rng.normal(0.0, std, (cout, cin, 1, 1)), requires_grad=True),
                    Tensor(np.zeros(cout), requires_grad=True),
                )
            )
            for j in range(i - 1):
                cj = level_ch[j]
                stdj = np.sqrt(1.0 / cj)
                self.skips[(j, i)] = (
                    Tensor(rng.normal(0.0, stdj, (cout, cj, 1, 1)), requires_grad=True),
                    Tensor(np.zeros(cout), requires_grad=True),
                )
            self.blocks.append(
                [SubBlock(cout, config, rng) for _ in range(config.subblocks[i - 1])]
            )
        self.heads = []
        for lvl in range(6):
            c = level_ch[lvl]
            self.heads.append(
                (
                    Tensor(rng.normal(0.0, np.sqrt(1.0 / c), (1, c, 1, 1)), requires_grad=True),
                    Tensor(np.zeros(1), requires_grad=True),
                )
            )
        self.fuse_w = Tensor(np.full((1, 6, 1, 1), 1.0 / 6), requires_grad=True)
        self.fuse_b = Tensor(np.zeros(1), requires_grad=True)

    def parameters(self) -> dict[str, Tensor]:
        params: dict[str, Tensor] = {"stem.w": self.stem_w, "stem.b": self.stem_b}
        for i in range(1, 6):
            tw, tb = self.trans[i - 1]
            params[f"block{i}.trans.w"] = tw
            params[f"block{i}.trans.b"] = tb
            for j in range(i - 1):
                sw, sb = self.skips[(j, i)]
                params[f"block{i}.skip{j}.w"] = sw
                params[f"block{i}.skip{j}.b"] = sb
            for s, sub in enumerate(self.blocks[i - 1]):
                for k, v in sub.parameters().items():
                    params[f"block{i}.sub{s}.{k}"] = v
        for lvl in range(6):
            hw, hb = self.heads[lvl]
            params[f"head{lvl}.w"] = hw
            params[f"head{lvl}.b"] = hb
        params["fuse.w"] = self.fuse_w
        params["fuse.b"] = self.fuse_b
        return params

    def num_parameters(self) -> int:
        return sum(t.size for t in self.parameters().values())

    def forward(self, image: Tensor) -> EdgeOutputs:
        if image.ndim != 3 or image.shape[0] != 3:
            raise ShapeError(f"expected (3,H,W) image, got {image.shape}")
        _, h, w = image.shape
        mf = self.config.max_factor
        if h % mf or w % mf:
            raise ShapeError(f"{h}x{w} not divisible by the max downsample factor {mf}")
        factors = self.config.level_factors
        feats = [ops.relu(ops.conv2d(image, self.stem_w, self.stem_b, padding=1))]
        for i in range(1, 6):
            tw, tb = self.trans[i - 1]
            x = ops.conv2d(feats[i - 1], tw, tb, stride=factors[i] // factors[i - 1])
            for j in range(i - 1):
                sw, sb = self.skips[(j, i)]
                x = ops.add(x, ops.conv2d(feats[j], sw, sb, stride=factors[i] // factors[j]))
            for sub in self.blocks[i - 1]:
                x = sub.forward(x)
            feats.append(x)
        logits = []
        for lvl in range(6):
            hw_, hb = self.heads[lvl]
            up = ops.bilinear_upsample(feats[lvl], factors[lvl])
            logits.append(ops.conv2d(up, hw_, hb))
        sides = [ops.sigmoid(lg) for lg in logits]
        fused = ops.sigmoid(ops.conv2d(ops.concat_channels(logits), self.fuse_w, self.fuse_b))
        return EdgeOutputs(sides=sides, fused=fused)


def build(config: NetworkConfig, seed: int) -> EdgeNetwork:
    """Deterministic construction: the same seed gives bit-identical parameters."""
    return EdgeNetwork(config, np.random.default_rng(seed))


# ------------------------------------------------------------------ training


class Adam:
    """Adam with decoupled weight decay over a named parameter dict."""

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self._m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self._v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            if self.weight_decay:
                p.data -= np.float32(self.lr * self.weight_decay) * p.data
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data -= np.float32(self.lr) * update.astype(np.float32)


def _check_gt(gt: np.ndarray):
    off = np.abs(gt - np.round(gt)).max() if gt.size else 0.0
    if off > 1e-6 or gt.min() < -1e-6 or gt.max() > 1.0 + 1e-6:
        raise DataError("ground truth must be binary {0,1}")


def train_step(net: EdgeNetwork, batch: Sequence[tuple[np.ndarray, np.ndarray]],
               optimizer: Adam, collect_terms: bool = False):
    """One optimizer update on the mean deep-supervision loss of the batch.

    Returns the pre-update loss value; with ``collect_terms`` also the
    batch-mean of the seven per-map losses (six sides then fused).
    """
    if not batch:
        raise DataError("empty batch")
    losses = None
    term_sums = np.zeros(7, dtype=np.float64)
    with ComputationTape() as tape:
        for image, gt in batch:
            gt = np.asarray(gt, dtype=np.float32)
            _check_gt(gt)
            out = net.forward(Tensor(image))
            terms = supervision_terms(out.sides, out.fused, gt)
            item = terms[0]
            for term in terms[1:]:
                item = ops.add(item, term)
            term_sums += [float(t.data) for t in terms]
            losses = item if losses is None else ops.add(losses, item)
        batch_loss = ops.scale(losses, 1.0 / len(batch))
    optimizer.zero_grad()
    tape.backward(batch_loss)
    optimizer.step()
    net.step_count += 1
    value = float(batch_loss.data)
    if collect_terms:
        return value, term_sums / len(batch)
    return value


# --------------------------------------------------------------- checkpoints

_MAGIC = b"EDGC"
_VERSION = 1


def _config_to_text(cfg: NetworkConfig) -> str:
    return "\n".join(
        [
            "channels = " + ",".join(map(str, cfg.channels)),
            "subblocks = " + ",".join(map(str, cfg.subblocks)),
            "downsample = " + ",".join(map(str, cfg.downsample)),
            f"heads = {cfg.heads}",
            f"kernel_size = {cfg.kernel_size}",
            f"window_radius = {cfg.window_radius}",
            f"side_outputs = {cfg.side_outputs}",
        ]
    )


def _config_from_text(text: str) -> NetworkConfig:
    kv = {}
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        key, _, value = line.partition("=")
        kv[key.strip()] = value.strip()
    try:
        return NetworkConfig(
            channels=tuple(int(x) for x in kv["channels"].split(",")),
            subblocks=tuple(int(x) for x in kv["subblocks"].split(",")),
            downsample=tuple(int(x) for x in kv["downsample"].split(",")),
            heads=int(kv["heads"]),
            kernel_size=int(kv["kernel_size"]),
            window_radius=int(kv["window_radius"]),
            side_outputs=int(kv["side_outputs"]),
        )
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"bad config echo in checkpoint: {exc}") from exc


def save(net: EdgeNetwork, path) -> None:
    """Little-endian container: magic, version, step, config echo, parameters."""
    params = net.parameters()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IQ", _VERSION, net.step_count))
        echo = _config_to_text(net.config).encode("utf-8")
        fh.write(struct.pack("<I", len(echo)))
        fh.write(echo)
        fh.write(struct.pack("<I", len(params)))
        for name, tensor in params.items():
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", tensor.ndim))
            for dim in tensor.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(np.ascontiguousarray(tensor.data, dtype="<f4").tobytes())


def _read_exact(fh, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointError("truncated checkpoint file")
    return data


def load(path, config: Optional[NetworkConfig] = None) -> EdgeNetwork:
    with open(path, "rb") as fh:
        if _read_exact(fh, 4) != _MAGIC:
            raise CheckpointError("bad magic bytes: not a checkpoint file")
        version, step = struct.unpack("<IQ", _read_exact(fh, 12))
        if version != _VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        (echo_len,) = struct.unpack("<I", _read_exact(fh, 4))
        echo_cfg = _config_from_text(_read_exact(fh, echo_len).decode("utf-8"))
        if config is not None and config != echo_cfg:
            raise CheckpointError("checkpoint config does not match the requested config")
        net = build(echo_cfg, seed=0)
        params = net.parameters()
        (count,) = struct.unpack("<I", _read_exact(fh, 4))
        if count != len(params):
            raise CheckpointError(f"parameter count {count} != expected {len(params)}")
        seen = set()
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2))
            name = _read_exact(fh, name_len).decode("utf-8")
            if name not in params:
                raise CheckpointError(f"unknown parameter {name!r}")
            (rank,) = struct.unpack("<B", _read_exact(fh, 1))
            dims = tuple(struct.unpack("<I", _read_exact(fh, 4))[0] for _ in range(rank))
            target = params[name]
            if dims != target.shape:
                raise CheckpointError(f"shape mismatch for {name!r}: {dims} vs {target.shape}")
            payload = _read_exact(fh, 4 * int(np.prod(dims, dtype=np.int64)) if dims else 4)
            target.data = np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float32)
            seen.add(name)
        if seen != set(params):
            raise CheckpointError("checkpoint is missing parameters")
    net.step_count = step
    return net
