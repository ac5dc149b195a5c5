"""Flat key=value run configuration shared by the CLI commands.

Unknown keys are rejected. Every key has a documented default; the file
only needs the keys it overrides. Lists are comma separated.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .backbone import NetworkConfig
from .datapipe import AugmentPlan
from .errors import ConfigError
from .evalkit import EvalConfig, default_thresholds


def _parse_int_list(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.split(","))


def _parse_float_list(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(","))


def _parse_bool(text: str) -> bool:
    lowered = text.lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass
class RunConfig:
    # network
    channels: tuple[int, ...] = (16, 32, 48, 64, 80)
    subblocks: tuple[int, ...] = (2, 2, 3, 3, 3)
    downsample: tuple[int, ...] = (1, 2, 4, 8, 16)
    heads: int = 4
    kernel_size: int = 3
    window_radius: int = 3
    side_outputs: int = 6
    # optimizer / training
    lr: float = 1e-3
    weight_decay: float = 1e-8
    batch_size: int = 4
    steps: int = 500
    seed: int = 0
    checkpoint_every: int = 0  # 0 = only at the end
    log_every: int = 10
    resume: str = ""  # checkpoint path to continue from
    # augmentation
    crop_size: int = 256
    rotations: int = 15
    gammas: tuple[float, ...] = (0.3030, 0.6060)
    split: bool = True
    # evaluation
    maxdist: float = 0.0075
    thresholds: int = 99
    f_beta: float = 1.0

    def network(self) -> NetworkConfig:
        return NetworkConfig(
            channels=self.channels,
            subblocks=self.subblocks,
            downsample=self.downsample,
            heads=self.heads,
            kernel_size=self.kernel_size,
            window_radius=self.window_radius,
            side_outputs=self.side_outputs,
        )

    def plan(self) -> AugmentPlan:
        return AugmentPlan(
            rotations=self.rotations,
            crop_size=self.crop_size,
            gammas=self.gammas,
            split=self.split,
        )

    def eval_config(self) -> EvalConfig:
        return EvalConfig(
            maxdist=self.maxdist,
            thresholds=default_thresholds(self.thresholds),
            f_beta=self.f_beta,
        )


_PARSERS = {
    "channels": _parse_int_list,
    "subblocks": _parse_int_list,
    "downsample": _parse_int_list,
    "heads": int,
    "kernel_size": int,
    "window_radius": int,
    "side_outputs": int,
    "lr": float,
    "weight_decay": float,
    "batch_size": int,
    "steps": int,
    "seed": int,
    "checkpoint_every": int,
    "log_every": int,
    "resume": str,
    "crop_size": int,
    "rotations": int,
    "gammas": _parse_float_list,
    "split": _parse_bool,
    "maxdist": float,
    "thresholds": int,
    "f_beta": float,
}

assert set(_PARSERS) == {f.name for f in fields(RunConfig)}


def load_config(path=None) -> RunConfig:
    """Parse a key=value file over the defaults; None yields pure defaults."""
    cfg = RunConfig()
    if path is None:
        return cfg
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"missing config file: {path}")
    for ln, line in enumerate(path.read_text().splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        key, sep, value = stripped.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{ln}: expected 'key = value', got {line!r}")
        key = key.strip()
        if key not in _PARSERS:
            raise ConfigError(f"{path}:{ln}: unknown config key {key!r}")
        try:
            setattr(cfg, key, _PARSERS[key](value.strip()))
        except ValueError as exc:
            raise ConfigError(f"{path}:{ln}: bad value for {key}: {exc}") from exc
    return cfg
