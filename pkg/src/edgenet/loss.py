"""Class-balanced cross-entropy with deep supervision over seven edge maps."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import ops
from .errors import ContractError, ShapeError
from .tensor import Tensor

CLAMP = 1e-6
SIDE_OUTPUTS = 6


@dataclass(frozen=True)
class LossWeights:
    """Per-image class weights; alpha scales the positive (edge) term."""

    alpha: float
    beta: float


def class_balance(gt: np.ndarray) -> LossWeights:
    """alpha = |Y-|/|Y|, beta = |Y+|/|Y|; a vanished class leaves the
    surviving term at weight 1 so all-background crops still train."""
    total = gt.size
    pos = float(gt.sum())
    neg = total - pos
    if pos == 0.0:
        return LossWeights(alpha=0.0, beta=1.0)
    if neg == 0.0:
        return LossWeights(alpha=1.0, beta=0.0)
    return LossWeights(alpha=neg / total, beta=pos / total)


def balanced_bce(pred: Tensor, gt: np.ndarray) -> Tensor:
    """-sum(alpha * G * log P + beta * (1-G) * log(1-P)) with P clamped."""
    gt = np.asarray(gt, dtype=np.float32)
    if pred.shape != gt.shape:
        raise ShapeError(f"pred {pred.shape} vs gt {gt.shape}")
    weights = class_balance(gt)
    p = ops.clamp(pred, CLAMP, 1.0 - CLAMP)
    gt_t = Tensor(gt)
    inv_gt_t = Tensor(1.0 - gt)
    pos_term = ops.sum_all(ops.mul(gt_t, ops.log(p)))
    neg_term = ops.sum_all(ops.mul(inv_gt_t, ops.log(ops.add_scalar(ops.scale(p, -1.0), 1.0))))
    combined = ops.add(ops.scale(pos_term, weights.alpha), ops.scale(neg_term, weights.beta))
    return ops.scale(combined, -1.0)


def supervision_terms(sides: Sequence[Tensor], fused: Tensor, gt: np.ndarray) -> list[Tensor]:
    """The seven per-map losses: one per side output, fused last."""
    if len(sides) != SIDE_OUTPUTS:
        raise ContractError(f"expected {SIDE_OUTPUTS} side maps, got {len(sides)}")
    gt = np.asarray(gt, dtype=np.float32)
    if gt.ndim == 2 and fused.ndim == 3:
        gt = gt[None]
    return [balanced_bce(side, gt) for side in sides] + [balanced_bce(fused, gt)]


def total_loss(sides: Sequence[Tensor], fused: Tensor, gt: np.ndarray) -> Tensor:
    """Sum of the six side losses plus the fused loss (deep supervision)."""
    terms = supervision_terms(sides, fused, gt)
    total = terms[0]
    for term in terms[1:]:
        total = ops.add(total, term)
    return total
