"""Edge-map thinning, tolerance-based boundary matching, and ODS/OIS/AP.

The protocol: thin each probability map by non-maximum suppression, sweep
a threshold grid, and match predicted against ground-truth boundary
pixels one-to-one within a Euclidean tolerance of maxdist times the image
diagonal. Counts aggregate over the dataset per threshold; ODS is the
best F over thresholds on aggregated counts, OIS the mean of per-image
best F, AP the trapezoidal area under the recall-sorted PR samples
(anchored at recall 0 with the lowest-recall precision).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .errors import ConfigError, ContractError, DataError


def default_thresholds(count: int = 99) -> tuple[float, ...]:
    return tuple((i + 1) / (count + 1) for i in range(count))


@dataclass(frozen=True)
class EvalConfig:
    maxdist: float = 0.0075
    thresholds: tuple[float, ...] = default_thresholds()
    f_beta: float = 1.0

    def __post_init__(self):
        if self.maxdist <= 0:
            raise ConfigError(f"maxdist must be positive, got {self.maxdist}")
        if not self.thresholds:
            raise ConfigError("thresholds must be non-empty")
        ts = tuple(float(t) for t in self.thresholds)
        object.__setattr__(self, "thresholds", ts)
        if any(not 0.0 < t < 1.0 for t in ts) or any(b <= a for a, b in zip(ts, ts[1:])):
            raise ConfigError("thresholds must be strictly increasing within (0,1)")
        if self.f_beta <= 0:
            raise ConfigError(f"f_beta must be positive, got {self.f_beta}")


@dataclass(frozen=True)
class ThresholdPoint:
    threshold: float
    precision: float
    recall: float
    f: float


@dataclass(frozen=True)
class EvalReport:
    points: tuple[ThresholdPoint, ...]
    ods_threshold: float
    ods: float
    ois: float
    ap: float


class EdgeMap:
    """Single-channel probability image with lazy thinned/binary variants."""

    def __init__(self, prob: np.ndarray):
        prob = np.asarray(prob, dtype=np.float32)
        if prob.ndim == 3 and prob.shape[0] == 1:
            prob = prob[0]
        if prob.ndim != 2:
            raise DataError(f"edge map must be 2-d, got {prob.shape}")
        if prob.size and (prob.min() < 0.0 or prob.max() > 1.0):
            raise DataError("edge map values must lie in [0,1]")
        self.prob = prob
        self._thinned: np.ndarray | None = None

    def thinned(self) -> np.ndarray:
        if self._thinned is None:
            self._thinned = nms_thin(self.prob)
        return self._thinned

    def binary(self, threshold: float) -> np.ndarray:
        return self.thinned() >= threshold


def nms_thin(prob: np.ndarray) -> np.ndarray:
    """Keep only pixels maximal along the local Sobel gradient direction."""
    prob = np.asarray(prob, dtype=np.float32)
    if prob.ndim != 2:
        raise DataError(f"nms_thin expects a 2-d map, got {prob.shape}")
    return kernels.nms_thin(prob)


def match_boundaries(pred_binary: np.ndarray, gt_binary: np.ndarray,
                     maxdist_px: float) -> tuple[int, int, int]:
    """Greedy ascending-distance one-to-one matching; returns (tp, fp, fn)."""
    if pred_binary.shape != gt_binary.shape:
        raise DataError(f"shape mismatch: {pred_binary.shape} vs {gt_binary.shape}")
    pred_rc = np.argwhere(pred_binary)
    gt_rc = np.argwhere(gt_binary)
    tp = kernels.greedy_match(
        np.ascontiguousarray(pred_rc, dtype=np.int64),
        np.ascontiguousarray(gt_rc, dtype=np.int64),
        float(maxdist_px),
    )
    return tp, len(pred_rc) - tp, len(gt_rc) - tp


def f_measure(precision: float, recall: float, beta: float = 1.0) -> float:
    denom = beta * beta * precision + recall
    if denom == 0.0:
        return 0.0
    return (1.0 + beta * beta) * precision * recall / denom


def _prf(tp: int, fp: int, fn: int, beta: float) -> tuple[float, float, float]:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return precision, recall, f_measure(precision, recall, beta)


def _area_under_pr(points) -> float:
    """Trapezoid over recall-sorted samples, anchored at recall 0."""
    samples = sorted((p.recall, p.precision) for p in points)
    recalls = [0.0] + [r for r, _ in samples]
    precisions = [samples[0][1]] + [p for _, p in samples]
    area = 0.0
    for (r0, p0), (r1, p1) in zip(zip(recalls, precisions), zip(recalls[1:], precisions[1:])):
        area += (r1 - r0) * (p0 + p1) / 2.0
    return area


def evaluate(preds, gts, cfg: EvalConfig = EvalConfig()) -> EvalReport:
    """Full protocol over aligned prediction/ground-truth lists."""
    if len(preds) != len(gts):
        raise ContractError(f"{len(preds)} predictions vs {len(gts)} ground truths")
    if not preds:
        raise ContractError("empty dataset")
    maps = [p if isinstance(p, EdgeMap) else EdgeMap(p) for p in preds]
    nt = len(cfg.thresholds)
    tps = np.zeros((len(maps), nt), dtype=np.int64)
    fps = np.zeros_like(tps)
    fns = np.zeros_like(tps)
    for i, (edge_map, gt) in enumerate(zip(maps, gts)):
        gt = np.asarray(gt)
        if gt.ndim == 3 and gt.shape[0] == 1:
            gt = gt[0]
        if gt.shape != edge_map.prob.shape:
            raise DataError(f"gt {gt.shape} vs prediction {edge_map.prob.shape}")
        gt_bin = gt >= 0.5
        h, w = gt.shape
        tol = cfg.maxdist * float(np.hypot(h, w))
        for t, thr in enumerate(cfg.thresholds):
            tp, fp, fn = match_boundaries(edge_map.binary(thr), gt_bin, tol)
            tps[i, t], fps[i, t], fns[i, t] = tp, fp, fn
    points = []
    for t, thr in enumerate(cfg.thresholds):
        p, r, f = _prf(int(tps[:, t].sum()), int(fps[:, t].sum()), int(fns[:, t].sum()), cfg.f_beta)
        points.append(ThresholdPoint(thr, p, r, f))
    best = max(range(nt), key=lambda t: points[t].f)
    per_image_best = []
    for i in range(len(maps)):
        per_image_best.append(
            max(_prf(int(tps[i, t]), int(fps[i, t]), int(fns[i, t]), cfg.f_beta)[2] for t in range(nt))
        )
    return EvalReport(
        points=tuple(points),
        ods_threshold=points[best].threshold,
        ods=points[best].f,
        ois=float(np.mean(per_image_best)),
        ap=_area_under_pr(points),
    )


def export_pr(report: EvalReport, path) -> None:
    """CSV with header threshold,precision,recall,f plus a summary line."""
    if not report.points:
        raise ContractError("report has no threshold points")
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["threshold", "precision", "recall", "f"])
        for point in report.points:
            writer.writerow(
                [f"{point.threshold:.6f}", f"{point.precision:.6f}",
                 f"{point.recall:.6f}", f"{point.f:.6f}"]
            )
        fh.write(f"# ods={report.ods:.6f} ois={report.ois:.6f} ap={report.ap:.6f}\n")
