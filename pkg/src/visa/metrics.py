"""Confusion matrices, segmentation scores and the block bootstrap."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .losses import IGNORE, NUM_CLASSES

log = logging.getLogger(__name__)

CLASS_NAMES = ("other", "crop", "weed")


class EmptyMatrixError(ValueError):
    pass


@dataclass
class ConfusionMatrix:
    """Pixel counts; rows are the reference class, columns the prediction."""

    counts: np.ndarray = field(default_factory=lambda: np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=np.int64))

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.shape != (NUM_CLASSES, NUM_CLASSES) or np.any(self.counts < 0):
            raise ValueError(f"confusion counts must be a non-negative 3x3 array, got {self.counts}")

    @classmethod
    def from_labels(cls, reference, predicted) -> "ConfusionMatrix":
        cm = cls()
        cm.update(reference, predicted)
        return cm

    def update(self, reference, predicted) -> None:
        ref = np.asarray(reference).ravel()
        pred = np.asarray(predicted).ravel()
        if ref.shape != pred.shape:
            raise ValueError(f"reference {np.shape(reference)} and prediction {np.shape(predicted)} differ")
        keep = ref != IGNORE
        ref, pred = ref[keep].astype(np.int64), pred[keep].astype(np.int64)
        if np.any(pred >= NUM_CLASSES) or np.any(ref >= NUM_CLASSES):
            raise ValueError("labels must be 0, 1, 2 (or 255 in the reference)")
        self.counts += np.bincount(ref * NUM_CLASSES + pred, minlength=NUM_CLASSES**2).reshape(NUM_CLASSES, NUM_CLASSES)

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass
class MetricSet:
    iou: tuple
    miou: float
    micro_p: float
    micro_r: float
    micro_f1: float
    oa: float
    kappa: float
    flagged: tuple[int, ...] = ()  # classes absent from the reference (IoU 0 or undefined)


def metrics(cm: ConfusionMatrix | np.ndarray, exact: bool = False) -> MetricSet:
    """All scores from one matrix; ``exact=True`` returns ``Fraction`` values."""
    counts = cm.counts if isinstance(cm, ConfusionMatrix) else np.asarray(cm)
    c = [[int(v) for v in row] for row in counts]
    total = sum(map(sum, c))
    if total <= 0:
        raise EmptyMatrixError("confusion matrix is empty; no labeled pixels were accumulated")
    num = Fraction if exact else float
    k = len(c)
    tp = [c[i][i] for i in range(k)]
    rows = [sum(c[i]) for i in range(k)]
    cols = [sum(c[j][i] for j in range(k)) for i in range(k)]
    fp = [cols[i] - tp[i] for i in range(k)]
    fn = [rows[i] - tp[i] for i in range(k)]
    iou, flagged = [], []
    for i in range(k):
        union = tp[i] + fp[i] + fn[i]
        if rows[i] == 0:
            flagged.append(i)
        iou.append(num(Fraction(tp[i], union)) if union else num(0))
    miou = num(sum(Fraction(v) for v in iou) / k) if exact else sum(iou) / k
    stp, sfp, sfn = sum(tp), sum(fp), sum(fn)
    micro_p = num(Fraction(stp, stp + sfp))
    micro_r = num(Fraction(stp, stp + sfn))
    f1 = Fraction(2 * stp, 2 * stp + sfp + sfn)
    p_o = Fraction(stp, total)
    p_e = Fraction(sum(rows[i] * cols[i] for i in range(k)), total * total)
    # p_e = 1 only when both marginals sit on one class, i.e. a perfect diagonal
    kappa = Fraction(1) if p_e == 1 else (p_o - p_e) / (1 - p_e)
    if flagged:
        log.debug("classes %s have no reference pixels", [CLASS_NAMES[i] for i in flagged])
    return MetricSet(tuple(iou), miou, micro_p, micro_r, num(f1), num(p_o), num(kappa), tuple(flagged))


def miou_batch(counts: np.ndarray) -> np.ndarray:
    """Vectorised mIoU over ``[N, 3, 3]`` matrices with zero-union IoU = 0."""
    counts = np.asarray(counts, dtype=np.float64)
    tp = np.diagonal(counts, axis1=-2, axis2=-1)
    union = counts.sum(-1) + counts.sum(-2) - tp
    iou = np.divide(tp, union, out=np.zeros_like(tp), where=union > 0)
    return iou.mean(-1)


@dataclass
class BlockResult:
    block_id: str
    cm: ConfusionMatrix
    field: str = ""
    year: str = ""


@dataclass
class BootstrapResult:
    miou_point: float
    ci_lo: float
    ci_hi: float
    samples: np.ndarray | None = None


def nearest_rank(sorted_values: np.ndarray, percent: float) -> float:
    """Nearest-rank percentile: the value at 1-based rank ``ceil(p/100 * n)``."""
    n = len(sorted_values)
    rank = min(max(math.ceil(percent / 100.0 * n), 1), n)
    return float(sorted_values[rank - 1])


def block_bootstrap(
    results: list[BlockResult],
    replicates: int = 10000,
    seed: int = 2026,
    keep_samples: bool = False,
) -> BootstrapResult:
    """Percentile CI for pooled mIoU, resampling whole blocks with replacement."""
    if not results:
        raise EmptyMatrixError("no block results to bootstrap")
    stack = np.stack([r.cm.counts for r in results]).astype(np.int64)
    point = float(metrics(ConfusionMatrix(stack.sum(0))).miou)
    n = len(results)
    if n < 2:
        log.warning("bootstrap needs >= 2 blocks, got %d; returning the point estimate only", n)
        return BootstrapResult(point, math.nan, math.nan)
    rng = np.random.default_rng(seed)
    draws = rng.integers(0, n, size=(replicates, n))
    # multiplicity of each block in each replicate, then summed matrices
    mult = np.zeros((replicates, n), dtype=np.int64)
    np.add.at(mult, (np.repeat(np.arange(replicates), n), draws.ravel()), 1)
    pooled = (mult @ stack.reshape(n, -1)).reshape(replicates, NUM_CLASSES, NUM_CLASSES)
    values = np.sort(miou_batch(pooled))
    return BootstrapResult(
        point,
        nearest_rank(values, 2.5),
        nearest_rank(values, 97.5),
        values if keep_samples else None,
    )
