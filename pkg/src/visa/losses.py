"""Training objective: weighted cross-entropy, soft Dice, Sobel edge term and the
auxiliary index-stream cross-entropy."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor

log = logging.getLogger(__name__)

IGNORE = 255
NUM_CLASSES = 3
LOG_FLOOR = 1e-12
DICE_EPS = 1e-6

SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T.copy()


@dataclass
class LossWeights:
    lambda_dice: float = 1.0
    lambda_edge: float = 0.5
    alpha_aux: float = 0.3
    class_weights: np.ndarray = field(default_factory=lambda: np.ones(NUM_CLASSES))
    tau: float = 1.0

    def __post_init__(self):
        self.class_weights = np.asarray(self.class_weights, dtype=np.float64)
        if min(self.lambda_dice, self.lambda_edge, self.alpha_aux) < 0 or np.any(self.class_weights < 0):
            raise ValueError("loss weights must be non-negative")


def median_frequency_weights(freqs, floor: float | None = None) -> np.ndarray:
    """``w_c = median(f) / f_c``.

    A zero frequency is an error unless ``floor`` is given, in which case it is
    raised to ``floor`` and a warning is logged.
    """
    f = np.asarray(freqs, dtype=np.float64)
    if np.any(f <= 0):
        if floor is None:
            raise ValueError(
                f"class frequencies {f.tolist()} contain zeros; exclude the class or pass floor=1e-8"
            )
        log.warning("flooring zero class frequencies %s at %g", f.tolist(), floor)
        f = np.maximum(f, floor)
    return np.median(f) / f


def class_frequencies(masks) -> np.ndarray:
    counts = np.zeros(NUM_CLASSES)
    for m in masks:
        counts += np.bincount(m[m != IGNORE].ravel(), minlength=NUM_CLASSES)[:NUM_CLASSES]
    return counts / max(counts.sum(), 1)


def one_hot(mask: np.ndarray, dtype=None) -> tuple[np.ndarray, np.ndarray]:
    """One-hot targets ``[B, 3, H, W]`` (zero at ignore pixels) and the labeled mask."""
    dtype = dtype or T.get_default_dtype()
    mask = np.asarray(mask)
    omega = mask != IGNORE
    y = np.stack([(mask == c) for c in range(NUM_CLASSES)], axis=1).astype(dtype)
    return y, omega


def loss_ce(p: Tensor, y: np.ndarray, omega: np.ndarray, weights=None) -> Tensor:
    n = int(omega.sum())
    if n == 0:
        log.warning("batch has no labeled pixels; cross-entropy defined as 0")
        return Tensor(np.zeros((), dtype=p.dtype))
    w = np.ones(NUM_CLASSES) if weights is None else np.asarray(weights)
    target = (y * w.reshape(1, -1, 1, 1)).astype(p.dtype)
    return T.tsum(T.log(T.clip_min(p, LOG_FLOOR)) * target) * (-1.0 / n)


def loss_dice(p: Tensor, y: np.ndarray, omega: np.ndarray, eps: float = DICE_EPS) -> Tensor:
    m = omega[:, None].astype(p.dtype)
    pm = p * m
    inter = T.tsum(pm * y.astype(p.dtype))
    denom = T.tsum(pm) + float((y * m).sum())
    return 1.0 - (2.0 * inter + eps) / (denom + eps)


def sobel_magnitude(x: Tensor) -> Tensor:
    """``sum_c |Gx * x_c| + |Gy * x_c|`` with zero padding; ``[B, C, H, W] -> [B, H, W]``."""
    b, c, h, w = x.shape
    kernel = Tensor(np.stack([SOBEL_X, SOBEL_Y])[:, None].astype(x.dtype))
    g = T.conv2d(T.reshape(x, (b * c, 1, h, w)), kernel, None, stride=1, pad=1)
    mag = T.tsum(T.absolute(g), axis=1)
    return T.tsum(T.reshape(mag, (b, c, h, w)), axis=1)


def loss_edge(p: Tensor, y: np.ndarray, omega: np.ndarray) -> Tensor:
    """Mean over labeled pixels of ``|E(P) - E(y)|``; ignore pixels are zero-filled first."""
    n = int(omega.sum())
    if n == 0:
        return Tensor(np.zeros((), dtype=p.dtype))
    m = omega[:, None].astype(p.dtype)
    ep = sobel_magnitude(p * m)
    ey = sobel_magnitude(Tensor((y * m).astype(p.dtype))).data
    diff = T.absolute(ep - ey) * omega.astype(p.dtype)
    return T.tsum(diff) * (1.0 / n)


def total_loss(outputs: dict[str, Tensor], mask: np.ndarray, weights: LossWeights) -> tuple[Tensor, dict[str, float]]:
    """Fused objective plus ``alpha * aux CE``; returns the scalar and a per-term breakdown."""
    p = outputs["posteriors"]
    y, omega = one_hot(mask, p.dtype)
    terms = {
        "ce": loss_ce(p, y, omega, weights.class_weights),
        "dice": loss_dice(p, y, omega),
        "edge": loss_edge(p, y, omega),
    }
    total = terms["ce"] + weights.lambda_dice * terms["dice"] + weights.lambda_edge * terms["edge"]
    if "aux_logits" in outputs:
        p_aux = T.softmax(outputs["aux_logits"], axis=1, tau=weights.tau)
        terms["aux"] = loss_ce(p_aux, y, omega)
        total = total + weights.alpha_aux * terms["aux"]
    else:
        terms["aux"] = Tensor(np.zeros((), dtype=p.dtype))
    breakdown = {name: float(t.data) for name, t in terms.items()}
    breakdown["total"] = float(total.data)
    for name, value in breakdown.items():
        if not np.isfinite(value):
            raise FloatingPointError(f"loss term {name!r} is not finite ({value})")
    return total, breakdown
