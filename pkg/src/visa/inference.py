"""Overlapped sliding-window inference with logit averaging."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass
class WindowResult:
    labels: np.ndarray  # [H, W] uint8
    confidence: np.ndarray  # [H, W] float32, max posterior
    logits: np.ndarray  # [3, H, W] float32, averaged
    coverage: np.ndarray  # [H, W] int32, windows covering each pixel
    padded: bool = False


def window_starts(extent: int, window: int, stride: int) -> list[int]:
    """Window origins along one axis; the last window is aligned to the far edge."""
    if extent <= window:
        return [0]
    starts = list(range(0, extent - window + 1, stride))
    if starts[-1] + window < extent:
        starts.append(extent - window)
    return starts


def _softmax(logits: np.ndarray, tau: float) -> np.ndarray:
    z = logits / tau
    z = z - z.max(axis=0, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=0, keepdims=True)


def sliding_window_infer(
    model_fn: Callable[[np.ndarray], np.ndarray],
    image: np.ndarray,
    window: int = 256,
    stride: int = 128,
    batch: int = 4,
    tau: float = 1.0,
) -> WindowResult:
    """Run ``model_fn`` (``[N, C, w, w] -> [N, 3, w, w]`` logits) over a large image.

    Logits are summed in float64 with a per-pixel coverage count and divided
    once, so a model with spatially constant logits reproduces its single
    window output exactly. Images smaller than the window are reflect-padded
    into one centred window and ``padded`` is set.
    """
    image = np.asarray(image)
    if stride < 1 or stride > window:
        raise ValueError(f"stride must be in [1, window={window}], got {stride}")
    _, h, w = image.shape
    padded = h < window or w < window
    offset = (0, 0)
    if padded:
        ph, pw = max(window - h, 0), max(window - w, 0)
        offset = (ph // 2, pw // 2)
        image = np.pad(image, ((0, 0), (ph // 2, ph - ph // 2), (pw // 2, pw - pw // 2)), mode="reflect")
    hh, ww = image.shape[-2:]
    origins = [(y, x) for y in window_starts(hh, window, stride) for x in window_starts(ww, window, stride)]

    total = None
    coverage = np.zeros((hh, ww), dtype=np.int32)
    for i in range(0, len(origins), batch):
        chunk = origins[i : i + batch]
        tiles = np.stack([image[:, y : y + window, x : x + window] for y, x in chunk])
        logits = np.asarray(model_fn(tiles))
        if total is None:
            total = np.zeros((logits.shape[1], hh, ww), dtype=np.float64)
        for (y, x), lg in zip(chunk, logits):
            total[:, y : y + window, x : x + window] += lg
            coverage[y : y + window, x : x + window] += 1
    avg = total / coverage
    oy, ox = offset
    avg = avg[:, oy : oy + h, ox : ox + w]
    coverage = coverage[oy : oy + h, ox : ox + w]
    labels = np.argmax(avg, axis=0).astype(np.uint8)  # argmax keeps the lowest index on ties
    confidence = _softmax(avg, tau).max(axis=0).astype(np.float32)
    return WindowResult(labels, confidence, avg.astype(np.float32), coverage, padded)
