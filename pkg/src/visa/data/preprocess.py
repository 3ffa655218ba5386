"""Simulator-side preprocessing: per-band median denoising and saturation gating."""

from __future__ import annotations

import numpy as np
from scipy.ndimage import median_filter

from ..indices import BANDS

SATURATION_LEVEL = 1.0
SATURATION_FRACTION = 0.005


def median_denoise(bands: np.ndarray) -> np.ndarray:
    """3x3 median per band with edge replication; ``bands`` is ``[5, H, W]``."""
    bands = np.asarray(bands)
    out = np.empty_like(bands)
    for c in range(bands.shape[0]):
        out[c] = median_filter(bands[c], size=3, mode="nearest")
    return out


def saturation_gate(bands: np.ndarray, threshold: float = SATURATION_FRACTION) -> tuple[bool, str | None]:
    """Reject when the saturated fraction of any band is strictly above ``threshold``.

    Saturated means reflectance >= 1.0 before clipping. Returns
    ``(accepted, reason)``; the reason names the first offending band.
    """
    bands = np.asarray(bands)
    n = bands.shape[-1] * bands.shape[-2]
    for c in range(bands.shape[0]):
        frac = np.count_nonzero(bands[c] >= SATURATION_LEVEL) / n
        if frac > threshold:
            name = BANDS[c] if bands.shape[0] == len(BANDS) else str(c)
            return False, f"band {name}: {frac:.4%} saturated pixels exceeds {threshold:.4%}"
    return True, None
