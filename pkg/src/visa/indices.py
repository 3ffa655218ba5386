"""Vegetation indices from five-band reflectance and train-split standardization.

Band order everywhere is (B, G, R, RE, NIR). Index order is
(NDVI, GNDVI, EVI, SAVI, MSAVI).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

BANDS = ("B", "G", "R", "RE", "NIR")
INDICES = ("NDVI", "GNDVI", "EVI", "SAVI", "MSAVI")
EPS = 1e-6


class LeakageError(RuntimeError):
    """Statistics or splits that would let test information reach training."""


@dataclass
class IndexStack:
    channels: np.ndarray  # [..., 5, H, W]
    standardized: bool = False
    flagged: np.ndarray | None = None  # pixels with non-finite input or clamped EVI denominator

    @property
    def height(self) -> int:
        return self.channels.shape[-2]

    @property
    def width(self) -> int:
        return self.channels.shape[-1]


def compute_indices(reflectance: np.ndarray, eps: float = EPS) -> IndexStack:
    """Compute the five index maps from ``reflectance[..., 5, H, W]``.

    EVI uses ``2.5 (NIR - R) / (NIR + 6 R - 7.5 B + 1 + eps)`` with the
    denominator magnitude clamped at ``eps``; MSAVI uses the closed form
    ``(2 NIR + 1 - sqrt((2 NIR + 1)^2 - 8 (NIR - R))) / 2``.
    """
    x = np.asarray(reflectance, dtype=np.float64)
    if x.shape[-3] != 5:
        raise ValueError(f"expected 5 bands on axis -3, got shape {x.shape}")
    b, g, r, nir = x[..., 0, :, :], x[..., 1, :, :], x[..., 2, :, :], x[..., 4, :, :]
    with np.errstate(invalid="ignore", divide="ignore"):
        ndvi = (nir - r) / (nir + r + eps)
        gndvi = (nir - g) / (nir + g + eps)
        den = nir + 6.0 * r - 7.5 * b + 1.0 + eps
        tiny = np.abs(den) < eps
        den = np.where(tiny, np.where(den < 0, -eps, eps), den)
        evi = 2.5 * (nir - r) / den
        savi = 1.5 * (nir - r) / (nir + r + 0.5 + eps)
        q = 2.0 * nir + 1.0
        msavi = (q - np.sqrt(np.maximum(q * q - 8.0 * (nir - r), 0.0))) / 2.0
    stack = np.stack([ndvi, gndvi, evi, savi, msavi], axis=-3)
    nonfinite = ~np.all(np.isfinite(x), axis=-3)
    flagged = nonfinite | tiny
    return IndexStack(stack.astype(np.float32), flagged=flagged)


@dataclass
class StandardizationStats:
    """Per-channel mean and population std fitted on one split.

    One stats object carries the index channels and, optionally, the raw band
    channels used by the radiance branch.
    """

    mu: np.ndarray
    sigma: np.ndarray
    source: str
    eps: float = EPS
    band_mu: np.ndarray = field(default_factory=lambda: np.zeros(5))
    band_sigma: np.ndarray = field(default_factory=lambda: np.ones(5))

    def save(self, path: str | Path) -> None:
        lines = [f"split {self.source}"]
        for name, m, s in zip(INDICES, self.mu, self.sigma):
            lines.append(f"{name} {float(m):.17g} {float(s):.17g}")
        for name, m, s in zip(BANDS, self.band_mu, self.band_sigma):
            lines.append(f"band:{name} {float(m):.17g} {float(s):.17g}")
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "StandardizationStats":
        lines = Path(path).read_text().splitlines()
        head = lines[0].split()
        if len(head) != 2 or head[0] != "split":
            raise ValueError(f"{path}: missing 'split <tag>' header")
        rows = {}
        for line in lines[1:]:
            if line.strip():
                name, m, s = line.split()
                rows[name] = (float(m), float(s))
        mu = np.array([rows[n][0] for n in INDICES])
        sigma = np.array([rows[n][1] for n in INDICES])
        band_mu = np.array([rows.get(f"band:{n}", (0.0, 1.0))[0] for n in BANDS])
        band_sigma = np.array([rows.get(f"band:{n}", (0.0, 1.0))[1] for n in BANDS])
        return cls(mu, sigma, head[1], band_mu=band_mu, band_sigma=band_sigma)


def _moments(arrays: Iterable[np.ndarray], masks: Iterable[np.ndarray] | None) -> tuple[np.ndarray, np.ndarray]:
    total = np.zeros(5)
    total_sq = np.zeros(5)
    count = np.zeros(5)
    masks = masks if masks is not None else iter(lambda: None, 0)
    seen = False
    for arr, mask in zip(arrays, masks):
        seen = True
        a = np.asarray(arr, dtype=np.float64).reshape(-1, 5, *np.shape(arr)[-2:])
        for c in range(5):
            v = a[:, c]
            keep = np.isfinite(v)
            if mask is not None:
                keep &= np.broadcast_to(mask, v.shape)
            vals = v[keep]
            total[c] += vals.sum()
            total_sq[c] += (vals * vals).sum()
            count[c] += vals.size
    if not seen or np.any(count == 0):
        raise ValueError("standardization needs at least one finite training pixel per channel")
    mu = total / count
    var = np.maximum(total_sq / count - mu * mu, 0.0)
    return mu, np.sqrt(var)


def fit_standardization(
    train_patches: Iterable[np.ndarray], source: str = "train", masks=None
) -> StandardizationStats:
    """Fit index and band statistics over training reflectance patches.

    Moments are accumulated in float64 over all finite pixels (optionally
    restricted by ``masks``); sigma is the population standard deviation.
    """
    patches = list(train_patches)
    if not patches:
        raise ValueError("fit_standardization: no training patches")
    masks = list(masks) if masks is not None else None
    mu, sigma = _moments((compute_indices(p).channels for p in patches), masks)
    band_mu, band_sigma = _moments(patches, masks)
    return StandardizationStats(mu, sigma, source, band_mu=band_mu, band_sigma=band_sigma)


def fit_index_standardization(stacks: Iterable[np.ndarray], source: str = "train") -> StandardizationStats:
    """Fit index statistics directly from precomputed index channels."""
    stacks = list(stacks)
    if not stacks:
        raise ValueError("fit_index_standardization: no training index maps")
    mu, sigma = _moments(stacks, None)
    return StandardizationStats(mu, sigma, source)


def apply_standardization(stack: IndexStack, stats: StandardizationStats, expected_source: str | None = None) -> IndexStack:
    if expected_source is not None and stats.source != expected_source:
        raise LeakageError(
            f"standardization stats come from split {stats.source!r}, expected {expected_source!r}"
        )
    shape = (5, 1, 1)
    mu = stats.mu.reshape(shape)
    sigma = stats.sigma.reshape(shape)
    out = (stack.channels.astype(np.float64) - mu) / (sigma + stats.eps)
    return IndexStack(out.astype(np.float32), standardized=True, flagged=stack.flagged)


def standardize_bands(reflectance: np.ndarray, stats: StandardizationStats) -> np.ndarray:
    shape = (5, 1, 1)
    out = (np.asarray(reflectance, dtype=np.float64) - stats.band_mu.reshape(shape)) / (
        stats.band_sigma.reshape(shape) + stats.eps
    )
    return out.astype(np.float32)
