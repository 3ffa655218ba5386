"""Spatial-only augmentation: right-angle rotations and flips on the last two axes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Transform:
    k: int = 0  # quarter turns counter-clockwise
    hflip: bool = False
    vflip: bool = False

    def apply(self, arr: np.ndarray) -> np.ndarray:
        out = np.rot90(arr, self.k % 4, axes=(-2, -1))
        if self.hflip:
            out = out[..., :, ::-1]
        if self.vflip:
            out = out[..., ::-1, :]
        return np.ascontiguousarray(out)

    def invert(self, arr: np.ndarray) -> np.ndarray:
        out = arr
        if self.vflip:
            out = out[..., ::-1, :]
        if self.hflip:
            out = out[..., :, ::-1]
        return np.ascontiguousarray(np.rot90(out, -(self.k % 4), axes=(-2, -1)))


def random_transform(rng: np.random.Generator) -> Transform:
    return Transform(int(rng.integers(0, 4)), bool(rng.integers(0, 2)), bool(rng.integers(0, 2)))


def augment(patch: np.ndarray, mask: np.ndarray, seed) -> tuple[np.ndarray, np.ndarray]:
    """Apply one random transform identically to ``patch [C,H,W]`` and ``mask [H,W]``."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    t = random_transform(rng)
    return t.apply(patch), t.apply(mask)


def augment_batch(patches: np.ndarray, masks: np.ndarray, rng: np.random.Generator):
    """Independent transform per sample; spatial dims must be square when rotating."""
    out_p, out_m = np.empty_like(patches), np.empty_like(masks)
    for i in range(len(patches)):
        t = random_transform(rng)
        out_p[i], out_m[i] = t.apply(patches[i]), t.apply(masks[i])
    return out_p, out_m
