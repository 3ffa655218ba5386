"""Synthetic multispectral field tiles with crop rows, weed blobs and domain shift.

A block is a square tile of side ``2 * patch_size`` split into four patches
that share one block id. Labels follow other=0, crop=1, weed=2, ignore=255.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter1d

from .preprocess import median_denoise, saturation_gate

FIELDS = ("E2", "E8")
YEARS = ("Y0", "Y1", "Y2", "Y3")
OTHER, CROP, WEED, IGNORE = 0, 1, 2, 255

# mean reflectance per class, band order (B, G, R, RE, NIR)
CLASS_MEANS = np.array(
    [
        [0.10, 0.13, 0.17, 0.22, 0.27],  # soil / other
        [0.04, 0.09, 0.05, 0.30, 0.50],  # crop
        [0.05, 0.13, 0.07, 0.21, 0.38],  # weed
    ]
)
NOISE_STD = 0.015
ROWS_PER_TILE = 10
ROW_FILL = 0.5
IRRADIANCE_SPREAD = 0.2  # tile brightness factor drawn from [0.8, 1.2]
MAX_ATTEMPTS = 10  # redraws of a tile rejected by the saturation gate


class ShiftConfigError(ValueError):
    pass


@dataclass
class ShiftParams:
    """Scene parameters that move between fields and years.

    ``weed_density`` is the expected number of weed blobs per tile and
    ``weed_blob_scale`` the blob radius as a fraction of the tile side, so the
    geometry does not depend on pixel resolution.
    """

    weed_density: float = 6.0
    weed_blob_scale: float = 0.05
    illumination_gradient: float = 0.1
    spectral_offset: tuple[float, ...] = (0.0, 0.0, 0.0, 0.0, 0.0)
    canopy_mix: float = 0.3

    def validate(self) -> None:
        if self.weed_density < 0 or self.weed_blob_scale < 0:
            raise ShiftConfigError(
                f"weed_density={self.weed_density} and weed_blob_scale={self.weed_blob_scale} must be >= 0"
            )
        if not 0.0 <= self.canopy_mix <= 1.0:
            raise ShiftConfigError(f"canopy_mix must lie in [0, 1], got {self.canopy_mix}")
        if not 0.0 <= self.illumination_gradient < 1.0:
            raise ShiftConfigError(
                f"illumination_gradient must lie in [0, 1), got {self.illumination_gradient}"
            )
        if len(self.spectral_offset) != 5 or not np.all(np.isfinite(self.spectral_offset)):
            raise ShiftConfigError(f"spectral_offset needs 5 finite values, got {self.spectral_offset}")


_FIELD_OFFSET = {"E2": np.zeros(5), "E8": np.array([0.010, 0.015, 0.020, -0.030, -0.050])}
_YEAR_OFFSET = {
    "Y0": np.zeros(5),
    "Y1": np.array([0.003, 0.0, 0.003, -0.005, -0.005]),
    "Y2": np.array([-0.003, 0.003, 0.0, 0.005, -0.008]),
    "Y3": np.array([0.0, 0.010, 0.015, -0.040, -0.060]),
}


def inventory_shift(field_id: str, year_id: str, strength: float = 1.0) -> ShiftParams:
    """Shift parameters for one field-year; ``strength=0`` makes all strata identical."""
    if field_id not in FIELDS or year_id not in YEARS:
        raise ShiftConfigError(f"unknown field/year {field_id}/{year_id}")
    base = ShiftParams()
    offset = strength * (_FIELD_OFFSET[field_id] + _YEAR_OFFSET[year_id])
    blob = base.weed_blob_scale * (1.0 - 0.3 * strength * (field_id == "E8"))
    density = base.weed_density * (1.0 + 0.5 * strength * (year_id == "Y3"))
    mix = min(1.0, base.canopy_mix + 0.3 * strength * (year_id == "Y3"))
    illum = base.illumination_gradient + 0.1 * strength * (year_id == "Y3")
    if year_id == "Y3":
        blob *= 1.0 - 0.25 * strength
    return ShiftParams(density, blob, illum, tuple(float(v) for v in offset), mix)


@dataclass
class MultispectralPatch:
    bands: np.ndarray  # [5, H, W] float32 reflectance
    block_id: str = ""
    field_id: str = ""
    year_id: str = ""
    quadrant: int = 0

    def __post_init__(self):
        if self.bands.ndim != 3 or self.bands.shape[0] != 5:
            raise ValueError(f"patch bands must be [5, H, W], got {self.bands.shape}")


@dataclass
class LabelMask:
    codes: np.ndarray  # [H, W] uint8

    def __post_init__(self):
        bad = ~np.isin(self.codes, (OTHER, CROP, WEED, IGNORE))
        if bad.any():
            raise ValueError(f"label codes outside {{0, 1, 2, 255}}: {np.unique(self.codes[bad])}")


@dataclass
class Tile:
    reflectance: np.ndarray  # [5, S, S]
    labels: np.ndarray  # [S, S]
    accepted: bool = True
    reject_reason: str | None = None
    mixed: np.ndarray | None = field(default=None, repr=False)


def _crop_rows(rng, size):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    period = size / ROWS_PER_TILE
    wobble = 0.15 * period * np.sin(2 * np.pi * xx / (size * rng.uniform(0.5, 1.5)) + rng.uniform(0, 2 * np.pi))
    # smooth lateral jitter of the row centre lines
    jitter = gaussian_filter1d(rng.normal(0.0, 1.0, size), sigma=max(size / 32, 1.0), mode="wrap")
    jitter = (0.1 * period * jitter / max(jitter.std(), 1e-12))[None, :]
    phase = (yy + wobble + jitter + rng.uniform(0, period)) % period
    rows = phase < ROW_FILL * period
    # sparse gaps along the rows
    gaps = np.zeros((size, size), dtype=bool)
    for _ in range(rng.poisson(3)):
        x0 = rng.integers(0, size)
        gaps[:, x0 : x0 + max(1, size // 32)] |= rng.uniform() < 0.5
    return rows & ~gaps


def _weed_blobs(rng, size, shift: ShiftParams):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    weeds = np.zeros((size, size), dtype=bool)
    for _ in range(rng.poisson(shift.weed_density)):
        cy, cx = rng.uniform(0, size, 2)
        radius = shift.weed_blob_scale * size * rng.uniform(0.6, 1.4)
        if radius <= 0:
            continue
        theta = np.arctan2(yy - cy, xx - cx)
        lobes = 1.0 + 0.25 * np.sin(rng.integers(2, 5) * theta + rng.uniform(0, 2 * np.pi))
        weeds |= np.hypot(yy - cy, xx - cx) < radius * lobes
    return weeds


def _ignore_border(rng, size):
    border = np.zeros((size, size), dtype=bool)
    width = max(1, int(round(0.01 * size)))
    side = rng.integers(0, 4)
    if side == 0:
        border[:width] = True
    elif side == 1:
        border[-width:] = True
    elif side == 2:
        border[:, :width] = True
    else:
        border[:, -width:] = True
    return border


def _dilate(mask):
    out = mask.copy()
    out[1:] |= mask[:-1]
    out[:-1] |= mask[1:]
    out[:, 1:] |= mask[:, :-1]
    out[:, :-1] |= mask[:, 1:]
    return out


def generate_tile(rng: np.random.Generator, size: int, shift: ShiftParams, denoise: bool = True) -> Tile:
    shift.validate()
    crop = _crop_rows(rng, size)
    weeds = _weed_blobs(rng, size, shift)
    labels = np.full((size, size), OTHER, dtype=np.uint8)
    labels[crop] = CROP
    labels[weeds] = WEED  # weed wins where polygons overlap

    means = CLASS_MEANS + np.asarray(shift.spectral_offset)[None, :]
    refl = means[labels.astype(np.intp)].transpose(2, 0, 1).copy()
    # mixed canopy: weed pixels bordering crop take part of the crop spectrum
    mixed = weeds & _dilate(crop & ~weeds)
    if shift.canopy_mix > 0:
        refl[:, mixed] = (1.0 - shift.canopy_mix) * means[WEED][:, None] + shift.canopy_mix * means[CROP][:, None]
    refl += rng.normal(0.0, NOISE_STD, size=refl.shape)

    angle = rng.uniform(0, 2 * np.pi)
    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    ramp = np.cos(angle) * (xx - 0.5) + np.sin(angle) * (yy - 0.5)
    # per-tile irradiance level times a linear ramp across the tile
    level = rng.uniform(1.0 - IRRADIANCE_SPREAD, 1.0 + IRRADIANCE_SPREAD)
    refl *= level * (1.0 + shift.illumination_gradient * ramp[None])

    labels[_ignore_border(rng, size)] = IGNORE

    accepted, reason = saturation_gate(refl)
    refl = np.clip(refl, 0.0, 1.0).astype(np.float32)
    if denoise:
        refl = median_denoise(refl)
    return Tile(refl, labels, accepted, reason, mixed)


def split_quadrants(tile: np.ndarray) -> list[np.ndarray]:
    """Four equal quadrants in raster order (top-left, top-right, bottom-left, bottom-right)."""
    h, w = tile.shape[-2:]
    hh, hw = h // 2, w // 2
    return [
        tile[..., :hh, :hw],
        tile[..., :hh, hw:],
        tile[..., hh:, :hw],
        tile[..., hh:, hw:],
    ]


def join_quadrants(parts: list[np.ndarray]) -> np.ndarray:
    top = np.concatenate([parts[0], parts[1]], axis=-1)
    bottom = np.concatenate([parts[2], parts[3]], axis=-1)
    return np.concatenate([top, bottom], axis=-2)


def block_id(field_id: str, year_id: str, index: int) -> str:
    return f"{field_id}-{year_id}-b{index:03d}"


def block_seed(seed: int, field_id: str, year_id: str, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, FIELDS.index(field_id), YEARS.index(year_id), index])


def generate_field(
    seed: int,
    field_id: str,
    year_id: str,
    shift: ShiftParams,
    blocks: int,
    patch_size: int = 256,
    denoise: bool = True,
) -> list[tuple[MultispectralPatch, LabelMask]]:
    """Generate ``blocks`` tiles for one field-year, four patches per block."""
    if blocks < 1:
        raise ShiftConfigError(f"blocks must be >= 1, got {blocks}")
    shift = dataclasses.replace(shift)
    shift.validate()
    out = []
    for b in range(blocks):
        rng = np.random.default_rng(block_seed(seed, field_id, year_id, b))
        for _ in range(MAX_ATTEMPTS):
            tile = generate_tile(rng, 2 * patch_size, shift, denoise)
            if tile.accepted:
                break
        else:
            raise ShiftConfigError(
                f"block {block_id(field_id, year_id, b)} failed the saturation gate "
                f"{MAX_ATTEMPTS} times: {tile.reject_reason}"
            )
        bid = block_id(field_id, year_id, b)
        for q, (refl, lab) in enumerate(zip(split_quadrants(tile.reflectance), split_quadrants(tile.labels))):
            out.append(
                (
                    MultispectralPatch(np.ascontiguousarray(refl), bid, field_id, year_id, q),
                    LabelMask(np.ascontiguousarray(lab)),
                )
            )
    return out
