"""On-disk dataset directories: generated patches, masks, a manifest and a settings file.

Layout::

    root/dataset.txt          key = value generation settings
    root/manifest.txt         block split
    root/patches/<block>_q<k>.bawp
    root/masks/<block>_q<k>.bawm
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..config import dump_key_values, parse_key_values
from .io import read_mask, read_patch, write_mask, write_patch
from .splits import SplitManifest, assert_leakage_free, build_split, inventory
from .synth import FIELDS, YEARS, generate_field, inventory_shift, join_quadrants


class MissingBlocksError(FileNotFoundError):
    pass


@dataclass
class DatasetConfig:
    seed: int = 2026
    patch_size: int = 256
    blocks_per_stratum: int = 4
    shift_strength: float = 1.0
    denoise: bool = True
    ratios: tuple[float, float, float] = (0.7, 0.1, 0.2)
    train_field: str = FIELDS[0]

    def to_text(self) -> str:
        return dump_key_values(dataclasses.asdict(self))

    @classmethod
    def from_text(cls, text: str) -> "DatasetConfig":
        return cls(**parse_key_values(text, cls))


def generate_dataset(out, cfg: DatasetConfig, protocol: str = "within_plot", force: bool = False) -> "Dataset":
    out = Path(out)
    if out.exists() and any(out.iterdir()) and not force:
        raise FileExistsError(f"output directory {out} is not empty; pass --force to overwrite")
    (out / "patches").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    for f in FIELDS:
        for y in YEARS:
            shift = inventory_shift(f, y, cfg.shift_strength)
            for patch, mask in generate_field(cfg.seed, f, y, shift, cfg.blocks_per_stratum, cfg.patch_size, cfg.denoise):
                stem = f"{patch.block_id}_q{patch.quadrant}"
                write_patch(out / "patches" / f"{stem}.bawp", patch.bands)
                write_mask(out / "masks" / f"{stem}.bawm", mask.codes)
    (out / "dataset.txt").write_text(cfg.to_text())
    manifest = build_split(protocol, inventory(cfg.blocks_per_stratum), cfg.seed, cfg.ratios, cfg.train_field)
    assert_leakage_free(manifest)
    manifest.write(out / "manifest.txt")
    return Dataset(out)


class Dataset:
    """Read access to a generated dataset directory with an in-memory cache."""

    def __init__(self, root, manifest: SplitManifest | None = None):
        self.root = Path(root)
        settings = self.root / "dataset.txt"
        if not settings.exists():
            raise FileNotFoundError(f"{settings} not found; is {self.root} a dataset directory?")
        self.config = DatasetConfig.from_text(settings.read_text())
        self.manifest = manifest if manifest is not None else SplitManifest.read(self.root / "manifest.txt")
        self._cache: dict[str, tuple[list[np.ndarray], list[np.ndarray]]] = {}

    def split(self, protocol: str) -> SplitManifest:
        """Manifest for another protocol over the same blocks."""
        cfg = self.config
        return build_split(protocol, inventory(cfg.blocks_per_stratum), cfg.seed, cfg.ratios, cfg.train_field)

    def with_manifest(self, manifest: SplitManifest) -> "Dataset":
        other = Dataset.__new__(Dataset)
        other.root, other.config, other.manifest, other._cache = self.root, self.config, manifest, self._cache
        return other

    def _paths(self, block_id: str):
        return [
            (self.root / "patches" / f"{block_id}_q{q}.bawp", self.root / "masks" / f"{block_id}_q{q}.bawm")
            for q in range(4)
        ]

    def check(self, block_ids) -> None:
        missing = sorted({b for b in block_ids for p, m in self._paths(b) if not (p.exists() and m.exists())})
        if missing:
            raise MissingBlocksError(f"missing blocks in {self.root}: {', '.join(missing)}")

    def quadrants(self, block_id: str):
        if block_id not in self._cache:
            self.check([block_id])
            paths = self._paths(block_id)
            self._cache[block_id] = ([read_patch(p) for p, _ in paths], [read_mask(m) for _, m in paths])
        return self._cache[block_id]

    def block(self, block_id: str) -> tuple[np.ndarray, np.ndarray]:
        """Full tile ``[5, 2P, 2P]`` and its mask."""
        patches, masks = self.quadrants(block_id)
        return join_quadrants(patches), join_quadrants(masks)

    def patches(self, block_ids) -> tuple[np.ndarray, np.ndarray]:
        """Stack all quadrant patches of ``block_ids`` into ``[N, 5, P, P]`` and ``[N, P, P]``."""
        block_ids = list(block_ids)
        self.check(block_ids)
        xs, ms = [], []
        for b in block_ids:
            p, m = self.quadrants(b)
            xs += p
            ms += m
        return np.stack(xs), np.stack(ms)

    def partition(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        return self.patches(self.manifest.ids(name))
