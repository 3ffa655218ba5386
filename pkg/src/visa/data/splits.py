"""Block-level train/val/test splits and the leakage audit."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..indices import LeakageError
from .synth import FIELDS, YEARS

PROTOCOLS = ("within_plot", "cross_plot", "cross_year")
PARTITIONS = ("train", "val", "test")
TEST_YEAR = "Y3"


class SplitError(ValueError):
    """The protocol cannot be satisfied by the block inventory."""


@dataclass(frozen=True)
class BlockInfo:
    block_id: str
    field: str
    year: str


@dataclass
class SplitManifest:
    """Ordered list of ``(block, partition)`` entries.

    Entries are a list rather than a mapping so that a corrupted manifest
    carrying the same block twice can be represented and caught by ``audit``.
    """

    protocol: str
    seed: int
    entries: list[tuple[BlockInfo, str]] = field(default_factory=list)
    train_field: str = FIELDS[0]

    def blocks(self, partition: str) -> list[BlockInfo]:
        return [b for b, p in self.entries if p == partition]

    def ids(self, partition: str) -> list[str]:
        return [b.block_id for b in self.blocks(partition)]

    @property
    def train(self) -> list[str]:
        return self.ids("train")

    @property
    def val(self) -> list[str]:
        return self.ids("val")

    @property
    def test(self) -> list[str]:
        return self.ids("test")

    def to_text(self) -> str:
        lines = [
            f"# protocol={self.protocol} seed={self.seed} train_field={self.train_field}",
            "# block_id field year split",
        ]
        lines += [f"{b.block_id} {b.field} {b.year} {p}" for b, p in self.entries]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "SplitManifest":
        header: dict[str, str] = {}
        entries = []
        for n, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                for tok in line[1:].split():
                    if "=" in tok:
                        k, v = tok.split("=", 1)
                        header[k] = v
                continue
            parts = line.split()
            if len(parts) != 4 or parts[3] not in PARTITIONS:
                raise SplitError(f"manifest line {n} malformed: {line!r}")
            entries.append((BlockInfo(*parts[:3]), parts[3]))
        if header.get("protocol") not in PROTOCOLS:
            raise SplitError(f"manifest header lacks a valid protocol: {header}")
        return cls(header["protocol"], int(header.get("seed", 0)), entries, header.get("train_field", FIELDS[0]))

    def write(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def read(cls, path) -> "SplitManifest":
        return cls.from_text(Path(path).read_text())

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()


def inventory(blocks_per_stratum: int) -> list[BlockInfo]:
    from .synth import block_id

    return [
        BlockInfo(block_id(f, y, b), f, y) for f in FIELDS for y in YEARS for b in range(blocks_per_stratum)
    ]


def _holdout(rng, blocks, fraction, minimum=1):
    """Split ``blocks`` into (held, rest) with ``max(minimum, round(fraction * n))`` held."""
    n = len(blocks)
    k = max(minimum, int(round(fraction * n)))
    order = rng.permutation(n)
    held = sorted(order[:k])
    rest = sorted(order[k:])
    return [blocks[i] for i in held], [blocks[i] for i in rest]


def build_split(
    protocol: str,
    blocks: list[BlockInfo],
    seed: int,
    ratios: tuple[float, float, float] = (0.7, 0.1, 0.2),
    train_field: str = FIELDS[0],
) -> SplitManifest:
    """Assign whole blocks to partitions.

    within_plot holds out test blocks inside every field-year and draws val
    from the pooled remainder; cross_plot trains on ``train_field`` and tests
    on every block of the other field; cross_year tests on every Y3 block.
    """
    if protocol not in PROTOCOLS:
        raise SplitError(f"unknown protocol {protocol!r}; expected one of {PROTOCOLS}")
    r_train, r_val, r_test = ratios
    if min(ratios) < 0 or not np.isclose(sum(ratios), 1.0):
        raise SplitError(f"ratios must be non-negative and sum to 1, got {ratios}")
    present = {(b.field, b.year) for b in blocks}
    missing = [(f, y) for f in FIELDS for y in YEARS if (f, y) not in present]
    if missing:
        raise SplitError(f"inventory must cover {len(FIELDS)} fields x {len(YEARS)} years; missing {missing}")
    if len({b.block_id for b in blocks}) != len(blocks):
        raise SplitError("inventory contains duplicate block ids")
    rng = np.random.default_rng(np.random.SeedSequence([seed, PROTOCOLS.index(protocol)]))

    assign: dict[str, str] = {}
    if protocol == "within_plot":
        pool = []
        for f in FIELDS:
            for y in YEARS:
                stratum = [b for b in blocks if (b.field, b.year) == (f, y)]
                if len(stratum) < 2:
                    raise SplitError(f"within_plot needs >= 2 blocks in stratum {f}/{y}, got {len(stratum)}")
                test, rest = _holdout(rng, stratum, r_test)
                assign.update({b.block_id: "test" for b in test})
                pool += rest
        val, train = _holdout(rng, pool, r_val / max(r_train + r_val, 1e-12))
    else:
        if protocol == "cross_plot":
            if train_field not in FIELDS:
                raise SplitError(f"train_field {train_field!r} not in {FIELDS}")
            source = [b for b in blocks if b.field == train_field]
            target = [b for b in blocks if b.field != train_field]
        else:
            source = [b for b in blocks if b.year != TEST_YEAR]
            target = [b for b in blocks if b.year == TEST_YEAR]
        if len(source) < 2:
            raise SplitError(f"{protocol} needs >= 2 source blocks for train and val, got {len(source)}")
        assign.update({b.block_id: "test" for b in target})
        val, train = _holdout(rng, source, r_val / max(r_train + r_val, 1e-12))
    if not train:
        raise SplitError(f"{protocol}: no blocks left for training with ratios {ratios}")
    assign.update({b.block_id: "val" for b in val})
    assign.update({b.block_id: "train" for b in train})
    entries = [(b, assign[b.block_id]) for b in blocks]
    return SplitManifest(protocol, seed, entries, train_field)


def audit(manifest: SplitManifest) -> list[str]:
    """Return every leakage or protocol violation found; empty means clean."""
    problems = []
    seen: dict[str, str] = {}
    for b, p in manifest.entries:
        if b.block_id in seen:
            problems.append(f"block {b.block_id} appears in {seen[b.block_id]} and {p}")
        else:
            seen[b.block_id] = p
    fit = [b for b, p in manifest.entries if p in ("train", "val")]
    test = manifest.blocks("test")
    if manifest.protocol == "cross_plot":
        shared = {b.field for b in fit} & {b.field for b in test}
        if shared:
            problems.append(f"cross_plot: fields {sorted(shared)} appear in both train/val and test")
    if manifest.protocol == "cross_year":
        shared = {b.year for b in fit} & {b.year for b in test}
        if shared:
            problems.append(f"cross_year: years {sorted(shared)} appear in both train/val and test")
    if not manifest.train:
        problems.append("manifest has no training blocks")
    return problems


def assert_leakage_free(manifest: SplitManifest) -> None:
    problems = audit(manifest)
    if problems:
        raise LeakageError("leakage audit failed: " + "; ".join(problems))
