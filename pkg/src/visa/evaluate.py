"""Protocol evaluation: per-block confusion matrices, per-stratum tables and CSV output."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Callable

import numpy as np

from .data.dataset import Dataset
from .data.splits import SplitManifest, assert_leakage_free
from .metrics import BlockResult, ConfusionMatrix, block_bootstrap, metrics

COLUMNS = (
    "protocol", "year", "field", "miou", "ci_lo", "ci_hi",
    "iou_other", "iou_crop", "iou_weed", "micro_p", "micro_r", "micro_f1", "oa", "kappa",
)

LabelFn = Callable[[np.ndarray, str], np.ndarray]


def evaluate_blocks(label_fn: LabelFn, dataset: Dataset, blocks) -> list[BlockResult]:
    """``label_fn(image, block_id)`` returns a label map for a full block image."""
    blocks = list(blocks)
    dataset.check([b.block_id for b in blocks])
    out = []
    for b in blocks:
        image, mask = dataset.block(b.block_id)
        pred = np.asarray(label_fn(image, b.block_id))
        out.append(BlockResult(b.block_id, ConfusionMatrix.from_labels(mask, pred), b.field, b.year))
    return out


def summarize(protocol: str, year: str, field: str, results: list[BlockResult], replicates: int, seed: int) -> dict:
    pooled = ConfusionMatrix()
    for r in results:
        pooled = pooled + r.cm
    m = metrics(pooled)
    boot = block_bootstrap(results, replicates, seed)
    return {
        "protocol": protocol,
        "year": year,
        "field": field,
        "miou": m.miou,
        "ci_lo": boot.ci_lo,
        "ci_hi": boot.ci_hi,
        "iou_other": m.iou[0],
        "iou_crop": m.iou[1],
        "iou_weed": m.iou[2],
        "micro_p": m.micro_p,
        "micro_r": m.micro_r,
        "micro_f1": m.micro_f1,
        "oa": m.oa,
        "kappa": m.kappa,
    }


def evaluate_protocol(
    label_fn: LabelFn,
    manifest: SplitManifest,
    dataset: Dataset,
    replicates: int = 10000,
    seed: int = 2026,
    partition: str = "test",
) -> tuple[list[BlockResult], list[dict]]:
    """Per-block results and one table row per (year, field) stratum plus an ``all`` row.

    Stratum confidence intervals resample blocks of that stratum only.
    """
    assert_leakage_free(manifest)
    blocks = manifest.blocks(partition)
    if not blocks:
        raise ValueError(f"manifest has no {partition} blocks")
    results = evaluate_blocks(label_fn, dataset, blocks)
    rows = []
    strata = sorted({(r.year, r.field) for r in results})
    for year, field in strata:
        subset = [r for r in results if (r.year, r.field) == (year, field)]
        rows.append(summarize(manifest.protocol, year, field, subset, replicates, seed))
    rows.append(summarize(manifest.protocol, "all", "all", results, replicates, seed))
    return results, rows


def write_csv(rows: list[dict], path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in row.items()})


def read_csv(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))
