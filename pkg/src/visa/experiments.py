"""Reusable experiment drivers: micro presets, ablation sweeps and protocol comparisons."""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .config import RunConfig
from .data.dataset import Dataset
from .evaluate import evaluate_protocol
from .gradcheck import check_gradients
from .index_branch import VimbConfig
from .inference import sliding_window_infer
from .losses import LossWeights, total_loss
from .model import AblationSpec, ModelConfig, Predictor, VisaModel
from .radiance_branch import SrabConfig
from .tensor import Tensor
from .train import train

log = logging.getLogger(__name__)

ABLATION_COLUMNS = ("variant", "seed", "miou", "ci_lo", "ci_hi", "iou_weed", "params", "manifest_sha256")


def micro_config(patch_size: int = 64, **overrides) -> RunConfig:
    """Small preset that trains on a desktop CPU in minutes at 64x64 patches."""
    base = RunConfig(
        epochs=10,
        batch=8,
        lr=3e-3,
        warmup_iters=20,
        d=16,
        window=8,
        heads=2,
        ssm_layers=2,
        slots=4,
        slot_iters=2,
        widths=(16, 32, 64),
        units_per_level=1,
        infer_window=patch_size,
        infer_stride=patch_size // 2,
        bootstrap_replicates=1000,
    )
    return dataclasses.replace(base, **overrides)


def gradcheck_micro(seed: int = 0, step: float = 1e-6, floor: float = 1e-5, entries: int = 3):
    """Finite-difference check of the total loss for the smallest full model, in float64."""
    with T.default_dtype(np.float64):
        cfg = ModelConfig(
            vimb=VimbConfig(d=8, window=4, heads=2, ssm_layers=1, slots=2, slot_iters=2),
            srab=SrabConfig(widths=(8, 16, 32)),
            seed=seed,
        )
        model = VisaModel(cfg).astype(np.float64)
        rng = np.random.default_rng(seed)
        bands = Tensor(rng.normal(size=(2, 5, 16, 16)))
        idx = Tensor(rng.normal(size=(2, 5, 16, 16)))
        mask = rng.integers(0, 3, size=(2, 16, 16))
        mask[:, 0] = 255
        weights = LossWeights(class_weights=[0.6, 1.0, 1.5])

        def f():
            # batch norm stays in training mode; its running buffers do not feed the loss
            return total_loss(model(bands, idx), mask, weights)[0]

        start = time.time()
        report = check_gradients(f, list(model.named_parameters()), step, entries, np.random.default_rng(seed), floor)
        return report, time.time() - start


def block_labeler(predictor: Predictor, cfg: RunConfig):
    def label(image, block_id):
        return sliding_window_infer(predictor, image, cfg.infer_window, cfg.infer_stride, tau=cfg.tau).labels

    return label


def train_and_evaluate(cfg: RunConfig, dataset: Dataset, out=None, verbose=False) -> dict:
    """Train one model and return the pooled test row plus bookkeeping."""
    start = time.time()
    result = train(cfg, dataset, out, verbose=verbose)
    _, rows = evaluate_protocol(
        block_labeler(result.predictor, cfg), dataset.manifest, dataset, cfg.bootstrap_replicates, cfg.seed
    )
    row = dict(rows[-1])
    row.update(
        params=result.model.num_parameters(),
        seconds=time.time() - start,
        best_epoch=result.best_epoch,
        manifest_sha256=dataset.manifest.digest(),
        rows=rows,
    )
    return row


def parse_variants(spec: str) -> list[tuple[str, AblationSpec]]:
    """``"full; drop_vimb; ssm_layers=0"`` -> named specs; ``;`` separates variants."""
    out = []
    for name in filter(None, (v.strip() for v in spec.split(";"))):
        out.append((name, AblationSpec.parse(name)))
    return out


def run_ablation(base: RunConfig, dataset: Dataset, spec: str, seeds, out=None, verbose=False) -> list[dict]:
    """Train each variant with every seed; only the ablation toggle differs between paired runs."""
    rows = []
    for seed in seeds:
        for name, _ in parse_variants(spec):
            cfg = dataclasses.replace(base, seed=seed, ablation="" if name in ("full", "none") else name)
            run_dir = None if out is None else Path(out) / f"{name.replace('=', '')}_s{seed}"
            r = train_and_evaluate(cfg, dataset, run_dir, verbose)
            rows.append(
                {
                    "variant": name,
                    "seed": seed,
                    "miou": r["miou"],
                    "ci_lo": r["ci_lo"],
                    "ci_hi": r["ci_hi"],
                    "iou_weed": r["iou_weed"],
                    "params": r["params"],
                    "manifest_sha256": r["manifest_sha256"],
                }
            )
            log.info("variant %s seed %d miou %.4f (%.0fs)", name, seed, r["miou"], r["seconds"])
    return rows


def run_protocols(base: RunConfig, dataset: Dataset, protocols, seeds, out=None, verbose=False) -> list[dict]:
    """Train one model per (protocol, seed) on the same blocks and report test mIoU."""
    rows = []
    for seed in seeds:
        for protocol in protocols:
            ds = dataset.with_manifest(dataset.split(protocol))
            cfg = dataclasses.replace(base, seed=seed)
            run_dir = None if out is None else Path(out) / f"{protocol}_s{seed}"
            r = train_and_evaluate(cfg, ds, run_dir, verbose)
            rows.append({"protocol": protocol, "seed": seed, "miou": r["miou"], "iou_weed": r["iou_weed"]})
            log.info("protocol %s seed %d miou %.4f (%.0fs)", protocol, seed, r["miou"], r["seconds"])
    return rows


@dataclass
class PairedMargin:
    margins: list[float]

    @property
    def median(self) -> float:
        return float(np.median(self.margins))


def paired_margins(rows, key, better, worse, value="miou") -> PairedMargin:
    """Per-seed ``value(better) - value(worse)`` for rows grouped by ``key``."""
    by_seed: dict[int, dict[str, float]] = {}
    for r in rows:
        by_seed.setdefault(r["seed"], {})[r[key]] = r[value]
    return PairedMargin([v[better] - v[worse] for _, v in sorted(by_seed.items()) if better in v and worse in v])
