"""Training loop: shuffled epochs, AdamW with warmup-cosine, clipping, best-by-validation checkpoints."""

from __future__ import annotations

import csv
import hashlib
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import save_run_files, save_weights
from .config import RunConfig
from .data.augment import augment_batch
from .data.dataset import Dataset
from .data.splits import assert_leakage_free
from .indices import fit_standardization
from .losses import class_frequencies, median_frequency_weights, total_loss
from .metrics import ConfusionMatrix, EmptyMatrixError, metrics
from .model import Predictor, VisaModel, prepare_inputs
from .optim import AdamW, clip_grad_norm, cosine_warmup_lr
from .tensor import Tensor

log = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "ce", "dice", "edge", "aux", "total", "train_miou", "val_miou", "lr")


@dataclass
class EpochLog:
    epoch: int
    ce: float
    dice: float
    edge: float
    aux: float
    total: float
    train_miou: float
    val_miou: float
    lr: float


@dataclass
class TrainResult:
    model: VisaModel
    predictor: Predictor
    history: list[EpochLog] = field(default_factory=list)
    best_epoch: int = 0
    best_val_miou: float = -math.inf
    run_dir: Path | None = None

    @property
    def checkpoint(self) -> Path | None:
        return None if self.run_dir is None else self.run_dir / "best.bin"


def _miou(cm: ConfusionMatrix) -> float:
    try:
        return float(metrics(cm).miou)
    except EmptyMatrixError:
        return math.nan


def patch_miou(predictor: Predictor, reflectance: np.ndarray, masks: np.ndarray) -> float:
    cm = ConfusionMatrix()
    logits = predictor(reflectance)
    cm.update(masks, np.argmax(logits, axis=1))
    return _miou(cm)


def _write_log(path: Path, history: list[EpochLog]) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_COLUMNS)
        writer.writeheader()
        for row in history:
            writer.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v) for k, v in asdict(row).items()})


def train(cfg: RunConfig, dataset: Dataset, out=None, verbose: bool = False) -> TrainResult:
    """Train on the manifest's train partition and keep the best validation epoch.

    The leakage audit runs before anything else; a failing manifest raises
    ``LeakageError`` without taking a step.
    """
    cfg.validate()
    assert_leakage_free(dataset.manifest)
    x_train, m_train = dataset.partition("train")
    x_val, m_val = dataset.partition("val")

    stats = fit_standardization(list(x_train), source="train")
    bands_train, idx_train = prepare_inputs(x_train, stats)
    weights = cfg.loss_weights(median_frequency_weights(class_frequencies(m_train), floor=1e-8))

    model = VisaModel(cfg.model_config())
    model.train()
    params = model.parameters()
    opt = AdamW(params, cfg.lr, (cfg.beta1, cfg.beta2), weight_decay=cfg.weight_decay)
    predictor = Predictor(model, stats, batch_size=max(cfg.batch, 1))

    n = len(x_train)
    steps_per_epoch = math.ceil(math.ceil(n / cfg.batch) / cfg.accum_steps)
    total_steps = cfg.epochs * steps_per_epoch
    run_dir = Path(out) if out is not None else None
    if run_dir is not None:
        save_run_files(run_dir, cfg, stats)
        _write_stamp(run_dir, cfg, dataset)

    result = TrainResult(model, predictor, run_dir=run_dir)
    step = 0
    best_state = None
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.time()
        model.train()
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, epoch]))
        order = rng.permutation(n)
        sums = dict.fromkeys(("ce", "dice", "edge", "aux", "total"), 0.0)
        batches = 0
        train_cm = ConfusionMatrix()
        lr = 0.0
        chunks = [order[i : i + cfg.batch] for i in range(0, n, cfg.batch)]
        for k, sel in enumerate(chunks):
            bands, idx, masks = bands_train[sel], idx_train[sel], m_train[sel]
            if cfg.augment:
                stacked, masks = augment_batch(np.concatenate([bands, idx], axis=1), masks, rng)
                bands, idx = stacked[:, :5], stacked[:, 5:]
            outputs = model(Tensor(bands), Tensor(idx))
            loss, parts = total_loss(outputs, masks, weights)
            (loss * (1.0 / cfg.accum_steps)).backward()
            for key in sums:
                sums[key] += parts[key]
            batches += 1
            train_cm.update(masks, np.argmax(outputs["logits"].data, axis=1))
            if (k + 1) % cfg.accum_steps == 0 or k + 1 == len(chunks):
                step += 1
                lr = cosine_warmup_lr(step, cfg.lr, cfg.warmup_iters, total_steps)
                clip_grad_norm(params, cfg.clip_norm)
                opt.step(lr)
                opt.zero_grad()
        val_miou = patch_miou(predictor, x_val, m_val) if len(x_val) else math.nan
        row = EpochLog(
            epoch,
            *(sums[k] / max(batches, 1) for k in ("ce", "dice", "edge", "aux", "total")),
            train_miou=_miou(train_cm),
            val_miou=val_miou,
            lr=lr,
        )
        result.history.append(row)
        # ties go to the later epoch
        if best_state is None or (not math.isnan(val_miou) and val_miou >= result.best_val_miou):
            result.best_epoch, result.best_val_miou = epoch, val_miou
            best_state = {k: v.copy() for k, v in model.state_dict().items()}
            if run_dir is not None:
                save_weights(run_dir / "best.bin", model)
        if run_dir is not None:
            _write_log(run_dir / "train_log.csv", result.history)
        msg = (
            f"epoch {epoch}/{cfg.epochs} loss {row.total:.4f} ce {row.ce:.4f} dice {row.dice:.4f} "
            f"edge {row.edge:.4f} aux {row.aux:.4f} train_miou {row.train_miou:.4f} "
            f"val_miou {row.val_miou:.4f} lr {lr:.3g} ({time.time() - t0:.1f}s)"
        )
        (print if verbose else log.info)(msg)
    model.load_state_dict(best_state)
    model.eval()
    return result


def _write_stamp(run_dir: Path, cfg: RunConfig, dataset: Dataset) -> None:
    lines = [
        f"version = {__version__}",
        f"seed = {cfg.seed}",
        f"config_sha256 = {hashlib.sha256(cfg.to_text().encode()).hexdigest()}",
        f"manifest_sha256 = {dataset.manifest.digest()}",
        f"protocol = {dataset.manifest.protocol}",
        f"data = {dataset.root}",
    ]
    (run_dir / "run.txt").write_text("\n".join(lines) + "\n")
