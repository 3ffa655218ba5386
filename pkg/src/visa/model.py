"""Two-stream model: radiance branch, index branch and the fusion head."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .index_branch import ConfigError, IndexBranch, VimbConfig
from .indices import StandardizationStats, compute_indices, standardize_bands
from .nn import BatchNorm2d, Conv2d, Module
from .radiance_branch import RadianceBranch, SrabConfig
from .tensor import Tensor


@dataclass
class ModelConfig:
    vimb: VimbConfig = field(default_factory=VimbConfig)
    srab: SrabConfig = field(default_factory=SrabConfig)
    use_vimb: bool = True
    tau: float = 1.0
    seed: int = 2026

    @property
    def feature_width(self) -> int:
        return self.srab.widths[0]


@dataclass
class AblationSpec:
    """Single-factor changes relative to the full model."""

    drop_vimb: bool = False
    drop_rel_bias: bool = False
    drop_slots: bool = False
    drop_broadcast: bool = False
    heads: int | None = None
    ssm_layers: int | None = None
    single_scale_decoder: bool = False

    def apply(self, cfg: ModelConfig) -> ModelConfig:
        vimb = dataclasses.replace(cfg.vimb)
        if self.drop_rel_bias:
            vimb.use_rel_bias = False
        if self.drop_slots:
            vimb.use_slots = False
        if self.drop_broadcast:
            vimb.use_broadcast = False
        if self.heads is not None:
            vimb.heads = self.heads
        if self.ssm_layers is not None:
            vimb.ssm_layers = self.ssm_layers
        if self.single_scale_decoder:
            vimb.use_refinement = False
        vimb.validate()
        return dataclasses.replace(cfg, vimb=vimb, use_vimb=cfg.use_vimb and not self.drop_vimb)

    @classmethod
    def parse(cls, text: str) -> "AblationSpec":
        """Parse ``name`` or ``name=value`` tokens separated by commas."""
        spec = cls()
        for token in filter(None, (t.strip() for t in text.split(","))):
            if token in ("full", "none"):
                continue
            key, _, value = token.partition("=")
            key = key.strip()
            if key not in {f.name for f in dataclasses.fields(cls)}:
                raise ConfigError(f"unknown ablation toggle {key!r}")
            if key in ("heads", "ssm_layers"):
                setattr(spec, key, int(value))
            else:
                setattr(spec, key, value.strip().lower() not in ("0", "false", "no") if value else True)
        return spec


class FusionHead(Module):
    """3x3 conv mixing, batch norm, ReLU, then a 1x1 conv to three logits."""

    def __init__(self, cin, width, rng):
        super().__init__()
        self.fuse = Conv2d(cin, width, 3, rng)
        self.norm = BatchNorm2d(width)
        self.classify = Conv2d(width, 3, 1, rng)

    def forward(self, x):
        return self.classify(T.relu(self.norm(self.fuse(x))))


class VisaModel(Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        width = cfg.feature_width
        self.radiance = RadianceBranch(cfg.srab, rng)
        if cfg.use_vimb:
            vimb = dataclasses.replace(cfg.vimb, out_width=width)
            self.index = IndexBranch(vimb, rng)
        self.head = FusionHead(2 * width if cfg.use_vimb else width, width, rng)

    def forward(self, bands: Tensor, idx: Tensor | None = None) -> dict[str, Tensor]:
        """Inputs are standardized bands and standardized indices, both ``[B, 5, H, W]``."""
        f_raw = self.radiance(bands)
        out = {}
        if self.cfg.use_vimb:
            if idx is None:
                raise ValueError("index input required when the index branch is enabled")
            if idx.shape != bands.shape:
                raise T.DimensionError(f"band input {bands.shape} and index input {idx.shape} differ")
            f_idx, aux = self.index(idx)
            feats = T.concat([f_raw, f_idx], axis=1)
            out["aux_logits"] = aux
        else:
            feats = f_raw
        logits = self.head(feats)
        out["logits"] = logits
        out["posteriors"] = T.softmax(logits, axis=1, tau=self.cfg.tau)
        return out


def fuse_and_classify(head: FusionHead, f_raw: Tensor, f_idx: Tensor, tau: float = 1.0) -> tuple[Tensor, Tensor]:
    if f_raw.shape != f_idx.shape:
        raise T.DimensionError(f"fusion inputs differ: {f_raw.shape} vs {f_idx.shape}")
    logits = head(T.concat([f_raw, f_idx], axis=1))
    return logits, T.softmax(logits, axis=1, tau=tau)


def prepare_inputs(reflectance: np.ndarray, stats: StandardizationStats) -> tuple[np.ndarray, np.ndarray]:
    """Standardized band and index arrays for raw reflectance ``[B, 5, H, W]``."""
    refl = np.asarray(reflectance)
    idx = compute_indices(refl).channels
    mu = stats.mu.reshape(1, 5, 1, 1)
    sigma = stats.sigma.reshape(1, 5, 1, 1)
    idx = ((idx.astype(np.float64) - mu) / (sigma + stats.eps)).astype(np.float32)
    bands = np.stack([standardize_bands(r, stats) for r in refl])
    return bands, idx


class Predictor:
    """Frozen model plus input statistics; maps raw reflectance to logits."""

    def __init__(self, model: VisaModel, stats: StandardizationStats, batch_size: int = 8):
        self.model = model
        self.stats = stats
        self.batch_size = batch_size

    def __call__(self, reflectance: np.ndarray) -> np.ndarray:
        self.model.eval()
        outs = []
        with T.no_grad():
            for i in range(0, len(reflectance), self.batch_size):
                bands, idx = prepare_inputs(reflectance[i : i + self.batch_size], self.stats)
                dtype = self.model.parameters()[0].dtype
                out = self.model(Tensor(bands.astype(dtype)), Tensor(idx.astype(dtype)))
                outs.append(out["logits"].data)
        return np.concatenate(outs, axis=0)
