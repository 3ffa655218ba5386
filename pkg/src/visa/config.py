"""Run configuration and the plain ``key = value`` text format used for config files."""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass

import numpy as np

from .index_branch import ConfigError, VimbConfig
from .losses import LossWeights
from .radiance_branch import SrabConfig


def _format(value) -> str:
    if isinstance(value, (tuple, list)):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def dump_key_values(values: dict) -> str:
    return "".join(f"{k} = {_format(v)}\n" for k, v in values.items())


def _coerce(raw: str, hint, key: str):
    origin = typing.get_origin(hint)
    if origin is typing.Union or str(origin) == "types.UnionType":
        args = [a for a in typing.get_args(hint) if a is not type(None)]
        if raw.lower() in ("none", ""):
            return None
        return _coerce(raw, args[0], key)
    if origin is tuple:
        args = typing.get_args(hint)
        items = [s.strip() for s in raw.split(",") if s.strip()]
        inner = args[0]
        return tuple(_coerce(s, inner, key) for s in items)
    if hint is bool:
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    if hint in (int, float):
        try:
            return hint(raw)
        except ValueError as err:
            raise ConfigError(f"{key}: expected {hint.__name__}, got {raw!r}") from err
    return raw


def parse_key_values(text: str, cls=None) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment.

    With a dataclass ``cls`` the values are converted to its field types and
    unknown keys are rejected.
    """
    hints = typing.get_type_hints(cls) if cls is not None else {}
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {n}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if cls is not None:
            # dotted section prefixes such as "vimb.d" or "loss.lambda_dice" map onto flat keys
            if key not in hints and "." in key:
                key = key.rsplit(".", 1)[1]
            if key not in hints:
                raise ConfigError(f"config line {n}: unknown key {key!r}")
            out[key] = _coerce(value, hints[key], key)
        else:
            out[key] = value
    return out


@dataclass
class RunConfig:
    """Everything a training run needs, flat so it maps onto one config file."""

    seed: int = 2026
    epochs: int = 50
    batch: int = 16
    accum_steps: int = 1
    lr: float = 6e-4
    warmup_iters: int = 1500
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    clip_norm: float = 1.0
    augment: bool = True
    # loss
    lambda_dice: float = 1.0
    lambda_edge: float = 0.5
    alpha_aux: float = 0.3
    class_balance: bool = True
    tau: float = 1.0
    # index branch
    d: int = 64
    window: int = 8
    heads: int = 8
    n_encoder_layers: int = 2
    ssm_layers: int = 2
    slots: int = 6
    slot_iters: int = 3
    ffn_mult: int = 4
    use_rel_bias: bool = True
    use_slots: bool = True
    use_broadcast: bool = True
    # radiance branch
    widths: tuple[int, ...] = (64, 128, 256)
    units_per_level: int = 2
    se_reduction: int = 4
    cbam_kernel: int = 7
    # single-factor ablation, e.g. "drop_vimb" or "ssm_layers=0"
    ablation: str = ""
    # evaluation
    infer_window: int = 256
    infer_stride: int = 128
    bootstrap_replicates: int = 10000

    def validate(self) -> None:
        if self.epochs < 1 or self.batch < 1 or self.accum_steps < 1:
            raise ConfigError(f"epochs={self.epochs}, batch={self.batch}, accum_steps={self.accum_steps} must be >= 1")
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.warmup_iters < 0 or self.clip_norm <= 0:
            raise ConfigError("warmup_iters must be >= 0 and clip_norm > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError(f"betas must lie in [0, 1), got ({self.beta1}, {self.beta2})")
        if self.infer_stride < 1 or self.infer_stride > self.infer_window:
            raise ConfigError(f"infer_stride={self.infer_stride} must be in [1, infer_window={self.infer_window}]")
        self.model_config().srab.validate()

    def model_config(self):
        from .model import AblationSpec, ModelConfig

        vimb = VimbConfig(
            d=self.d,
            window=self.window,
            heads=self.heads,
            n_encoder_layers=self.n_encoder_layers,
            ssm_layers=self.ssm_layers,
            slots=self.slots,
            slot_iters=self.slot_iters,
            ffn_mult=self.ffn_mult,
            use_rel_bias=self.use_rel_bias,
            use_slots=self.use_slots,
            use_broadcast=self.use_broadcast,
        )
        srab = SrabConfig(tuple(self.widths), self.units_per_level, self.se_reduction, self.cbam_kernel)
        base = ModelConfig(vimb=vimb, srab=srab, tau=self.tau, seed=self.seed)
        return AblationSpec.parse(self.ablation).apply(base)

    def loss_weights(self, class_weights=None) -> LossWeights:
        cw = np.ones(3) if class_weights is None or not self.class_balance else class_weights
        return LossWeights(self.lambda_dice, self.lambda_edge, self.alpha_aux, cw, self.tau)

    def to_text(self) -> str:
        return dump_key_values(dataclasses.asdict(self))

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        cfg = cls(**parse_key_values(text, cls))
        cfg.validate()
        return cfg

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)
