"""Spectral residual-attention branch over raw five-band reflectance."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .index_branch import ConfigError
from .nn import Conv2d, ConvTranspose2d, Linear, Module
from .tensor import Tensor


@dataclass
class SrabConfig:
    widths: tuple[int, int, int] = (64, 128, 256)
    units_per_level: int = 2
    se_reduction: int = 4
    cbam_kernel: int = 7

    def validate(self) -> None:
        w = tuple(self.widths)
        if len(w) != 3 or not (w[0] < w[1] < w[2]):
            raise ConfigError(f"srab.widths must be three strictly increasing ints, got {w}")
        if self.cbam_kernel % 2 == 0:
            raise ConfigError(f"srab.cbam_kernel must be odd, got {self.cbam_kernel}")
        if self.units_per_level < 1 or self.se_reduction < 1:
            raise ConfigError("srab.units_per_level and srab.se_reduction must be >= 1")


class SEGate(Module):
    def __init__(self, channels, reduction, rng):
        super().__init__()
        hidden = max(1, channels // reduction)
        self.fc1 = Linear(channels, hidden, rng)
        self.fc2 = Linear(hidden, channels, rng)

    def gate(self, u: Tensor) -> Tensor:
        g = T.mean(u, axis=(2, 3))
        return T.sigmoid(self.fc2(T.gelu(self.fc1(g))))

    def forward(self, u):
        a = self.gate(u)
        return u * T.reshape(a, a.shape + (1, 1))


class CBAMGate(Module):
    def __init__(self, kernel, rng):
        super().__init__()
        self.conv = Conv2d(2, 1, kernel, rng)

    def mask(self, u: Tensor) -> Tensor:
        avg = T.mean(u, axis=1, keepdims=True)
        mx = T.tmax(u, axis=1, keepdims=True)
        return T.sigmoid(self.conv(T.concat([avg, mx], axis=1)))

    def forward(self, u):
        return u * self.mask(u)


class ResidualAttentionUnit(Module):
    """``CBAM(SE(U + W2 * GELU(W1 * U)))`` with 3x3 same-size convolutions."""

    def __init__(self, channels, cfg: SrabConfig, rng):
        super().__init__()
        self.conv1 = Conv2d(channels, channels, 3, rng)
        self.conv2 = Conv2d(channels, channels, 3, rng)
        self.se = SEGate(channels, cfg.se_reduction, rng)
        self.cbam = CBAMGate(cfg.cbam_kernel, rng)

    def forward(self, u):
        return self.cbam(self.se(u + self.conv2(T.gelu(self.conv1(u)))))


class RadianceBranch(Module):
    """Three-level residual-attention encoder and a transposed-conv decoder.

    Level 0 runs at native resolution; each further level halves the extent
    with a stride-2 convolution. The decoder upsamples twice, concatenates the
    matching encoder skip, mixes with a 3x3 convolution and refines with one
    residual-attention unit. Output width is ``widths[0]``.
    """

    def __init__(self, cfg: SrabConfig, rng: np.random.Generator):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        w0, w1, w2 = cfg.widths
        self.stem = Conv2d(5, w0, 3, rng)
        self.level0 = [ResidualAttentionUnit(w0, cfg, rng) for _ in range(cfg.units_per_level)]
        self.down1 = Conv2d(w0, w1, 3, rng, stride=2)
        self.level1 = [ResidualAttentionUnit(w1, cfg, rng) for _ in range(cfg.units_per_level)]
        self.down2 = Conv2d(w1, w2, 3, rng, stride=2)
        self.level2 = [ResidualAttentionUnit(w2, cfg, rng) for _ in range(cfg.units_per_level)]
        self.up1 = ConvTranspose2d(w2, w1, 2, rng)
        self.mix1 = Conv2d(2 * w1, w1, 3, rng)
        self.refine1 = ResidualAttentionUnit(w1, cfg, rng)
        self.up0 = ConvTranspose2d(w1, w0, 2, rng)
        self.mix0 = Conv2d(2 * w0, w0, 3, rng)
        self.refine0 = ResidualAttentionUnit(w0, cfg, rng)

    def encode(self, x: Tensor) -> list[Tensor]:
        if x.ndim != 4 or x.shape[1] != 5:
            raise T.DimensionError(f"radiance branch expects [B, 5, H, W], got {x.shape}")
        if x.shape[2] % 4 or x.shape[3] % 4:
            raise T.DimensionError(f"radiance branch needs H, W divisible by 4, got {x.shape[2:]}")
        f0 = self.stem(x)
        for unit in self.level0:
            f0 = unit(f0)
        f1 = self.down1(f0)
        for unit in self.level1:
            f1 = unit(f1)
        f2 = self.down2(f1)
        for unit in self.level2:
            f2 = unit(f2)
        return [f0, f1, f2]

    def forward(self, x: Tensor, zero_skips: tuple[int, ...] = ()) -> Tensor:
        skips = self.encode(x)
        skips = [s * 0.0 if i in zero_skips else s for i, s in enumerate(skips)]
        f0, f1, f2 = skips
        y = self.refine1(self.mix1(T.concat([self.up1(f2), f1], axis=1)))
        return self.refine0(self.mix0(T.concat([self.up0(y), f0], axis=1)))
