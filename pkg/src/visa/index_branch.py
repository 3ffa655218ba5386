"""Vegetation-index branch: projection, windowed attention, state-space filtering,
slot grouping with mean-slot broadcast, and native-resolution refinement."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .indices import IndexStack
from .nn import MLP, Conv2d, GRUCell, LayerNorm, Linear, Module, Parameter, trunc_normal
from .tensor import Tensor


class ContractError(ValueError):
    """Input violates a documented precondition."""


class ConfigError(ValueError):
    pass


@dataclass
class VimbConfig:
    d: int = 64
    window: int = 8
    heads: int = 8
    n_encoder_layers: int = 2
    ssm_layers: int = 2
    slots: int = 6
    slot_iters: int = 3
    ffn_mult: int = 4
    out_width: int = 64
    use_rel_bias: bool = True
    use_slots: bool = True
    use_broadcast: bool = True
    use_refinement: bool = True

    @property
    def head_width(self) -> int:
        # heads that do not divide d round the per-head width up
        return math.ceil(self.d / self.heads)

    def validate(self, height: int | None = None, width: int | None = None) -> None:
        if self.d < 1 or self.heads < 1 or self.window < 1:
            raise ConfigError(f"vimb: d={self.d}, heads={self.heads}, window={self.window} must be positive")
        if self.slots < 1:
            raise ConfigError(f"vimb.slots must be >= 1, got {self.slots}")
        if self.slot_iters < 1:
            raise ConfigError(f"vimb.slot_iters must be >= 1, got {self.slot_iters}")
        if self.ssm_layers < 0 or self.n_encoder_layers < 0:
            raise ConfigError("vimb layer counts must be non-negative")
        for extent in (height, width):
            if extent is not None and extent % self.window:
                raise ConfigError(
                    f"window size s={self.window} must divide H={height} and W={width}"
                )


# ---------------------------------------------------------------------------
# windowing
# ---------------------------------------------------------------------------


def window_partition(x: Tensor, s: int) -> Tensor:
    """``[B, d, H, W]`` -> ``[B * N_w, s * s, d]`` with windows in raster order."""
    b, d, h, w = x.shape
    if h % s or w % s:
        raise ConfigError(f"window size s={s} must divide H={h} and W={w}")
    y = T.reshape(x, (b, d, h // s, s, w // s, s))
    y = T.transpose(y, (0, 2, 4, 3, 5, 1))
    return T.reshape(y, (b * (h // s) * (w // s), s * s, d))


def window_merge(tokens: Tensor, s: int, batch: int, h: int, w: int) -> Tensor:
    """Inverse of :func:`window_partition`."""
    d = tokens.shape[-1]
    y = T.reshape(tokens, (batch, h // s, w // s, s, s, d))
    y = T.transpose(y, (0, 5, 1, 3, 2, 4))
    return T.reshape(y, (batch, d, h, w))


def relative_offset_index(s: int) -> tuple[np.ndarray, np.ndarray]:
    """Row and column offset lookups ``[n, n]`` shifted into ``[0, 2s-2]``."""
    rows, cols = np.divmod(np.arange(s * s), s)
    dr = rows[:, None] - rows[None, :] + s - 1
    dc = cols[:, None] - cols[None, :] + s - 1
    return dr, dc


class WindowAttention(Module):
    """Multi-head self-attention inside one window with a decomposed relative bias.

    The bias for head j between tokens p and q is
    ``row_bias[j, dr(p, q)] + col_bias[j, dc(p, q)]``.
    """

    def __init__(self, d, heads, head_width, window, rng, use_rel_bias=True):
        super().__init__()
        self.heads = heads
        self.head_width = head_width
        self.window = window
        inner = heads * head_width
        self.qkv = Linear(d, 3 * inner, rng, bias=False)
        self.proj = Linear(inner, d, rng, bias=False)
        self.use_rel_bias = use_rel_bias
        if use_rel_bias:
            self.row_bias = Parameter(trunc_normal(rng, (heads, 2 * window - 1)))
            self.col_bias = Parameter(trunc_normal(rng, (heads, 2 * window - 1)))
            self._dr, self._dc = relative_offset_index(window)

    def relative_bias(self) -> Tensor | None:
        if not self.use_rel_bias:
            return None
        return self.row_bias[:, self._dr] + self.col_bias[:, self._dc]

    def attention(self, tokens: Tensor) -> tuple[Tensor, Tensor]:
        nw, n, _ = tokens.shape
        h, dh = self.heads, self.head_width
        qkv = T.reshape(self.qkv(tokens), (nw, n, 3, h, dh))
        qkv = T.transpose(qkv, (2, 0, 3, 1, 4))
        q, k, v = qkv[0], qkv[1], qkv[2]
        logits = T.matmul(q, T.transpose(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(dh))
        bias = self.relative_bias()
        if bias is not None:
            logits = logits + bias
        if not np.all(np.isfinite(logits.data)):
            raise FloatingPointError("non-finite attention logits in windowed self-attention")
        weights = T.softmax(logits, axis=-1)
        return weights, v

    def forward(self, tokens: Tensor) -> Tensor:
        nw, n, _ = tokens.shape
        weights, v = self.attention(tokens)
        out = T.matmul(weights, v)
        out = T.reshape(T.transpose(out, (0, 2, 1, 3)), (nw, n, self.heads * self.head_width))
        return self.proj(out)


class EncoderLayer(Module):
    """Pre-norm windowed attention followed by a pre-norm GELU feed-forward."""

    def __init__(self, cfg: VimbConfig, rng):
        super().__init__()
        self.norm1 = LayerNorm(cfg.d)
        self.attn = WindowAttention(cfg.d, cfg.heads, cfg.head_width, cfg.window, rng, cfg.use_rel_bias)
        self.norm2 = LayerNorm(cfg.d)
        self.ffn = MLP(cfg.d, cfg.ffn_mult * cfg.d, cfg.d, rng)

    def forward(self, u: Tensor) -> Tensor:
        u = u + self.attn(self.norm1(u))
        return u + self.ffn(self.norm2(u))


# ---------------------------------------------------------------------------
# state space
# ---------------------------------------------------------------------------


class SSMBlock(Module):
    """Gated diagonal recurrence over a raster token sequence.

    ``x[t+1] = A * x[t] + B * (u[t] * sigmoid(W_g u[t]))`` with ``A =
    sigmoid(raw_a)`` in (0, 1). The block returns ``u[t] + proj(x[t+1])``.
    """

    def __init__(self, d, rng):
        super().__init__()
        self.gate = Linear(d, d, rng, bias=False)
        # spread of memory lengths across channels; gain starts at 1 - A
        self.raw_a = Parameter(np.linspace(-2.0, 3.0, d))
        self.gain = Parameter(1.0 - 1.0 / (1.0 + np.exp(-np.linspace(-2.0, 3.0, d))))
        self.proj = Linear(d, d, rng)

    @property
    def decay(self) -> Tensor:
        return T.sigmoid(self.raw_a)

    def gated_input(self, u: Tensor) -> Tensor:
        return u * T.sigmoid(self.gate(u))

    def states(self, u: Tensor) -> Tensor:
        return T.linear_scan(self.gated_input(u), self.decay, self.gain)

    def forward(self, u: Tensor) -> Tensor:
        return u + self.proj(self.states(u))


# ---------------------------------------------------------------------------
# slots
# ---------------------------------------------------------------------------


class SlotAttention(Module):
    """Iterative grouping of tokens into K slots; attention normalizes over slots.

    Slots start from K learned vectors. Each iteration aggregates
    ``delta_k = sum_t a[t, k] v_t`` and updates
    ``s_k <- GRU(s_k, delta_k) + MLP(LN(s_k))`` with shared GRU and MLP.
    """

    def __init__(self, d, slots, iters, rng):
        super().__init__()
        if slots < 1:
            raise ConfigError(f"slot attention needs K >= 1, got {slots}")
        if iters < 1:
            raise ConfigError(f"slot attention needs T >= 1 iterations, got {iters}")
        self.d = d
        self.iters = iters
        self.init_slots = Parameter(trunc_normal(rng, (slots, d), std=1.0))
        self.to_q = Linear(d, d, rng, bias=False)
        self.to_k = Linear(d, d, rng, bias=False)
        self.to_v = Linear(d, d, rng, bias=False)
        self.gru = GRUCell(d, rng)
        self.norm = LayerNorm(d)
        self.mlp = MLP(d, d, d, rng)

    def step(self, slots: Tensor, keys: Tensor, values: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        """One refinement; returns (new slots, attention [B, K, L], deltas [B, K, d])."""
        q = self.to_q(slots)
        logits = T.matmul(q, T.transpose(keys, (0, 2, 1))) * (1.0 / math.sqrt(self.d))
        attn = T.softmax(logits, axis=1)
        delta = T.matmul(attn, values)
        new = self.gru(slots, delta) + self.mlp(self.norm(slots))
        return new, attn, delta

    def forward(self, tokens: Tensor, return_trace: bool = False):
        b = tokens.shape[0]
        keys = self.to_k(tokens)
        values = self.to_v(tokens)
        slots = T.broadcast_to(self.init_slots, (b,) + self.init_slots.shape)
        trace = []
        for _ in range(self.iters):
            slots, attn, delta = self.step(slots, keys, values)
            trace.append((attn, delta))
        return (slots, trace) if return_trace else slots


def mean_slot_broadcast(tokens: Tensor, slots: Tensor, broadcast: Linear) -> Tensor:
    """Add ``W^b m`` to every token, with ``m`` the mean slot of each image."""
    m = T.mean(slots, axis=1)
    shift = broadcast(m)
    return tokens + T.reshape(shift, (shift.shape[0], 1, shift.shape[1]))


# ---------------------------------------------------------------------------
# branch
# ---------------------------------------------------------------------------


class Refinement(Module):
    """``x + conv2(GELU(LN_c(conv1(x))))`` on the native grid."""

    def __init__(self, width, rng):
        super().__init__()
        self.conv1 = Conv2d(width, width, 3, rng)
        self.norm = LayerNorm(width, axis=1)
        self.conv2 = Conv2d(width, width, 3, rng)

    def forward(self, x):
        return x + self.conv2(T.gelu(self.norm(self.conv1(x))))


class IndexBranch(Module):
    def __init__(self, cfg: VimbConfig, rng: np.random.Generator):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.proj = Conv2d(5, cfg.d, 1, rng, init="trunc_normal")
        self.proj_norm = LayerNorm(cfg.d, axis=1)
        self.encoder = [EncoderLayer(cfg, rng) for _ in range(cfg.n_encoder_layers)]
        self.ssm = [SSMBlock(cfg.d, rng) for _ in range(cfg.ssm_layers)]
        if cfg.use_slots:
            self.slot_attention = SlotAttention(cfg.d, cfg.slots, cfg.slot_iters, rng)
            if cfg.use_broadcast:
                self.broadcast = Linear(cfg.d, cfg.d, rng, bias=False)
        self.to_features = Conv2d(cfg.d, cfg.out_width, 3, rng)
        self.features_norm = LayerNorm(cfg.out_width, axis=1)
        if cfg.use_refinement:
            self.refine = Refinement(cfg.out_width, rng)
        self.aux_head = Conv2d(cfg.out_width, 3, 1, rng)

    def project(self, idx: Tensor) -> Tensor:
        return self.proj_norm(self.proj(idx))

    def tokens(self, idx: Tensor) -> Tensor:
        """Projection, windowed encoder and SSM filtering; returns ``[B, H*W, d]``."""
        b, _, h, w = idx.shape
        self.cfg.validate(h, w)
        z = self.project(idx)
        s = self.cfg.window
        if self.encoder:
            u = window_partition(z, s)
            for layer in self.encoder:
                u = layer(u)
            z = window_merge(u, s, b, h, w)
        seq = T.reshape(T.transpose(z, (0, 2, 3, 1)), (b, h * w, self.cfg.d))
        for block in self.ssm:
            seq = block(seq)
        return seq

    def forward(self, idx) -> tuple[Tensor, Tensor]:
        """``idx`` is a standardized ``[B, 5, H, W]`` tensor or a standardized :class:`IndexStack`."""
        if isinstance(idx, IndexStack):
            if not idx.standardized:
                raise ContractError("index branch needs standardized indices; apply the training-split statistics first")
            idx = Tensor(np.asarray(idx.channels, dtype=T.get_default_dtype()))
        if idx.ndim != 4 or idx.shape[1] != 5:
            raise T.DimensionError(f"index branch expects [B, 5, H, W], got {idx.shape}")
        b, _, h, w = idx.shape
        seq = self.tokens(idx)
        if self.cfg.use_slots:
            slots = self.slot_attention(seq)
            if self.cfg.use_broadcast:
                seq = mean_slot_broadcast(seq, slots, self.broadcast)
        grid = T.transpose(T.reshape(seq, (b, h, w, self.cfg.d)), (0, 3, 1, 2))
        feats = self.features_norm(self.to_features(grid))
        if self.cfg.use_refinement:
            feats = self.refine(feats)
        return feats, self.aux_head(feats)

