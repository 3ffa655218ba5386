"""AdamW, global-norm clipping and the warmup-plus-cosine learning-rate schedule."""

from __future__ import annotations

import math

import numpy as np

from .nn import Parameter


def cosine_warmup_lr(step: int, base_lr: float, warmup: int, total: int) -> float:
    """Learning rate for update number ``step`` (1-based; ``step=0`` gives 0).

    Linear ramp ``base * step / warmup`` up to ``warmup``, then cosine decay to
    zero at ``total``.
    """
    if step <= 0:
        return 0.0
    if warmup > 0 and step < warmup:
        return base_lr * step / warmup
    if total <= warmup:
        return base_lr
    progress = min((step - warmup) / (total - warmup), 1.0)
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * progress))


def global_norm(params) -> float:
    return math.sqrt(sum(float(np.sum(np.square(p.grad, dtype=np.float64))) for p in params if p.grad is not None))


def clip_grad_norm(params, max_norm: float) -> float:
    """Rescale gradients in place so their joint L2 norm is at most ``max_norm``.

    Returns the norm before clipping. Non-finite gradients raise.
    """
    params = [p for p in params if p.grad is not None]
    norm = global_norm(params)
    if not math.isfinite(norm):
        raise FloatingPointError("gradient norm is not finite")
    if norm > max_norm:
        scale = max_norm / norm
        for p in params:
            p.grad = p.grad * p.grad.dtype.type(scale)
    return norm


class AdamW:
    """Adam with decoupled weight decay; decay applies to matrices and kernels only."""

    def __init__(self, params: list[Parameter], lr: float = 6e-4, betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.01):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            if self.weight_decay and p.data.ndim >= 2:
                p.data -= (lr * self.weight_decay) * p.data
            p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.data.dtype)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
