"""Parameters, modules and the small layer zoo the two branches are built from."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Parameter(Tensor):
    def __init__(self, data):
        super().__init__(np.asarray(data, dtype=T.get_default_dtype()), requires_grad=True)


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    """Normal(0, std) truncated at two standard deviations, by resampling."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2 * std
    return out


def fan_in_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Module:
    """Attribute-registered container for parameters, buffers and submodules."""

    training = True

    def __init__(self):
        self._buffers: dict[str, np.ndarray] = {}

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = value

    def children(self) -> Iterator[tuple[str, "Module"]]:
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                yield prefix + name, value
        for name, child in self.children():
            yield from child.named_parameters(prefix + name + ".")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, value in getattr(self, "_buffers", {}).items():
            yield prefix + name, value
        for name, child in self.children():
            yield from child.named_buffers(prefix + name + ".")

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data for name, p in self.named_parameters()}
        state.update(self.named_buffers())
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = [k for k in own if k not in state]
        if missing:
            raise KeyError(f"checkpoint is missing parameters: {missing}")
        for name, p in own.items():
            if state[name].shape != p.shape:
                raise ValueError(f"{name}: checkpoint shape {state[name].shape} != model {p.shape}")
            p.data = np.asarray(state[name], dtype=p.dtype).copy()
        self._load_buffers(state, "")

    def _load_buffers(self, state, prefix):
        for name in list(getattr(self, "_buffers", {})):
            key = prefix + name
            if key in state:
                self._buffers[name] = np.asarray(state[key], dtype=self._buffers[name].dtype).copy()
        for name, child in self.children():
            child._load_buffers(state, prefix + name + ".")

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for _, child in self.children():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        self._cast_buffers(dtype)
        return self

    def _cast_buffers(self, dtype):
        for name, value in getattr(self, "_buffers", {}).items():
            self._buffers[name] = value.astype(dtype)
        for _, child in self.children():
            child._cast_buffers(dtype)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Conv2d(Module):
    def __init__(self, cin, cout, kernel, rng, stride=1, pad=None, bias=True, init="uniform"):
        super().__init__()
        self.stride = stride
        self.pad = kernel // 2 if pad is None else pad
        shape = (cout, cin, kernel, kernel)
        if init == "trunc_normal":
            self.weight = Parameter(trunc_normal(rng, shape))
        else:
            self.weight = Parameter(fan_in_uniform(rng, shape, cin * kernel * kernel))
        self.bias = Parameter(np.zeros(cout)) if bias else None

    def forward(self, x):
        return T.conv2d(x, self.weight, self.bias, stride=self.stride, pad=self.pad)


class ConvTranspose2d(Module):
    def __init__(self, cin, cout, kernel, rng, stride=2):
        super().__init__()
        self.stride = stride
        self.weight = Parameter(fan_in_uniform(rng, (cin, cout, kernel, kernel), cin * kernel * kernel))
        self.bias = Parameter(np.zeros(cout))

    def forward(self, x):
        return T.conv_transpose2d(x, self.weight, self.bias, stride=self.stride)


class Linear(Module):
    """Acts on the last axis: ``x @ weight + bias`` with ``weight[in, out]``."""

    def __init__(self, din, dout, rng, bias=True):
        super().__init__()
        self.weight = Parameter(trunc_normal(rng, (din, dout)))
        self.bias = Parameter(np.zeros(dout)) if bias else None

    def forward(self, x):
        y = T.matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


def layer_norm(x: Tensor, axis: int, weight=None, bias=None, eps: float = 1e-6) -> Tensor:
    """Normalize along ``axis`` with the population variance, then apply the affine."""
    mu = T.mean(x, axis, keepdims=True)
    xc = x - mu
    var = T.mean(xc * xc, axis, keepdims=True)
    y = xc / T.sqrt(var + eps)
    if weight is None:
        return y
    shape = [1] * x.ndim
    shape[axis] = -1
    return y * T.reshape(weight, shape) + T.reshape(bias, shape)


class LayerNorm(Module):
    def __init__(self, dim, axis=-1, eps=1e-6):
        super().__init__()
        self.axis = axis
        self.eps = eps
        self.weight = Parameter(np.ones(dim))
        self.bias = Parameter(np.zeros(dim))

    def forward(self, x):
        return layer_norm(x, self.axis, self.weight, self.bias, self.eps)


class BatchNorm2d(Module):
    """Per-channel batch normalization over ``(B, H, W)``.

    Training mode normalizes with batch moments and moves the running moments
    by ``momentum``; the running variance tracks the population (biased)
    batch variance. Evaluation mode uses the running moments.
    """

    def __init__(self, channels, momentum=0.1, eps=1e-5):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.weight = Parameter(np.ones(channels))
        self.bias = Parameter(np.zeros(channels))
        dtype = T.get_default_dtype()
        self.register_buffer("running_mean", np.zeros(channels, dtype=dtype))
        self.register_buffer("running_var", np.ones(channels, dtype=dtype))
        self.register_buffer("num_batches", np.zeros(1, dtype=dtype))

    def forward(self, x):
        gamma = T.reshape(self.weight, (1, -1, 1, 1))
        beta = T.reshape(self.bias, (1, -1, 1, 1))
        if self.training:
            mu = T.mean(x, (0, 2, 3), keepdims=True)
            xc = x - mu
            var = T.mean(xc * xc, (0, 2, 3), keepdims=True)
            m = self.momentum
            b = self._buffers
            b["running_mean"] = (m * mu.data.ravel() + (1 - m) * b["running_mean"]).astype(x.dtype)
            b["running_var"] = (m * var.data.ravel() + (1 - m) * b["running_var"]).astype(x.dtype)
            b["num_batches"] = b["num_batches"] + 1
            return xc / T.sqrt(var + self.eps) * gamma + beta
        mu = self._buffers["running_mean"].reshape(1, -1, 1, 1)
        var = self._buffers["running_var"].reshape(1, -1, 1, 1)
        return (x - mu) * (1.0 / np.sqrt(var + self.eps)) * gamma + beta

    @property
    def untrained(self) -> bool:
        return float(self._buffers["num_batches"][0]) == 0


class GRUCell(Module):
    """Gated recurrent update applied row-wise with one shared parameter set.

    ``r = sigmoid(x Wr + h Ur + br)``, ``z = sigmoid(x Wz + h Uz + bz)``,
    ``n = tanh(x Wn + bn + r * (h Un + bhn))``, ``h' = (1 - z) n + z h``.
    """

    def __init__(self, dim, rng):
        super().__init__()
        self.dim = dim
        bound = 1.0 / np.sqrt(dim)
        self.w_input = Parameter(rng.uniform(-bound, bound, (dim, 3 * dim)))
        self.w_state = Parameter(rng.uniform(-bound, bound, (dim, 3 * dim)))
        self.b_input = Parameter(np.zeros(3 * dim))
        self.b_state = Parameter(np.zeros(3 * dim))

    def forward(self, state, inputs):
        if state.shape[-1] != self.dim or inputs.shape[-1] != self.dim:
            raise T.DimensionError(
                f"GRU width {self.dim}: state {state.shape}, input {inputs.shape}"
            )
        d = self.dim
        gi = T.matmul(inputs, self.w_input) + self.b_input
        gh = T.matmul(state, self.w_state) + self.b_state
        r = T.sigmoid(gi[..., :d] + gh[..., :d])
        z = T.sigmoid(gi[..., d : 2 * d] + gh[..., d : 2 * d])
        n = T.tanh(gi[..., 2 * d :] + r * gh[..., 2 * d :])
        return (1.0 - z) * n + z * state


class MLP(Module):
    def __init__(self, din, hidden, dout, rng):
        super().__init__()
        self.fc1 = Linear(din, hidden, rng)
        self.fc2 = Linear(hidden, dout, rng)

    def forward(self, x):
        return self.fc2(T.gelu(self.fc1(x)))
