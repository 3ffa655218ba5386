"""Dense tensors with reverse-mode automatic differentiation.

A :class:`Tensor` wraps a numpy array. Every differentiable operation records
its parents and a closure mapping the output gradient to one gradient per
parent; :meth:`Tensor.backward` walks the recorded graph in reverse
topological order.

Training and inference run in float32. Gradient checks switch to float64 via
:func:`default_dtype`.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterator, Sequence

import numpy as np
from scipy.special import erf

_state = {"dtype": np.dtype(np.float32), "grad": True}


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


def get_default_dtype() -> np.dtype:
    return _state["dtype"]


def set_default_dtype(dtype) -> None:
    _state["dtype"] = np.dtype(dtype)


@contextlib.contextmanager
def default_dtype(dtype) -> Iterator[None]:
    prev = _state["dtype"]
    _state["dtype"] = np.dtype(dtype)
    try:
        yield
    finally:
        _state["dtype"] = prev


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    prev = _state["grad"]
    _state["grad"] = False
    try:
        yield
    finally:
        _state["grad"] = prev


def is_grad_enabled() -> bool:
    return _state["grad"]


class Tensor:
    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype.kind != "f":
            arr = arr.astype(get_default_dtype())
        self.data: np.ndarray = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # -- autodiff ---------------------------------------------------------
    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order = _topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=self.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p: float):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else get_default_dtype()
    return Tensor(np.asarray(x, dtype=dtype))


def _result(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    needs = _state["grad"] and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs)
    if needs:
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    out = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(out, (a, b), backward)


def sub(a, b) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    out = a.data - b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(out, (a, b), backward)


def mul(a, b) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    out = a.data * b.data

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(out, (a, b), backward)


def div(a, b) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    out = a.data / b.data

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(out, (a, b), backward)


def power(x: Tensor, p: float) -> Tensor:
    out = x.data**p

    def backward(g):
        return (g * p * x.data ** (p - 1),)

    return _result(out, (x,), backward)


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _result(out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    return _result(np.log(x.data), (x,), lambda g: (g / x.data,))


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)
    return _result(out, (x,), lambda g: (g * 0.5 / out,))


def absolute(x: Tensor) -> Tensor:
    return _result(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),))


def clip_min(x: Tensor, floor: float) -> Tensor:
    keep = x.data >= floor
    return _result(np.maximum(x.data, floor), (x,), lambda g: (g * keep,))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _result(out, (x,), lambda g: (g * (1.0 - out * out),))


def sigmoid(x: Tensor) -> Tensor:
    # split by sign so exp never overflows
    d = x.data
    e = np.exp(-np.abs(d))
    out = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(d.dtype)
    return _result(out, (x,), lambda g: (g * out * (1.0 - out),))


def relu(x: Tensor) -> Tensor:
    keep = x.data > 0
    return _result(np.where(keep, x.data, 0).astype(x.dtype), (x,), lambda g: (g * keep,))


_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, ``x * Phi(x)`` with the Gaussian CDF written through erf."""
    d = x.data
    cdf = (0.5 * (1.0 + erf(d * _INV_SQRT2))).astype(d.dtype)
    out = d * cdf

    def backward(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * d * d)
        return (g * (cdf + d * pdf),)

    return _result(out, (x,), backward)


# ---------------------------------------------------------------------------
# reductions and shape
# ---------------------------------------------------------------------------


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape),)

    return _result(np.asarray(out), (x,), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    return tsum(x, axes, keepdims) * (1.0 / count)


def tmax(x: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    """Max along one axis; the gradient goes to the first maximal entry."""
    axis = axis % x.ndim
    idx = np.expand_dims(np.argmax(x.data, axis=axis), axis)
    out = np.take_along_axis(x.data, idx, axis=axis)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        full = np.zeros_like(x.data)
        np.put_along_axis(full, idx, g, axis=axis)
        return (full,)

    if not keepdims:
        out = np.squeeze(out, axis)
    return _result(out, (x,), backward)


def reshape(x: Tensor, shape) -> Tensor:
    out = x.data.reshape(shape)
    return _result(out, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _result(x.data.transpose(axes), (x,), lambda g: (g.transpose(inverse),))


def getitem(x: Tensor, index) -> Tensor:
    out = x.data[index]

    basic = _is_basic_index(index)

    def backward(g):
        full = np.zeros_like(x.data)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _result(np.asarray(out), (x,), backward)


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    axis = axis % tensors[0].ndim
    for t in tensors[1:]:
        if t.ndim != tensors[0].ndim or any(
            t.shape[i] != tensors[0].shape[i] for i in range(t.ndim) if i != axis
        ):
            raise DimensionError(
                f"concat along axis {axis}: shapes {[t.shape for t in tensors]} disagree off-axis"
            )
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)
    out = np.concatenate([t.data for t in tensors], axis=axis)

    def backward(g):
        parts = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            parts.append(g[tuple(sl)])
        return tuple(parts)

    return _result(out, tensors, backward)


def broadcast_to(x: Tensor, shape) -> Tensor:
    out = np.broadcast_to(x.data, shape)
    return _result(out, (x,), lambda g: (_unbroadcast(g, x.shape),))


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, a)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(
            f"matmul inner axes differ: a.shape[-1]={a.shape[-1]} vs b.shape[-2]={b.shape[-2]}"
        )
    out = a.data @ b.data

    def backward(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(out, (a, b), backward)


def softmax(x: Tensor, axis: int = -1, tau: float = 1.0) -> Tensor:
    if tau <= 0:
        raise ValueError(f"softmax temperature must be positive, got {tau}")
    z = x.data / tau
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - inner) / tau,)

    return _result(out, (x,), backward)


# ---------------------------------------------------------------------------
# convolutions
# ---------------------------------------------------------------------------


def _im2col(xp, kh, kw, stride, ho, wo):
    """Patch matrix ``[B, Cin*kh*kw, ho*wo]`` with rows ordered (channel, ki, kj)."""
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, : stride * ho : stride, : stride * wo : stride]  # [B, Cin, ho, wo, kh, kw]
    bsz, cin = xp.shape[:2]
    return np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3)).reshape(bsz, cin * kh * kw, ho * wo)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of ``x[B,Cin,H,W]`` with ``w[Cout,Cin,kh,kw]`` and zero padding."""
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError(f"conv2d expects rank-4 input and weight, got {x.shape} and {w.shape}")
    bsz, cin, h, wd = x.shape
    cout, wcin, kh, kw = w.shape
    if wcin != cin:
        raise DimensionError(f"conv2d channel axis: input has Cin={cin}, weight expects {wcin}")
    if b is not None and b.shape != (cout,):
        raise DimensionError(f"conv2d bias shape {b.shape} does not match Cout={cout}")
    hp, wp = h + 2 * pad, wd + 2 * pad
    if hp < kh or wp < kw:
        raise DimensionError(f"conv2d kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    cols = _im2col(xp, kh, kw, stride, ho, wo)  # [B, Cin*kh*kw, ho*wo]
    w2 = w.data.reshape(cout, cin * kh * kw)
    out = (w2 @ cols).reshape(bsz, cout, ho, wo)
    if b is not None:
        out += b.data[None, :, None, None]

    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        g2 = g.reshape(bsz, cout, ho * wo)
        gw = gx = gb = None
        if w.requires_grad:
            gw = (g2 @ cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
        if x.requires_grad:
            dcols = (w2.T @ g2).reshape(bsz, cin, kh, kw, ho, wo)
            gxp = np.zeros((bsz, cin, hp, wp), dtype=x.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += dcols[:, :, i, j]
            gx = gxp[:, :, pad : pad + h, pad : pad + wd] if pad else gxp
        if b is not None and b.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return (gx, gw) if b is None else (gx, gw, gb)

    return _result(out, parents, backward)


def conv_transpose2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 2) -> Tensor:
    """Transposed convolution with ``w[Cin,Cout,kh,kw]`` and no padding.

    This is the adjoint of :func:`conv2d` with the same weight array and stride.
    """
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError(
            f"conv_transpose2d expects rank-4 input and weight, got {x.shape} and {w.shape}"
        )
    bsz, cin, h, wd = x.shape
    wcin, cout, kh, kw = w.shape
    if wcin != cin:
        raise DimensionError(f"conv_transpose2d channel axis: input has Cin={cin}, weight expects {wcin}")
    ho = (h - 1) * stride + kh
    wo = (wd - 1) * stride + kw
    out = np.zeros((bsz, cout, ho, wo), dtype=x.dtype)
    x2 = x.data.reshape(bsz, cin, h * wd)
    for i in range(kh):
        for j in range(kw):
            contrib = (w.data[:, :, i, j].T @ x2).reshape(bsz, cout, h, wd)
            out[:, :, i : i + stride * h : stride, j : j + stride * wd : stride] += contrib
    if b is not None:
        out += b.data[None, :, None, None]

    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        gx = gw = gb = None
        if x.requires_grad:
            gx2 = np.zeros((bsz, cin, h * wd), dtype=x.dtype)
        if w.requires_grad:
            gw = np.empty_like(w.data)
        for i in range(kh):
            for j in range(kw):
                gs = g[:, :, i : i + stride * h : stride, j : j + stride * wd : stride].reshape(bsz, cout, h * wd)
                if x.requires_grad:
                    gx2 += w.data[:, :, i, j] @ gs
                if w.requires_grad:
                    gw[:, :, i, j] = np.tensordot(x2, gs, axes=([0, 2], [0, 2]))
        if x.requires_grad:
            gx = gx2.reshape(x.shape)
        if b is not None and b.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return (gx, gw) if b is None else (gx, gw, gb)

    return _result(out, parents, backward)


# ---------------------------------------------------------------------------
# recurrences
# ---------------------------------------------------------------------------


def linear_scan(inputs: Tensor, decay: Tensor, gain: Tensor) -> Tensor:
    """Run ``x[t+1] = decay * x[t] + gain * inputs[t]`` from ``x[0] = 0``.

    ``inputs`` is ``[B, L, d]``; ``decay`` and ``gain`` are per-channel ``[d]``.
    Returns the visited states ``x[1..L]`` stacked as ``[B, L, d]``.
    """
    if inputs.ndim != 3 or decay.shape != (inputs.shape[2],) or gain.shape != decay.shape:
        raise DimensionError(
            f"linear_scan: inputs {inputs.shape}, decay {decay.shape}, gain {gain.shape}"
        )
    u = inputs.data
    a = decay.data
    bg = u * gain.data
    steps = u.shape[1]
    states = np.empty_like(u)
    x = np.zeros((u.shape[0], u.shape[2]), dtype=u.dtype)
    for t in range(steps):
        x = a * x + bg[:, t]
        states[:, t] = x

    def backward(g):
        # adjoint recursion: lam[t] = g[t] + a * lam[t+1]
        lam = np.empty_like(g)
        acc = np.zeros((g.shape[0], g.shape[2]), dtype=g.dtype)
        for t in range(steps - 1, -1, -1):
            acc = g[:, t] + a * acc
            lam[:, t] = acc
        g_in = lam * gain.data if inputs.requires_grad else None
        g_gain = (lam * u).sum(axis=(0, 1)) if gain.requires_grad else None
        g_decay = None
        if decay.requires_grad:
            g_decay = (lam[:, 1:] * states[:, :-1]).sum(axis=(0, 1))
        return g_in, g_decay, g_gain

    return _result(states, (inputs, decay, gain), backward)
