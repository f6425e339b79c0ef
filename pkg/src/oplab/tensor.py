"""Dense-tensor substrate with reverse-mode automatic differentiation.

A :class:`DiffTensor` wraps a numpy array (float64 for fields and weights,
complex128 for spectral intermediates) together with an optional gradient
accumulator and a tape edge to the operation that produced it.  The tape is
built per forward pass and freed once :func:`backward` has traversed it.

Only the operations the operator models actually need are implemented:
elementwise arithmetic with broadcasting, reductions, slicing/embedding,
rolls, padding, concatenation, a pointwise channel map and the activation
functions.  Spectral operations live in :mod:`oplab.spectral`.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

from .errors import ConfigurationError, ShapeError

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)
LEAKY_SLOPE = 0.01

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape construction inside the block (evaluation passes)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class DiffTensor:
    """N-dimensional array node in a reverse-mode computation graph."""

    __slots__ = ("values", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, values, requires_grad: bool = False):
        arr = np.asarray(values)
        if arr.dtype == np.complex128:
            pass
        elif np.issubdtype(arr.dtype, np.complexfloating):
            arr = arr.astype(np.complex128)
        elif arr.dtype != np.float64:
            arr = arr.astype(np.float64)
        self.values = arr
        self.requires_grad = bool(requires_grad) and _grad_enabled
        self.grad = None  # allocated lazily, only for differentiable tensors
        self._parents: tuple = ()
        self._backward_fn: Callable | None = None

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def size(self) -> int:
        return self.values.size

    @property
    def dtype(self):
        return self.values.dtype

    def item(self) -> float:
        return self.values.item()

    def detach(self) -> "DiffTensor":
        return DiffTensor(self.values)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad" if self.requires_grad else ""
        return f"DiffTensor(shape={self.shape}{flag})"

    # -- gradient accumulation ----------------------------------------------

    def _accumulate(self, g: np.ndarray) -> None:
        if np.iscomplexobj(g) and not np.iscomplexobj(self.values):
            g = g.real  # real leaf used in complex arithmetic
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        self.grad += g

    # -- operator sugar -------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __neg__(self):
        return mul(self, -1.0)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, DiffTensor):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / np.asarray(other))

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        n = self.size if axis is None else _axis_count(self.shape, axis)
        return tensor_sum(self, axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])


def _axis_count(shape, axis) -> int:
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    n = 1
    for a in axes:
        n *= shape[a]
    return n


def as_difftensor(x) -> DiffTensor:
    return x if isinstance(x, DiffTensor) else DiffTensor(x)


def make_node(values: np.ndarray, parents: Sequence[DiffTensor],
              backward_fn: Callable | None) -> DiffTensor:
    """Internal constructor for op outputs (used by spectral/conv modules too)."""
    out = DiffTensor(values)
    needs = _grad_enabled and any(p.requires_grad for p in parents)
    if needs:
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to ``shape``."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- arithmetic ---------------------------------------------------------------


def add(a, b) -> DiffTensor:
    a, b = as_difftensor(a), as_difftensor(b)
    out = a.values + b.values

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return make_node(out, (a, b), bwd)


def mul(a, b) -> DiffTensor:
    a, b = as_difftensor(a), as_difftensor(b)
    out = a.values * b.values

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * np.conj(b.values), a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * np.conj(a.values), b.shape))

    return make_node(out, (a, b), bwd)


def power(x, p: float) -> DiffTensor:
    x = as_difftensor(x)
    out = x.values ** p

    def bwd(g):
        x._accumulate(g * p * x.values ** (p - 1.0))

    return make_node(out, (x,), bwd)


def absolute(x) -> DiffTensor:
    x = as_difftensor(x)
    out = np.abs(x.values)

    def bwd(g):
        x._accumulate(g * np.sign(x.values))

    return make_node(out, (x,), bwd)


def tensor_sum(x, axis=None, keepdims: bool = False) -> DiffTensor:
    x = as_difftensor(x)
    out = x.values.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            axes = (axis,) if isinstance(axis, int) else tuple(axis)
            for a in sorted(a % x.ndim for a in axes):
                g = np.expand_dims(g, a)
        x._accumulate(np.broadcast_to(g, x.shape).copy())

    return make_node(np.asarray(out), (x,), bwd)


def conj(x) -> DiffTensor:
    x = as_difftensor(x)

    def bwd(g):
        x._accumulate(np.conj(g))

    return make_node(np.conj(x.values), (x,), bwd)


# -- structure ----------------------------------------------------------------


def reshape(x, shape) -> DiffTensor:
    x = as_difftensor(x)
    old = x.shape

    def bwd(g):
        x._accumulate(g.reshape(old))

    return make_node(x.values.reshape(shape), (x,), bwd)


def getitem(x, index) -> DiffTensor:
    x = as_difftensor(x)
    out = x.values[index]

    def bwd(g):
        full = np.zeros_like(x.values)
        full[index] = g
        x._accumulate(full)

    return make_node(out.copy(), (x,), bwd)


def embed(x, shape: tuple, index) -> DiffTensor:
    """Place ``x`` into a zero array of ``shape`` at ``index`` (adjoint of getitem)."""
    x = as_difftensor(x)
    out = np.zeros(shape, dtype=x.dtype)
    out[index] = x.values

    def bwd(g):
        x._accumulate(g[index].copy())

    return make_node(out, (x,), bwd)


def roll(x, shifts, axes) -> DiffTensor:
    x = as_difftensor(x)
    shifts = tuple(np.atleast_1d(shifts).tolist())
    axes = tuple(np.atleast_1d(axes).tolist())

    def bwd(g):
        x._accumulate(np.roll(g, tuple(-s for s in shifts), axes))

    return make_node(np.roll(x.values, shifts, axes), (x,), bwd)


def zero_pad(x, pads: Sequence[tuple]) -> DiffTensor:
    """Zero-pad per axis with (before, after) amounts."""
    x = as_difftensor(x)
    pads = tuple(pads)
    inner = tuple(slice(b, b + n) for (b, _), n in zip(pads, x.shape))

    def bwd(g):
        x._accumulate(g[inner].copy())

    return make_node(np.pad(x.values, pads), (x,), bwd)


def concat(tensors: Iterable[DiffTensor], axis: int) -> DiffTensor:
    parts = [as_difftensor(t) for t in tensors]
    out = np.concatenate([p.values for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]

    def bwd(g):
        start = 0
        for p, n in zip(parts, sizes):
            if p.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(start, start + n)
                p._accumulate(g[tuple(idx)].copy())
            start += n

    return make_node(out, tuple(parts), bwd)


def channel_linear(x, weight: DiffTensor, bias: DiffTensor | None = None) -> DiffTensor:
    """Pointwise affine map over the trailing channel axis: y = x @ W (+ b)."""
    x = as_difftensor(x)
    if x.shape[-1] != weight.shape[0]:
        raise ShapeError(
            f"channel_linear: input channels {x.shape[-1]} != weight rows {weight.shape[0]}")
    out = x.values @ weight.values
    if bias is not None:
        out = out + bias.values
    parents = (x, weight) if bias is None else (x, weight, bias)

    def bwd(g):
        if x.requires_grad:
            x._accumulate(g @ weight.values.T)
        if weight.requires_grad:
            flat_x = x.values.reshape(-1, x.shape[-1])
            flat_g = g.reshape(-1, g.shape[-1])
            weight._accumulate(flat_x.T @ flat_g)
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.reshape(-1, g.shape[-1]).sum(axis=0))

    return make_node(out, parents, bwd)


# -- activations ----------------------------------------------------------------

ACTIVATIONS = ("tanh", "relu", "gelu", "leaky_relu")


def relu(x) -> DiffTensor:
    x = as_difftensor(x)
    mask = x.values > 0

    def bwd(g):
        x._accumulate(g * mask)

    return make_node(np.where(mask, x.values, 0.0), (x,), bwd)


def leaky_relu(x, slope: float = LEAKY_SLOPE) -> DiffTensor:
    x = as_difftensor(x)
    pos = x.values > 0

    def bwd(g):
        x._accumulate(g * np.where(pos, 1.0, slope))

    return make_node(np.where(pos, x.values, slope * x.values), (x,), bwd)


def tanh(x) -> DiffTensor:
    x = as_difftensor(x)
    t = np.tanh(x.values)

    def bwd(g):
        x._accumulate(g * (1.0 - t * t))

    return make_node(t, (x,), bwd)


def gelu(x) -> DiffTensor:
    """Exact Gaussian-error-linear unit: 0.5 x (1 + erf(x / sqrt(2)))."""
    x = as_difftensor(x)
    cdf = 0.5 * (1.0 + erf(x.values / _SQRT2))

    def bwd(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x.values * x.values)
        x._accumulate(g * (cdf + x.values * pdf))

    return make_node(x.values * cdf, (x,), bwd)


def activation(x, name: str) -> DiffTensor:
    """Apply a named elementwise activation.

    Besides the four trainable choices, "identity" is accepted so that purely
    linear model configurations can be built for diagnostics.
    """
    if name == "tanh":
        return tanh(x)
    if name == "relu":
        return relu(x)
    if name == "gelu":
        return gelu(x)
    if name == "leaky_relu":
        return leaky_relu(x)
    if name == "identity":
        return as_difftensor(x)
    raise ConfigurationError(f"unknown activation {name!r}")


# -- backward traversal ---------------------------------------------------------


def backward(root: DiffTensor) -> None:
    """Reverse-accumulate gradients of a scalar ``root`` into every leaf.

    Gradients accumulate across calls; the tape reachable from ``root`` is
    freed afterwards, so repeated differentiation requires a fresh forward
    pass.
    """
    if root.size != 1:
        raise ShapeError(f"backward root must be scalar, got shape {root.shape}")
    if not root.requires_grad:
        return

    order: list[DiffTensor] = []
    visited: set[int] = set()
    stack: list[tuple[DiffTensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))

    root._accumulate(np.ones_like(root.values))
    for node in reversed(order):
        if node._backward_fn is not None and node.grad is not None:
            node._backward_fn(node.grad)
    # free the tape; intermediate grads are no longer needed
    for node in order:
        if node._backward_fn is not None:
            node._parents = ()
            node._backward_fn = None
            if node is not root:
                node.grad = None
