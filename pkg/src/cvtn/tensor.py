"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every primitive records a node holding its inputs and a closure that maps
the output gradient to input gradients. Nodes carry a monotonically
increasing sequence number, so sorting the nodes reachable from a loss by
that number yields the tape in topological order.

Leading axes are batch axes: a 2-D weight is shared across them, and a 1-D
parameter may be broadcast along a single named axis (bias-style). No other
broadcasting is performed; mismatched shapes raise :class:`ShapeError`.
"""

from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

from .errors import ConfigError, ContractError, NumericError, ShapeError

_state = threading.local()
_seq = itertools.count()

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def is_grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable recording for the current thread (inference mode)."""
    prev = is_grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


@dataclass(eq=False)
class Node:
    """One recorded primitive application on the tape."""

    op: str
    inputs: tuple["Tensor", ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    seq: int


class Tensor:
    """A float64 array participating in a reverse-mode computation graph.

    Leaves created with ``requires_grad=True`` own a zero-initialised ``grad``
    buffer that :func:`backward` accumulates into.
    """

    __slots__ = ("data", "requires_grad", "grad", "node", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self.node: Node | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self.node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_item(self)

    def zero_grad(self) -> None:
        if self.requires_grad:
            if self.grad is None:
                self.grad = np.zeros_like(self.data)
            else:
                self.grad.fill(0.0)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operator sugar; all routes go through the primitives below
    def __add__(self, other):
        return add(self, _as_tensor(other, self))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self))

    def __rsub__(self, other):
        return sub(_as_tensor(other, self), self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _raise_item(t: Tensor) -> float:
    raise ShapeError(f"item() needs a single-element tensor, got shape {t.shape}")


def _as_tensor(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.broadcast_to(np.asarray(value, dtype=np.float64), like.shape))


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def _record(out_data: np.ndarray, inputs: tuple[Tensor, ...], grad_fn, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.grad = None
    out.name = None
    out.node = None
    out.requires_grad = is_grad_enabled() and any(t.requires_grad for t in inputs)
    if out.requires_grad:
        out.node = Node(op, inputs, grad_fn, next(_seq))
    return out


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every requires-grad leaf reachable from ``loss``.

    Repeated calls accumulate; call ``zero_grad`` on leaves to reset.
    """
    if loss.ndim != 0:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if loss.node is None:
        if loss.requires_grad:
            loss.grad += 1.0
            return
        raise ContractError("loss is not on the tape (no input requires grad)")

    nodes: dict[int, Node] = {}
    stack = [loss.node]
    while stack:
        node = stack.pop()
        if id(node) in nodes:
            continue
        nodes[id(node)] = node
        for inp in node.inputs:
            if inp.node is not None and id(inp.node) not in nodes:
                stack.append(inp.node)
    tape = sorted(nodes.values(), key=lambda n: n.seq, reverse=True)

    # pending output-gradients, keyed by the node that produced the tensor
    pending: dict[int, np.ndarray] = {id(loss.node): np.ones((), dtype=np.float64)}
    for node in tape:
        g = pending.pop(id(node), None)
        if g is None:
            continue
        grads = node.backward(g)
        for inp, gi in zip(node.inputs, grads):
            if gi is None or not inp.requires_grad:
                continue
            if inp.node is None:
                if inp.grad is None:
                    inp.grad = np.zeros_like(inp.data)
                inp.grad += gi
            else:
                key = id(inp.node)
                if key in pending:
                    pending[key] = pending[key] + gi
                else:
                    pending[key] = gi


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return _record(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return _record(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _record(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def scale(x: Tensor, c: float) -> Tensor:
    return _record(x.data * c, (x,), lambda g: (g * c,), "scale")


def affine_const(x: Tensor, mult: np.ndarray, shift: np.ndarray) -> Tensor:
    """``x * mult + shift`` with non-differentiable array operands.

    ``mult`` and ``shift`` broadcast into ``x``; the output keeps ``x``'s shape.
    """
    out = x.data * mult + shift
    if out.shape != x.shape:
        raise ShapeError(f"affine_const: constants {np.shape(mult)}/{np.shape(shift)} "
                         f"would broadcast {x.shape} to {out.shape}")
    return _record(out, (x,), lambda g: (g * mult,), "affine_const")


def _axis_shape(x: Tensor, p: Tensor, axis: int, op: str) -> tuple[int, tuple[int, ...]]:
    ax = axis % x.ndim
    if p.ndim != 1 or p.shape[0] != x.shape[ax]:
        raise ShapeError(f"{op}: parameter shape {p.shape} does not match axis {axis} of {x.shape}")
    view = [1] * x.ndim
    view[ax] = p.shape[0]
    return ax, tuple(view)


def _reduce_to_axis(g: np.ndarray, ax: int) -> np.ndarray:
    others = tuple(i for i in range(g.ndim) if i != ax)
    return g.sum(axis=others)


def add_bias(x: Tensor, b: Tensor, axis: int = -1) -> Tensor:
    """Add a 1-D ``b`` along ``axis`` of ``x`` (the only broadcast add)."""
    ax, view = _axis_shape(x, b, axis, "add_bias")
    return _record(x.data + b.data.reshape(view), (x, b),
                   lambda g: (g, _reduce_to_axis(g, ax)), "add_bias")


def mul_axis(x: Tensor, s: Tensor, axis: int = -1) -> Tensor:
    ax, view = _axis_shape(x, s, axis, "mul_axis")
    sv = s.data.reshape(view)
    xd = x.data
    return _record(xd * sv, (x, s),
                   lambda g: (g * sv, _reduce_to_axis(g * xd, ax)), "mul_axis")


def div_axis(x: Tensor, s: Tensor, axis: int = -1, min_abs: float = 0.0) -> Tensor:
    """Divide by a 1-D ``s`` along ``axis``; ``|s|`` is clamped below at ``min_abs``.

    Clamped entries receive zero gradient.
    """
    ax, view = _axis_shape(x, s, axis, "div_axis")
    sd = s.data
    clamped = np.abs(sd) < min_abs
    safe = np.where(clamped, np.where(sd < 0, -min_abs, min_abs), sd)
    sv = safe.reshape(view)
    out = x.data / sv

    def grad_fn(g):
        gs = _reduce_to_axis(-g * out / sv, ax)
        gs[clamped] = 0.0
        return g / sv, gs

    return _record(out, (x, s), grad_fn, "div_axis")


def gelu(x: Tensor) -> Tensor:
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd / _SQRT2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * xd * xd)
    return _record(xd * cdf, (x,), lambda g: (g * (cdf + xd * pdf),), "gelu")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _record(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


ACTIVATIONS = {"gelu": gelu, "relu": relu}


def activation(name: str) -> Callable[[Tensor], Tensor]:
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ConfigError(f"unknown activation {name!r}; expected one of {sorted(ACTIVATIONS)}") from None


def dropout(x: Tensor, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout. Identity when not training or ``p == 0``."""
    if not training or p <= 0.0:
        return x
    if rng is None:
        raise ContractError("dropout in training mode needs a random generator")
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return _record(x.data * keep, (x,), lambda g: (g * keep,), "dropout")


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a[..., M, K] @ b[K, N]`` (shared weight) or ``b[..., K, N]`` with equal batch axes."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs at least 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    if b.ndim != 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul batch axes differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    out = ad @ bd

    if bd.ndim == 2:
        k = ad.shape[-1]

        def grad_fn(g):
            ga = g @ bd.T
            gb = ad.reshape(-1, k).T @ g.reshape(-1, g.shape[-1])
            return ga, gb
    else:
        def grad_fn(g):
            return g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g

    return _record(out, (a, b), grad_fn, "matmul")


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    out = matmul(x, w)
    return add_bias(out, b, -1) if b is not None else out


def softmax_rows(x: Tensor) -> Tensor:
    """Softmax over the last axis, computed with max subtraction."""
    xd = x.data
    if not np.all(np.isfinite(xd)):
        raise NumericError("softmax_rows: input contains non-finite values")
    e = np.exp(xd - xd.max(axis=-1, keepdims=True))
    y = e / e.sum(axis=-1, keepdims=True)

    def grad_fn(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _record(y, (x,), grad_fn, "softmax_rows")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise each row over the last axis, then apply a per-feature affine map."""
    n = x.shape[-1]
    if n < 2:
        raise ShapeError(f"layer_norm needs at least 2 features, got {n}")
    if eps <= 0:
        raise ConfigError("layer_norm eps must be positive")
    if gamma.shape != (n,) or beta.shape != (n,):
        raise ShapeError(f"layer_norm affine shapes {gamma.shape}/{beta.shape} vs features {n}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    gd = gamma.data
    out = xhat * gd + beta.data

    def grad_fn(g):
        dxhat = g * gd
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _record(out, (x, gamma, beta), grad_fn, "layer_norm")


def conv1d_same(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Zero-padded 1-D cross-correlation: ``x[..., F_in, T]`` -> ``[..., F_out, T]``."""
    if w.ndim != 3:
        raise ShapeError(f"conv1d_same kernel must be [F_out, F_in, k], got {w.shape}")
    f_out, f_in, k = w.shape
    if k % 2 == 0:
        raise ConfigError(f"conv1d_same needs an odd kernel size, got {k}")
    if x.ndim < 2 or x.shape[-2] != f_in:
        raise ShapeError(f"conv1d_same: input {x.shape} does not have {f_in} channels on axis -2")
    if b.shape != (f_out,):
        raise ShapeError(f"conv1d_same: bias {b.shape} vs {f_out} output channels")
    t = x.shape[-1]
    p = (k - 1) // 2
    pad = [(0, 0)] * (x.ndim - 1) + [(p, p)]
    xp = np.pad(x.data, pad)
    cols = sliding_window_view(xp, t, axis=-1)  # [..., F_in, k, T]; cols[..., i, j, :] = xp[..., i, j:j+T]
    wd = w.data
    out = np.einsum("oik,...ikt->...ot", wd, cols, optimize=True) + b.data[:, None]

    def grad_fn(g):
        gw = np.einsum("...ot,...ikt->oik", g, cols, optimize=True)
        gcols = np.einsum("oik,...ot->...ikt", wd, g, optimize=True)
        gxp = np.zeros(xp.shape)
        for j in range(k):
            gxp[..., j:j + t] += gcols[..., j, :]
        gb = g.sum(axis=tuple(i for i in range(g.ndim) if i != g.ndim - 2))
        return gxp[..., p:p + t], gw, gb

    return _record(out, (x, w, b), grad_fn, "conv1d_same")


def pointwise_conv(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Kernel-size-1 convolution: a channel mixing ``W @ x[..., :, t] + b`` at every step."""
    if w.ndim != 2 or x.ndim < 2 or x.shape[-2] != w.shape[1]:
        raise ShapeError(f"pointwise_conv: weight {w.shape} incompatible with input {x.shape}")
    if b.shape != (w.shape[0],):
        raise ShapeError(f"pointwise_conv: bias {b.shape} vs {w.shape[0]} output channels")
    xd, wd = x.data, w.data
    out = np.einsum("oi,...it->...ot", wd, xd, optimize=True) + b.data[:, None]

    def grad_fn(g):
        gx = np.einsum("oi,...ot->...it", wd, g, optimize=True)
        gw = np.einsum("...ot,...it->oi", g, xd, optimize=True)
        gb = g.sum(axis=tuple(i for i in range(g.ndim) if i != g.ndim - 2))
        return gx, gw, gb

    return _record(out, (x, w, b), grad_fn, "pointwise_conv")


# ---------------------------------------------------------------------------
# structural
# ---------------------------------------------------------------------------

def transpose(x: Tensor) -> Tensor:
    """Swap the last two axes."""
    return swapaxes(x, -1, -2)


def swapaxes(x: Tensor, a: int, b: int) -> Tensor:
    if x.ndim < 2:
        raise ShapeError(f"swapaxes needs at least 2 axes, got {x.shape}")
    return _record(np.swapaxes(x.data, a, b), (x,),
                   lambda g: (np.swapaxes(g, a, b),), "swapaxes")


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    src = x.shape
    out = x.data.reshape(shape)
    return _record(out, (x,), lambda g: (g.reshape(src),), "reshape")


def concat(xs: Sequence[Tensor], axis: int = -2) -> Tensor:
    """Concatenate along ``axis`` (the channel axis for channel-major tensors)."""
    if not xs:
        raise ShapeError("concat of an empty sequence")
    ref = xs[0]
    ax = axis % ref.ndim
    for t in xs[1:]:
        if t.ndim != ref.ndim or any(t.shape[i] != ref.shape[i] for i in range(ref.ndim) if i != ax):
            raise ShapeError(f"concat: {t.shape} incompatible with {ref.shape} on axis {axis}")
    sizes = [t.shape[ax] for t in xs]
    bounds = np.cumsum([0] + sizes)
    out = np.concatenate([t.data for t in xs], axis=ax)

    def grad_fn(g):
        idx = [slice(None)] * g.ndim
        parts = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx[ax] = slice(int(lo), int(hi))
            parts.append(g[tuple(idx)])
        return parts

    return _record(out, tuple(xs), grad_fn, "concat")


def slice_axis(x: Tensor, start: int, stop: int, axis: int = -1) -> Tensor:
    ax = axis % x.ndim
    if not 0 <= start < stop <= x.shape[ax]:
        raise ShapeError(f"slice [{start}:{stop}) out of range for axis {axis} of {x.shape}")
    idx = [slice(None)] * x.ndim
    idx[ax] = slice(start, stop)
    idx = tuple(idx)

    def grad_fn(g):
        full = np.zeros(x.shape)
        full[idx] = g
        return (full,)

    return _record(x.data[idx], (x,), grad_fn, "slice")


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    return _record(np.asarray(x.data.sum()), (x,),
                   lambda g: (np.broadcast_to(g, shape).copy(),), "sum")


def mean(x: Tensor, axis: int | None = None) -> Tensor:
    """Mean over all elements (scalar) or over one axis (axis dropped)."""
    shape = x.shape
    if axis is None:
        n = x.size
        return _record(np.asarray(x.data.mean()), (x,),
                       lambda g: (np.full(shape, g / n),), "mean")
    ax = axis % x.ndim
    n = shape[ax]
    return _record(x.data.mean(axis=ax), (x,),
                   lambda g: (np.repeat(np.expand_dims(g / n, ax), n, axis=ax),), "mean")


def square(x: Tensor) -> Tensor:
    xd = x.data
    return _record(xd * xd, (x,), lambda g: (2.0 * g * xd,), "square")


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean squared error over every element."""
    return mean(square(sub(pred, target)))
