"""A small tape-based reverse-mode autodiff over numpy arrays.

Every differentiable value is a :class:`Tensor`. Operations record their
parents together with a vector-Jacobian product closure; node ids grow
monotonically, so sorting reachable nodes by descending id is a valid
reverse topological order (and makes the reverse sweep deterministic).
"""

from __future__ import annotations

import itertools
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "Tensor",
    "as_tensor",
    "constant",
    "grad",
    "backward",
    "vjp",
    "conv2d",
    "conv2d_array",
    "conv2d_transpose_array",
    "leaky_relu",
    "stack",
    "linear",
    "matvec",
    "mse",
    "dot",
    "tsum",
    "tmean",
    "tsqrt",
]

_ids = itertools.count()


class Tensor:
    """Array value plus the tape entry that produced it."""

    __array_priority__ = 1000

    def __init__(self, value, requires_grad: bool = False, parents=(), op: str = "leaf"):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = bool(requires_grad or parents)
        self.parents: tuple[tuple["Tensor", Callable], ...] = tuple(parents)
        self.op = op
        self.grad: np.ndarray | None = None
        self.id = next(_ids)

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.shape}, requires_grad={self.requires_grad})"

    def detach(self) -> "Tensor":
        return Tensor(self.value)

    def zero_grad(self) -> None:
        self.grad = None

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return div(self, other)
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return neg(self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)


def as_tensor(v) -> Tensor:
    return v if isinstance(v, Tensor) else Tensor(v)


def constant(v) -> Tensor:
    return Tensor(np.array(v, dtype=np.float64))


def _node(value, parents, op) -> Tensor:
    live = tuple((p, f) for p, f in parents if p.requires_grad)
    return Tensor(value, parents=live, op=op)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(
        a.value + b.value,
        [(a, lambda g: _unbroadcast(g, a.shape)), (b, lambda g: _unbroadcast(g, b.shape))],
        "add",
    )


def neg(a: Tensor) -> Tensor:
    return _node(-a.value, [(a, lambda g: -g)], "neg")


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        s = np.asarray(b, dtype=np.float64)
        return _node(a.value * s, [(a, lambda g: _unbroadcast(g * s, a.shape))], "scale")
    av, bv = a.value, b.value
    return _node(
        av * bv,
        [(a, lambda g: _unbroadcast(g * bv, a.shape)), (b, lambda g: _unbroadcast(g * av, b.shape))],
        "mul",
    )


def div(a: Tensor, b: Tensor) -> Tensor:
    av, bv = a.value, b.value
    return _node(
        av / bv,
        [
            (a, lambda g: _unbroadcast(g / bv, a.shape)),
            (b, lambda g: _unbroadcast(-g * av / bv**2, b.shape)),
        ],
        "div",
    )


def tsqrt(a: Tensor) -> Tensor:
    r = np.sqrt(a.value)
    return _node(r, [(a, lambda g: g * 0.5 / r)], "sqrt")


def tsum(a: Tensor) -> Tensor:
    shape = a.shape
    return _node(np.sum(a.value), [(a, lambda g: np.broadcast_to(g, shape).copy())], "sum")


def tmean(a: Tensor) -> Tensor:
    shape, n = a.shape, a.value.size
    return _node(np.mean(a.value), [(a, lambda g: np.full(shape, g / n))], "mean")


def dot(a, b) -> Tensor:
    return tsum(mul(as_tensor(a), b))


def mse(a: Tensor, target) -> Tensor:
    """Mean squared error against a tensor or a fixed array."""
    d = a - target
    return tmean(d * d)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _node(a.value.reshape(shape), [(a, lambda g: g.reshape(old))], "reshape")


def getitem(a: Tensor, idx) -> Tensor:
    shape = a.shape

    def back(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return out

    return _node(a.value[idx], [(a, back)], "getitem")


def stack(items: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in items]
    parents = [(t, (lambda i: lambda g: np.take(g, i, axis=axis))(i)) for i, t in enumerate(ts)]
    return _node(np.stack([t.value for t in ts], axis=axis), parents, "stack")


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    gain = np.where(a.value > 0, 1.0, slope)
    return _node(a.value * gain, [(a, lambda g: g * gain)], "leaky_relu")


def linear(op, a) -> Tensor:
    """Apply a fixed linear map (anything with ``apply``/``adjoint``)."""
    a = as_tensor(a)
    return _node(np.asarray(op.apply(a.value)), [(a, lambda g: np.asarray(op.adjoint(g)))], "linear")


def matvec(w: Tensor, v) -> Tensor:
    """``w @ v`` for a matrix ``w`` and a vector or matrix of columns ``v``."""
    w, v = as_tensor(w), as_tensor(v)
    wv, vv = w.value, v.value
    back_w = (lambda g: np.outer(g, vv)) if vv.ndim == 1 else (lambda g: g @ vv.T)
    return _node(wv @ vv, [(w, back_w), (v, lambda g: wv.T @ g)], "matvec")


def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    c, h, w = x.shape
    r = k // 2
    xp = np.pad(x, ((0, 0), (r, r), (r, r)))
    win = sliding_window_view(xp, (k, k), axis=(1, 2))  # c, h, w, k, k
    return win.transpose(0, 3, 4, 1, 2).reshape(c * k * k, h * w)


def _col2im(cols: np.ndarray, c: int, h: int, w: int, k: int) -> np.ndarray:
    r = k // 2
    cols = cols.reshape(c, k, k, h, w)
    out = np.zeros((c, h + 2 * r, w + 2 * r))
    for i in range(k):
        for j in range(k):
            out[:, i : i + h, j : j + w] += cols[:, i, j]
    return out[:, r : r + h, r : r + w]


def conv2d_array(x: np.ndarray, weight: np.ndarray, bias: np.ndarray | None = None) -> np.ndarray:
    """Same-padded (zero) cross-correlation, ``x``: (cin, h, w), ``weight``: (cout, cin, k, k)."""
    cout, cin, k, _ = weight.shape
    _, h, w = x.shape
    out = weight.reshape(cout, -1) @ _im2col(x, k)
    if bias is not None:
        out += bias[:, None]
    return out.reshape(cout, h, w)


def conv2d_transpose_array(g: np.ndarray, weight: np.ndarray) -> np.ndarray:
    """Transpose of :func:`conv2d_array` with respect to its input."""
    cout, cin, k, _ = weight.shape
    _, h, w = g.shape
    cols = weight.reshape(cout, -1).T @ g.reshape(cout, h * w)
    return _col2im(cols, cin, h, w, k)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    x, weight = as_tensor(x), as_tensor(weight)
    cout, cin, k, _ = weight.shape
    if x.ndim != 3 or x.shape[0] != cin:
        raise ValueError(f"conv2d expects input (cin={cin}, h, w), got {x.shape}")
    _, h, w = x.shape
    cols = _im2col(x.value, k)
    wmat = weight.value.reshape(cout, -1)
    out = wmat @ cols
    parents = [
        (x, lambda g: _col2im(wmat.T @ g.reshape(cout, -1), cin, h, w, k)),
        (weight, lambda g: (g.reshape(cout, -1) @ cols.T).reshape(weight.shape)),
    ]
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.value[:, None]
        parents.append((bias, lambda g: g.reshape(cout, -1).sum(axis=1)))
    return _node(out.reshape(cout, h, w), parents, "conv2d")


def _reachable(outputs: Iterable[Tensor]) -> list[Tensor]:
    seen, stack_, nodes = set(), list(outputs), []
    while stack_:
        t = stack_.pop()
        if t.id in seen or not t.requires_grad:
            continue
        seen.add(t.id)
        nodes.append(t)
        stack_.extend(p for p, _ in t.parents)
    nodes.sort(key=lambda t: t.id, reverse=True)
    return nodes


def grad(outputs: Sequence[Tensor], seeds: Sequence, wrt: Sequence[Tensor]) -> list[np.ndarray]:
    """Cotangents of ``wrt`` for the given output seeds; nothing is stored on the tape.

    Inputs that do not influence the outputs get exact zeros.
    """
    cot: dict[int, np.ndarray] = {}
    for out, s in zip(outputs, seeds):
        s = np.broadcast_to(np.asarray(s, dtype=np.float64), out.shape)
        cot[out.id] = cot[out.id] + s if out.id in cot else np.array(s)
    for node in _reachable(outputs):
        g = cot.get(node.id)
        if g is None or not node.parents:
            continue
        for parent, back in node.parents:
            contrib = back(g)
            if parent.id in cot:
                cot[parent.id] = cot[parent.id] + contrib
            else:
                cot[parent.id] = np.array(contrib, dtype=np.float64)
    return [cot.get(t.id, np.zeros(t.shape)) for t in wrt]


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
    if loss.value.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss is detached from the tape")
    leaves = [t for t in _reachable([loss]) if not t.parents]
    for t, g in zip(leaves, grad([loss], [1.0], leaves)):
        t.grad = g if t.grad is None else t.grad + g


def vjp(f: Callable[[Tensor], Tensor], at, cotangent) -> np.ndarray:
    """``cotangent^T J_f(at)`` for an array-to-array function built from tape ops."""
    x = Tensor(np.asarray(at, dtype=np.float64), requires_grad=True)
    out = f(x)
    cot = np.asarray(cotangent, dtype=np.float64)
    if cot.shape != out.shape:
        raise ValueError(f"cotangent shape {cot.shape} does not match output {out.shape}")
    return grad([out], [cot], [x])[0]
