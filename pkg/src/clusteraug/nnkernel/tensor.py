"""Reverse-mode automatic differentiation over dense float64 arrays.

A :class:`Tensor` wraps a numpy array together with the nodes it was computed
from and a closure producing parent gradients.  Calling ``backward()`` on a
scalar loss walks the graph in reverse topological order and accumulates
``.grad`` on every tensor that requires gradients.

Design constraints this kernel enforces:

* float64 everywhere: the model is tiny and gradient checks need precision;
* every operation verifies its output is finite and raises
  :class:`KernelError` otherwise, so a diverging forward pass fails loudly;
* given identical inputs, every operation is bitwise deterministic.

Only the primitives needed by the generation model and the tagger exist:
2-D matrix algebra, row softmax variants (with masking), layer
normalization, gathers, and elementwise maps.  Masked softmax keeps the
minus-infinity logits internal, so no tensor ever holds a non-finite value.
"""

from __future__ import annotations

import numpy as np


class KernelError(RuntimeError):
    """Numeric kernel fault: bad shapes, non-finite values, or bad graph use."""


_grad_enabled = True


class no_grad:
    """Context manager disabling graph construction (forward-only evaluation)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, exc_type, exc, tb):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def _check_finite(data: np.ndarray) -> None:
    if not np.isfinite(data).all():
        raise KernelError("non-finite value produced in forward pass")


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        _check_finite(self.data)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def backward(self) -> None:
        """Populate ``.grad`` on every reachable tensor that requires gradients."""
        if self.data.shape != ():
            raise KernelError("backward requires a scalar loss")
        if self._backward is None:
            raise KernelError("backward on a tensor detached from any graph")
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
                if parent._backward is not None and id(parent) not in visited:
                    stack.append((parent, False))
        self.grad = np.ones((), dtype=np.float64)
        for node in reversed(order):
            if node.grad is None:
                continue
            grads = node._backward(node.grad)
            for parent, g in zip(node._parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, Tensor) else scale(self, other)

    def __rmul__(self, other):
        return scale(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _result(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    _check_finite(data)
    out.grad = None
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise KernelError(f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return _result(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return _result(a.data - b.data, (a, b), lambda g: (g, -g))


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: (-g,))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    return _result(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    return _result(a.data * s, (a,), lambda g: (g * s,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise KernelError(f"matmul: incompatible shapes {a.data.shape} @ {b.data.shape}")
    return _result(
        a.data @ b.data,
        (a, b),
        lambda g: (g @ b.data.T, a.data.T @ g),
    )


def transpose(a: Tensor) -> Tensor:
    return _result(np.ascontiguousarray(a.data.T), (a,), lambda g: (g.T,))


def concat_rows(parts: list[Tensor]) -> Tensor:
    sizes = [p.data.shape[0] for p in parts]
    splits = np.cumsum(sizes)[:-1]
    return _result(
        np.concatenate([p.data for p in parts], axis=0),
        tuple(parts),
        lambda g: tuple(np.split(g, splits, axis=0)),
    )


def concat_cols(parts: list[Tensor]) -> Tensor:
    sizes = [p.data.shape[1] for p in parts]
    splits = np.cumsum(sizes)[:-1]
    return _result(
        np.concatenate([p.data for p in parts], axis=1),
        tuple(parts),
        lambda g: tuple(np.split(g, splits, axis=1)),
    )


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    def bwd(g):
        full = np.zeros_like(a.data)
        full[start:stop] = g
        return (full,)

    return _result(a.data[start:stop], (a,), bwd)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    def bwd(g):
        full = np.zeros_like(a.data)
        full[:, start:stop] = g
        return (full,)

    return _result(a.data[:, start:stop], (a,), bwd)


def gather_rows(a: Tensor, indices) -> Tensor:
    """Row lookup (embedding); gradients scatter-add into the table."""
    idx = np.asarray(indices, dtype=np.intp)

    def bwd(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return _result(a.data[idx], (a,), bwd)


def take_per_row(a: Tensor, cols) -> Tensor:
    """y[i] = a[i, cols[i]], the gather used by cross-entropy."""
    idx = np.asarray(cols, dtype=np.intp)
    rows = np.arange(a.data.shape[0])

    def bwd(g):
        full = np.zeros_like(a.data)
        full[rows, idx] = g
        return (full,)

    return _result(a.data[rows, idx], (a,), bwd)


def flatten(a: Tensor) -> Tensor:
    shape = a.data.shape
    return _result(a.data.reshape(-1), (a,), lambda g: (g.reshape(shape),))


def sum_all(a: Tensor) -> Tensor:
    return _result(
        np.asarray(a.data.sum(), dtype=np.float64),
        (a,),
        lambda g: (np.broadcast_to(g, a.data.shape).copy(),),
    )


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    return _result(
        np.asarray(a.data.mean(), dtype=np.float64),
        (a,),
        lambda g: (np.broadcast_to(g / n, a.data.shape).copy(),),
    )


def add_rowvec(a: Tensor, v: Tensor) -> Tensor:
    """Add a length-d bias vector to every row of an [n, d] matrix."""
    if a.data.ndim != 2 or v.data.shape != (a.data.shape[1],):
        raise KernelError(f"add_rowvec: shapes {a.data.shape} and {v.data.shape}")
    return _result(a.data + v.data, (a, v), lambda g: (g, g.sum(axis=0)))


def scale_rows(a: Tensor, row_factors: np.ndarray) -> Tensor:
    """Multiply each row by a constant factor (no gradient to the factors)."""
    f = np.asarray(row_factors, dtype=np.float64).reshape(-1, 1)
    return _result(a.data * f, (a,), lambda g: (g * f,))


def relu(a: Tensor) -> Tensor:
    keep = a.data > 0
    return _result(np.where(keep, a.data, 0.0), (a,), lambda g: (g * keep,))


def log(a: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    return _result(out, (a,), lambda g: (g / a.data,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,))


def maximum_const(a: Tensor, floor: float) -> Tensor:
    """Elementwise max with a constant; gradient passes where a >= floor."""
    keep = a.data >= floor
    return _result(np.where(keep, a.data, floor), (a,), lambda g: (g * keep,))


def softmax_rows(a: Tensor) -> Tensor:
    return masked_softmax_rows(a, None)


def masked_softmax_rows(a: Tensor, mask: np.ndarray | None, zero_on_empty: bool = False) -> Tensor:
    """Row softmax where masked-out entries get zero probability.

    A row whose mask is entirely false is an error unless ``zero_on_empty``,
    in which case that output row is exactly zero.  The -inf logits are
    internal; the result is always finite.
    """
    x = a.data
    if x.ndim != 2:
        raise KernelError("softmax expects a 2-D tensor")
    if mask is None:
        z = x
        alive = None
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != x.shape:
            raise KernelError(f"mask shape {mask.shape} != logits shape {x.shape}")
        alive = mask.any(axis=1)
        if not alive.all() and not zero_on_empty:
            raise KernelError("softmax row with no allowed positions")
        z = np.where(mask, x, -np.inf)
    rowmax = z.max(axis=1, keepdims=True)
    if alive is not None and not alive.all():
        rowmax = np.where(np.isfinite(rowmax), rowmax, 0.0)
    e = np.exp(z - rowmax)
    s = e.sum(axis=1, keepdims=True)
    p = e / np.where(s == 0.0, 1.0, s)

    def bwd(g):
        inner = (g * p).sum(axis=1, keepdims=True)
        return ((g - inner) * p,)

    return _result(p, (a,), bwd)


def log_softmax_rows(a: Tensor) -> Tensor:
    x = a.data
    if x.ndim != 2:
        raise KernelError("log_softmax expects a 2-D tensor")
    rowmax = x.max(axis=1, keepdims=True)
    shifted = x - rowmax
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = shifted - lse
    p = np.exp(out)

    def bwd(g):
        return (g - p * g.sum(axis=1, keepdims=True),)

    return _result(out, (a,), bwd)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row zero-mean/unit-variance normalization followed by an affine map."""
    d = x.data.shape[-1]
    if d < 2:
        raise KernelError("layer_norm requires row width >= 2")
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise KernelError("layer_norm gain/bias must match the row width")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = xhat * gain.data + bias.data

    def bwd(g):
        dxhat = g * gain.data
        dx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        dgain = (g * xhat).sum(axis=tuple(range(g.ndim - 1)))
        dbias = g.sum(axis=tuple(range(g.ndim - 1)))
        return (dx, dgain, dbias)

    return _result(out, (x, gain, bias), bwd)
