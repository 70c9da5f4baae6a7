"""A small reverse-mode autodiff over numpy arrays.

Every op records its inputs and a closure that pushes the output gradient
back to them. ``Tensor.backward`` walks the recorded graph in reverse
topological order. Under ``no_grad()`` nothing is recorded.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")
    __array_priority__ = 100  # make ndarray <op> Tensor defer to Tensor

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.name = name

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}{', grad' if self.requires_grad else ''})"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node._accumulate(g)
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not _tracks(parent):
                    continue
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg

    # arithmetic ---------------------------------------------------------
    def __add__(self, other):
        other = _wrap(other)
        a, b = self.shape, other.shape
        return _op(self.data + other.data, (self, other),
                   lambda g: (_unbroadcast(g, a), _unbroadcast(g, b)))

    __radd__ = __add__

    def __neg__(self):
        return _op(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other):
        return self + (-_wrap(other))

    def __rsub__(self, other):
        return _wrap(other) + (-self)

    def __mul__(self, other):
        other = _wrap(other)
        x, y = self.data, other.data
        return _op(x * y, (self, other),
                   lambda g: (_unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape)))

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _wrap(other)
        x, y = self.data, other.data
        return _op(x / y, (self, other),
                   lambda g: (_unbroadcast(g / y, x.shape), _unbroadcast(-g * x / (y * y), y.shape)))

    def __rtruediv__(self, other):
        return _wrap(other) / self

    def __matmul__(self, other):
        other = _wrap(other)
        x, y = self.data, other.data
        if x.ndim > 2 and y.ndim == 2:
            # (..., n) @ (n, m) as one 2-D product
            x2 = x.reshape(-1, x.shape[-1])

            def back2(g):
                g2 = g.reshape(-1, g.shape[-1])
                return (g2 @ y.T).reshape(x.shape), x2.T @ g2
            return _op((x2 @ y).reshape(*x.shape[:-1], y.shape[-1]), (self, other), back2)

        def back(g):
            gx = g @ np.swapaxes(y, -1, -2) if y.ndim > 1 else np.multiply.outer(g, y)
            gy = np.swapaxes(x, -1, -2) @ g if x.ndim > 1 else np.multiply.outer(x, g)
            return _unbroadcast(gx, x.shape), _unbroadcast(gy, y.shape)
        return _op(x @ y, (self, other), back)

    def __rmatmul__(self, other):
        return _wrap(other) @ self

    def __getitem__(self, idx):
        shape = self.shape

        basic = all(isinstance(i, (slice, int)) for i in (idx if isinstance(idx, tuple) else (idx,)))

        def back(g):
            out = np.zeros(shape)
            if basic:  # views never repeat an element
                out[idx] = g
            else:
                np.add.at(out, idx, g)
            return (out,)
        return _op(self.data[idx], (self,), back)

    # shape ----------------------------------------------------------------
    def reshape(self, *shape):
        old = self.shape
        return _op(self.data.reshape(*shape), (self,), lambda g: (g.reshape(old),))

    def swapaxes(self, a: int, b: int):
        return _op(np.swapaxes(self.data, a, b), (self,), lambda g: (np.swapaxes(g, a, b),))

    @property
    def T(self):
        return self.swapaxes(-1, -2)

    # reductions -------------------------------------------------------------
    def sum(self, axis=None, keepdims: bool = False):
        shape = self.shape

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape),)
        return _op(self.data.sum(axis=axis, keepdims=keepdims), (self,), back)

    def mean(self, axis=None, keepdims: bool = False):
        n = self.data.size if axis is None else np.prod([self.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis, keepdims) * (1.0 / n)

    # elementwise ------------------------------------------------------------
    def tanh(self):
        t = np.tanh(self.data)
        return _op(t, (self,), lambda g: (g * (1.0 - t * t),))

    def exp(self):
        e = np.exp(self.data)
        return _op(e, (self,), lambda g: (g * e,))

    def log(self):
        x = self.data
        return _op(np.log(x), (self,), lambda g: (g / x,))

    def relu(self):
        m = self.data > 0
        return _op(self.data * m, (self,), lambda g: (g * m,))

    def softmax(self, axis: int = -1):
        s = softmax(self.data, axis)
        return _op(s, (self,), lambda g: (s * (g - (g * s).sum(axis=axis, keepdims=True)),))

    def log_softmax(self, axis: int = -1):
        x = self.data
        shifted = x - x.max(axis=axis, keepdims=True)
        lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
        out = shifted - lse
        s = np.exp(out)
        return _op(out, (self,), lambda g: (g - s * g.sum(axis=axis, keepdims=True),))


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def _tracks(t: Tensor) -> bool:
    return t.requires_grad or t._backward is not None


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _op(data, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(_tracks(p) for p in parents):
        out._parents = tuple(parents)
        out._backward = backward
    return out


def parameter(data, name: str = "") -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def stop_grad(x: Tensor) -> Tensor:
    """Identity on the forward pass; blocks every gradient to ``x``."""
    return Tensor(x.data)


def embed(weight: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup ``weight[ids]`` with scatter-add backward."""
    ids = np.asarray(ids, dtype=np.int64)
    shape = weight.shape

    def back(g):
        out = np.zeros(shape)
        np.add.at(out, ids.reshape(-1), g.reshape(-1, shape[-1]))
        return (out,)
    return _op(weight.data[ids], (weight,), back)


def pick(x: Tensor, ids: np.ndarray) -> Tensor:
    """``x[..., ids]`` elementwise along the last axis (ids has shape x.shape[:-1])."""
    ids = np.asarray(ids, dtype=np.int64)
    shape = x.shape

    def back(g):
        out = np.zeros(shape)
        np.put_along_axis(out, ids[..., None], g[..., None], axis=-1)
        return (out,)
    return _op(np.take_along_axis(x.data, ids[..., None], axis=-1)[..., 0], (x,), back)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def back(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis)
                     for i in range(len(tensors)))
    return _op(np.concatenate([t.data for t in tensors], axis=axis), tensors, back)


def where(mask: np.ndarray, x: Tensor, fill: float) -> Tensor:
    """``x`` where ``mask`` is true, constant ``fill`` elsewhere."""
    mask = np.asarray(mask, dtype=bool)
    shape = x.shape
    return _op(np.where(mask, x.data, fill), (x,),
               lambda g: (_unbroadcast(np.where(mask, g, 0.0), shape),))


def numerical_grad(f: Callable[[], float], param: Tensor, eps: float = 1e-5,
                   index: Sequence[tuple] | None = None) -> np.ndarray:
    """Central finite differences of scalar ``f()`` w.r.t. ``param`` (in place perturbation)."""
    grad = np.zeros_like(param.data)
    indices = index if index is not None else list(np.ndindex(param.shape))
    for i in indices:
        old = param.data[i]
        param.data[i] = old + eps
        fp = f()
        param.data[i] = old - eps
        fm = f()
        param.data[i] = old
        grad[i] = (fp - fm) / (2 * eps)
    return grad
