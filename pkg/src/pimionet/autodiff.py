"""Minimal tape-based reverse-mode differentiation over numpy arrays.

Only the operations the operator network and the equilibrium losses need are
provided. Broadcasting follows numpy; gradients are summed back to the operand
shape. ``Tensor`` sets ``__array_ufunc__ = None`` so mixed expressions such as
``ndarray + Tensor`` dispatch to the tensor side.
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np


class NonFiniteError(FloatingPointError):
    """A forward value became NaN or infinite."""


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __array_ufunc__ = None
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _parents: tuple["Tensor", ...] = (), _backward: Callable | None = None):
        self.data = np.asarray(data, dtype=float)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents if self.requires_grad else ()
        self._backward = _backward if self.requires_grad else None
        self.name = name

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __float__(self):
        return float(self.data)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def T(self) -> "Tensor":
        return self.transpose()

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # -- graph traversal -------------------------------------------------
    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=float)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg

    # -- arithmetic ------------------------------------------------------
    def __add__(self, other):
        other = as_tensor(other)
        a, b = self.shape, other.shape
        return Tensor(self.data + other.data, _parents=(self, other),
                      _backward=lambda g: (_unbroadcast(g, a), _unbroadcast(g, b)))

    __radd__ = __add__

    def __neg__(self):
        return Tensor(-self.data, _parents=(self,), _backward=lambda g: (-g,))

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        other = as_tensor(other)
        x, y = self.data, other.data

        def back(g):
            return _unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape)
        return Tensor(x * y, _parents=(self, other), _backward=back)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return self * (1.0 / np.asarray(other, dtype=float))

    def __matmul__(self, other):
        other = as_tensor(other)
        x, y = self.data, other.data
        if x.ndim < 1 or y.ndim != 2:
            raise ValueError("matmul supports (..., n) @ (n, m) only")

        def back(g):
            gx = g @ y.T if self.requires_grad else None
            gy = None
            if other.requires_grad:
                gy = x.reshape(-1, x.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            return gx, gy
        return Tensor(x @ y, _parents=(self, other), _backward=back)

    def __rmatmul__(self, other):
        # ndarray @ Tensor: contract over the tensor's first axis
        other = np.asarray(other, dtype=float)
        if self.ndim != 2 or other.ndim != 2:
            raise ValueError("left matmul supports 2-D operands only")
        x = self.data
        return Tensor(other @ x, _parents=(self,), _backward=lambda g: (other.T @ g,))

    def __pow__(self, p):
        if p != 2:
            raise ValueError("only squaring is supported")
        x = self.data
        return Tensor(x * x, _parents=(self,), _backward=lambda g: (2.0 * g * x,))

    def __getitem__(self, idx):
        x = self.data

        def back(g):
            out = np.zeros_like(x)
            np.add.at(out, idx, g)
            return (out,)
        return Tensor(x[idx], _parents=(self,), _backward=back)

    # -- shape -----------------------------------------------------------
    def sum(self, axis=None):
        x = self.data

        def back(g):
            if axis is None:
                return (np.broadcast_to(g, x.shape).copy(),)
            return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)
        return Tensor(x.sum(axis=axis), _parents=(self,), _backward=back)

    def reshape(self, *shape):
        old = self.shape
        return Tensor(self.data.reshape(*shape), _parents=(self,), _backward=lambda g: (g.reshape(old),))

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        axes = axes or tuple(reversed(range(self.ndim)))
        inv = np.argsort(axes)
        return Tensor(self.data.transpose(axes), _parents=(self,),
                      _backward=lambda g: (g.transpose(inv),))


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def data_of(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=float)


def parameter(x, name: str | None = None) -> Tensor:
    return Tensor(np.array(x, dtype=float), requires_grad=True, name=name)


# -- elementwise nonlinearities ------------------------------------------
def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0.0
    return Tensor(np.where(mask, x.data, 0.0), _parents=(x,), _backward=lambda g: (g * mask,))


def tanh(x: Tensor) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    return Tensor(y, _parents=(x,), _backward=lambda g: (g * (1.0 - y * y),))


def sin(x: Tensor) -> Tensor:
    x = as_tensor(x)
    c = np.cos(x.data)
    return Tensor(np.sin(x.data), _parents=(x,), _backward=lambda g: (g * c,))


# -- contractions ----------------------------------------------------------
def einsum(spec: str, a, b) -> Tensor:
    """Two-operand einsum; each operand index must appear in the output or the other operand."""
    a, b = as_tensor(a), as_tensor(b)
    lhs, out = spec.replace(" ", "").split("->")
    sa, sb = lhs.split(",")

    def back(g):
        ga = np.einsum(f"{out},{sb}->{sa}", g, b.data, optimize=True) if a.requires_grad else None
        gb = np.einsum(f"{out},{sa}->{sb}", g, a.data, optimize=True) if b.requires_grad else None
        return ga, gb
    return Tensor(np.einsum(spec, a.data, b.data, optimize=True), _parents=(a, b), _backward=back)


def stack(items: Sequence[Tensor], axis: int = 0) -> Tensor:
    items = [as_tensor(t) for t in items]

    def back(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(items)))
    return Tensor(np.stack([t.data for t in items], axis=axis), _parents=tuple(items), _backward=back)


def concatenate(items: Sequence[Tensor], axis: int = -1) -> Tensor:
    items = [as_tensor(t) for t in items]
    sizes = np.cumsum([t.shape[axis] for t in items])[:-1]

    def back(g):
        return tuple(np.split(g, sizes, axis=axis))
    return Tensor(np.concatenate([t.data for t in items], axis=axis), _parents=tuple(items), _backward=back)


def linear_solve(solver, x):
    """Apply ``A^{-1}`` along the last axis; ``solver`` exposes ``solve`` and ``solve_transpose``."""
    if not isinstance(x, Tensor):
        return solver.solve(np.asarray(x, dtype=float))
    return Tensor(solver.solve(x.data), _parents=(x,), _backward=lambda g: (solver.solve_transpose(g),))


def check_finite(x: Tensor, where: str) -> Tensor:
    if not np.all(np.isfinite(x.data)):
        raise NonFiniteError(f"non-finite values in {where}")
    return x


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
