"""Reverse-mode automatic differentiation over dense matrices.

The op set is deliberately small: exactly what the encoders, losses and
the linear baselines need. Values are numpy arrays; float32 and float64
both work, and an op never silently changes the dtype of its inputs.
"""
from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from ..errors import NumericError

__all__ = ["Tensor", "NumericError", "matmul", "add", "mul", "sub", "relu",
           "leaky_relu", "concat_cols", "tsum", "scale", "check_finite"]


def _as_float_array(data) -> np.ndarray:
    arr = np.asarray(data)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float64)
    return arr


class Tensor:
    """A value node in the computation graph.

    ``requires_grad`` marks leaves that accumulate gradients; interior
    nodes inherit it from their parents. ``backward()`` walks the graph
    once in reverse topological order.
    """

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_float_array(data)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._backward: Optional[Callable[[], None]] = None
        self._parents: tuple[Tensor, ...] = ()

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = grad.astype(self.data.dtype, copy=True)
        else:
            self.grad += grad

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        if grad is None:
            grad = np.ones_like(self.data)
        self.accumulate(np.asarray(grad, dtype=self.data.dtype))
        for node in reversed(_topo_order(self)):
            if node._backward is not None and node.grad is not None:
                node._backward()
                # Interior nodes are spent once their parents have the
                # gradient; dropping state here keeps peak memory at one
                # layer of gradients instead of the whole graph.
                node.grad = None
                node._backward = None
                node._parents = ()

    # Operator sugar; the module-level functions carry the math.
    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def _make(data: np.ndarray, parents: tuple[Tensor, ...]) -> Tensor:
    out = Tensor(data)
    out.requires_grad = any(p.requires_grad for p in parents)
    out._parents = tuple(p for p in parents if p.requires_grad)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcasted gradient back to the original operand shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def matmul(a: Tensor, b: Tensor) -> Tensor:
    out = _make(a.data @ b.data, (a, b))

    def backward() -> None:
        g = out.grad
        if a.requires_grad:
            a.accumulate(g @ b.data.T)
        if b.requires_grad:
            b.accumulate(a.data.T @ g)

    out._backward = backward
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    out = _make(a.data + b.data, (a, b))

    def backward() -> None:
        g = out.grad
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g, b.data.shape))

    out._backward = backward
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = _make(a.data - b.data, (a, b))

    def backward() -> None:
        g = out.grad
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(-g, b.data.shape))

    out._backward = backward
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = _make(a.data * b.data, (a, b))

    def backward() -> None:
        g = out.grad
        if a.requires_grad:
            a.accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g * a.data, b.data.shape))

    out._backward = backward
    return out


def scale(a: Tensor, c: float) -> Tensor:
    out = _make(a.data * c, (a,))

    def backward() -> None:
        if a.requires_grad:
            a.accumulate(out.grad * c)

    out._backward = backward
    return out


def relu(a: Tensor) -> Tensor:
    out = _make(np.maximum(a.data, 0), (a,))

    def backward() -> None:
        if a.requires_grad:
            a.accumulate(out.grad * (a.data > 0))

    out._backward = backward
    return out


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    out = _make(np.where(a.data > 0, a.data, slope * a.data), (a,))

    def backward() -> None:
        if a.requires_grad:
            a.accumulate(out.grad * np.where(a.data > 0, 1.0, slope).astype(a.data.dtype))

    out._backward = backward
    return out


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    out = _make(np.concatenate([a.data, b.data], axis=1), (a, b))
    split = a.data.shape[1]

    def backward() -> None:
        g = out.grad
        if a.requires_grad:
            a.accumulate(g[:, :split])
        if b.requires_grad:
            b.accumulate(g[:, split:])

    out._backward = backward
    return out


def tsum(a: Tensor) -> Tensor:
    """Sum to a scalar; mainly a test-side loss head."""
    out = _make(np.asarray(a.data.sum(), dtype=a.data.dtype), (a,))

    def backward() -> None:
        if a.requires_grad:
            a.accumulate(np.broadcast_to(out.grad, a.data.shape).copy())

    out._backward = backward
    return out


def check_finite(value: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(value)):
        raise NumericError(f"non-finite values in {where}")
