"""A small reverse-mode automatic differentiation engine over numpy arrays.

Only the operations the controller needs are provided. Broadcasting follows
numpy; gradients are summed back to the operand shapes.

>>> w = Tensor(3.0, requires_grad=True)
>>> (w * w).backward()
>>> float(w.grad)
6.0
"""

from __future__ import annotations

import numpy as np


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, parents=(), backward_fn=None, name: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = parents
        self._backward_fn = backward_fn
        self.name = name

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    # graph construction -------------------------------------------------

    @staticmethod
    def _lift(x) -> "Tensor":
        return x if isinstance(x, Tensor) else Tensor(x)

    def _make(self, data, parents, backward_fn):
        track = any(p.requires_grad for p in parents)
        return Tensor(data, track, parents if track else (), backward_fn if track else None)

    def _accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        g = _unbroadcast(g, self.data.shape)
        self.grad = g.copy() if self.grad is None else self.grad + g

    def __add__(self, other):
        other = self._lift(other)

        def back(g):
            self._accumulate(g)
            other._accumulate(g)

        return self._make(self.data + other.data, (self, other), back)

    __radd__ = __add__

    def __neg__(self):
        return self._make(-self.data, (self,), lambda g: self._accumulate(-g))

    def __sub__(self, other):
        return self + (-self._lift(other))

    def __rsub__(self, other):
        return self._lift(other) + (-self)

    def __mul__(self, other):
        other = self._lift(other)

        def back(g):
            self._accumulate(g * other.data)
            other._accumulate(g * self.data)

        return self._make(self.data * other.data, (self, other), back)

    __rmul__ = __mul__

    def __pow__(self, p: float):
        def back(g):
            self._accumulate(g * p * self.data ** (p - 1))

        return self._make(self.data**p, (self,), back)

    def __matmul__(self, other):
        """Batched ``x @ W`` where ``W`` is 2-D."""
        other = self._lift(other)

        def back(g):
            self._accumulate(g @ other.data.T)
            if other.requires_grad:
                a = self.data.reshape(-1, self.data.shape[-1])
                other._accumulate(a.T @ g.reshape(-1, g.shape[-1]))

        return self._make(self.data @ other.data, (self, other), back)

    def reshape(self, *shape):
        old = self.data.shape
        return self._make(self.data.reshape(*shape), (self,), lambda g: self._accumulate(g.reshape(old)))

    def sum(self, axis=None, keepdims=False):
        old = self.data.shape

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._accumulate(np.broadcast_to(g, old))

        return self._make(self.data.sum(axis=axis, keepdims=keepdims), (self,), back)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis, keepdims) * (1.0 / n)

    # elementwise nonlinearities -------------------------------------------

    def sin(self):
        return self._make(np.sin(self.data), (self,), lambda g: self._accumulate(g * np.cos(self.data)))

    def tanh(self):
        y = np.tanh(self.data)
        return self._make(y, (self,), lambda g: self._accumulate(g * (1.0 - y * y)))

    def sigmoid(self):
        y = 0.5 * (1.0 + np.tanh(0.5 * self.data))
        return self._make(y, (self,), lambda g: self._accumulate(g * y * (1.0 - y)))

    def relu(self):
        mask = self.data > 0
        return self._make(self.data * mask, (self,), lambda g: self._accumulate(g * mask))

    # reverse pass ---------------------------------------------------------

    def backward(self, grad=None) -> None:
        if not self.requires_grad:
            raise RuntimeError("backward() called on a tensor that is not part of a graph")
        if grad is None:
            if self.data.size != 1:
                raise ValueError("grad must be given for non-scalar outputs")
            grad = np.ones_like(self.data)
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        # propagate through a private buffer so leaf .grad accumulates once
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward_fn is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            saved = [(p, p.grad) for p in node._parents]
            for p in node._parents:
                p.grad = None
            node._backward_fn(g)
            for p, old in saved:
                if p.grad is not None:
                    grads[id(p)] = grads[id(p)] + p.grad if id(p) in grads else p.grad
                p.grad = old


def mse(a: Tensor, b) -> Tensor:
    d = a - b
    return (d * d).mean()


def parameter(data, name: str = "") -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)
