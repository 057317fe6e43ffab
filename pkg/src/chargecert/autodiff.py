"""Minimal reverse-mode automatic differentiation over float64 arrays.

Just enough tape machinery for small dense actor/critic networks: matmul,
broadcast add, elementwise nonlinearities, reductions, and an Adam
optimizer.  Gradients are exact, which the finite-difference checks in the
test suite rely on.
"""

from __future__ import annotations

import numpy as np


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce ``grad`` back to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("value", "grad", "parents", "backward_fn", "requires_grad")

    def __init__(self, value, parents=(), backward_fn=None, requires_grad=False):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad = None

    def backward(self):
        if self.value.size != 1:
            raise ValueError("backward() expects a scalar loss")
        topo, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                stack.append((p, False))
        self.grad = np.ones_like(self.value)
        for node in reversed(topo):
            if node.backward_fn is not None and node.grad is not None:
                node.backward_fn(node.grad)

    def _accum(self, g):
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad = self.grad + g

    # -- operators -------------------------------------------------------
    def __add__(self, other):
        other = as_tensor(other)
        out = Tensor(self.value + other.value, (self, other))

        def back(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g, self.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(g, other.shape))

        out.backward_fn = back
        return out

    __radd__ = __add__

    def __mul__(self, other):
        other = as_tensor(other)
        out = Tensor(self.value * other.value, (self, other))

        def back(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g * other.value, self.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(g * self.value, other.shape))

        out.backward_fn = back
        return out

    __rmul__ = __mul__

    def __neg__(self):
        return self * (-1.0)

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def matmul(self, other):
        other = as_tensor(other)
        out = Tensor(self.value @ other.value, (self, other))

        def back(g):
            if self.requires_grad:
                self._accum(g @ other.value.T)
            if other.requires_grad:
                other._accum(self.value.T @ g)

        out.backward_fn = back
        return out

    def __matmul__(self, other):
        return self.matmul(other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _elementwise(x: Tensor, fwd, dfdx) -> Tensor:
    y = fwd(x.value)
    out = Tensor(y, (x,))

    def back(g):
        if x.requires_grad:
            x._accum(g * dfdx(x.value, y))

    out.backward_fn = back
    return out


def tanh(x: Tensor) -> Tensor:
    return _elementwise(x, np.tanh, lambda v, y: 1.0 - y * y)


def relu(x: Tensor) -> Tensor:
    return _elementwise(x, lambda v: np.maximum(v, 0.0), lambda v, y: (v > 0).astype(float))


def exp(x: Tensor) -> Tensor:
    return _elementwise(x, np.exp, lambda v, y: y)


def log(x: Tensor) -> Tensor:
    return _elementwise(x, np.log, lambda v, y: 1.0 / v)


def square(x: Tensor) -> Tensor:
    return _elementwise(x, np.square, lambda v, y: 2.0 * v)


def mean(x: Tensor) -> Tensor:
    out = Tensor(x.value.mean(), (x,))

    def back(g):
        if x.requires_grad:
            x._accum(np.full_like(x.value, g / x.value.size))

    out.backward_fn = back
    return out


def sum_(x: Tensor, axis=None, keepdims=False) -> Tensor:
    out = Tensor(x.value.sum(axis=axis, keepdims=keepdims), (x,))

    def back(g):
        if x.requires_grad:
            gg = g
            if axis is not None and not keepdims:
                gg = np.expand_dims(gg, axis)
            x._accum(np.broadcast_to(gg, x.value.shape).copy())

    out.backward_fn = back
    return out


def minimum(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(np.minimum(a.value, b.value), (a, b))
    take_a = a.value <= b.value

    def back(g):
        if a.requires_grad:
            a._accum(g * take_a)
        if b.requires_grad:
            b._accum(g * ~take_a)

    out.backward_fn = back
    return out


def concat(tensors, axis=1) -> Tensor:
    vals = [t.value for t in tensors]
    out = Tensor(np.concatenate(vals, axis=axis), tuple(tensors))
    splits = np.cumsum([v.shape[axis] for v in vals])[:-1]

    def back(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            if t.requires_grad:
                t._accum(piece)

    out.backward_fn = back
    return out


def param(value) -> Tensor:
    return Tensor(np.asarray(value, dtype=np.float64), requires_grad=True)


class Adam:
    def __init__(self, params, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]
        self.t = 0

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            m_hat = self.m[i] / (1 - b1**self.t)
            v_hat = self.v[i] / (1 - b2**self.t)
            p.value = p.value - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()
