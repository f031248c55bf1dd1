"""A small reverse-mode autodiff tape over numpy arrays.

Only the primitives the velocity MLP and its losses need are provided.
Nodes are appended in evaluation order, so the tape is already topologically
sorted and ``backward`` is a single reverse sweep.
"""

from __future__ import annotations

import numpy as np


class TapeError(RuntimeError):
    pass


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Var:
    __slots__ = ("tape", "value", "grad", "index", "requires_grad")

    def __init__(self, tape: "Tape", value: np.ndarray, requires_grad: bool):
        self.tape = tape
        self.value = value
        self.grad = None
        self.requires_grad = requires_grad
        self.index = -1

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        return self.tape.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return self.tape.sub(self, other)

    def __rsub__(self, other):
        return self.tape.sub(other, self)

    def __mul__(self, other):
        return self.tape.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return self.tape.mul(self, -1.0)

    def __matmul__(self, other):
        return self.tape.matmul(self, other)

    def __repr__(self):
        return f"Var(shape={self.value.shape}, index={self.index})"


class Tape:
    """Append-only record of primitive ops; single use."""

    def __init__(self):
        self.nodes: list[tuple[Var, tuple, callable]] = []
        self._backward_done = False

    def leaf(self, value, requires_grad: bool = True) -> Var:
        v = Var(self, np.asarray(value, dtype=float), requires_grad)
        v.index = len(self.nodes)
        self.nodes.append((v, (), None))
        return v

    def const(self, value) -> Var:
        return self.leaf(value, requires_grad=False)

    def _lift(self, x) -> Var:
        if isinstance(x, Var):
            if x.tape is not self:
                raise TapeError("variable belongs to a different tape")
            return x
        return self.const(x)

    def _record(self, value, parents: tuple, vjp) -> Var:
        if self._backward_done:
            raise TapeError("tape already consumed by backward()")
        req = any(p.requires_grad for p in parents)
        out = Var(self, value, req)
        out.index = len(self.nodes)
        self.nodes.append((out, parents, vjp))
        return out

    # primitives -----------------------------------------------------------

    def add(self, a, b) -> Var:
        a, b = self._lift(a), self._lift(b)
        sa, sb = a.shape, b.shape
        return self._record(
            a.value + b.value,
            (a, b),
            lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)),
        )

    def sub(self, a, b) -> Var:
        a, b = self._lift(a), self._lift(b)
        sa, sb = a.shape, b.shape
        return self._record(
            a.value - b.value,
            (a, b),
            lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)),
        )

    def mul(self, a, b) -> Var:
        a, b = self._lift(a), self._lift(b)
        av, bv = a.value, b.value
        return self._record(
            av * bv,
            (a, b),
            lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)),
        )

    def matmul(self, a, b) -> Var:
        """(n, k) @ (k, m); the batched mat-vec used by dense layers."""
        a, b = self._lift(a), self._lift(b)
        av, bv = a.value, b.value
        if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
            raise ValueError(f"matmul shape mismatch: {av.shape} @ {bv.shape}")
        return self._record(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))

    def silu(self, a) -> Var:
        a = self._lift(a)
        x = a.value
        s = 1.0 / (1.0 + np.exp(-x))
        return self._record(x * s, (a,), lambda g: (g * (s * (1.0 + x * (1.0 - s))),))

    def tanh(self, a) -> Var:
        a = self._lift(a)
        y = np.tanh(a.value)
        return self._record(y, (a,), lambda g: (g * (1.0 - y * y),))

    def square(self, a) -> Var:
        a = self._lift(a)
        x = a.value
        return self._record(x * x, (a,), lambda g: (2.0 * g * x,))

    def sum(self, a) -> Var:
        a = self._lift(a)
        shape = a.shape
        return self._record(
            np.asarray(a.value.sum()), (a,), lambda g: (np.broadcast_to(g, shape).copy(),)
        )

    def mean(self, a) -> Var:
        a = self._lift(a)
        shape, n = a.shape, a.value.size
        return self._record(
            np.asarray(a.value.mean()),
            (a,),
            lambda g: (np.broadcast_to(g / n, shape).copy(),),
        )

    # reverse sweep ----------------------------------------------------------

    def backward(self, out: Var) -> None:
        if self._backward_done:
            raise TapeError("backward() already called on this tape")
        if out.tape is not self:
            raise TapeError("output belongs to a different tape")
        if out.value.size != 1:
            raise TapeError("backward() needs a scalar output")
        self._backward_done = True
        for node, _, _ in self.nodes:
            node.grad = None
        out.grad = np.ones_like(out.value)
        for node, parents, vjp in reversed(self.nodes[: out.index + 1]):
            if node.grad is None or vjp is None or not node.requires_grad:
                continue
            for p, g in zip(parents, vjp(node.grad)):
                if not p.requires_grad:
                    continue
                p.grad = g if p.grad is None else p.grad + g
        for node, _, _ in self.nodes:
            if node.requires_grad and node.grad is None:
                node.grad = np.zeros_like(node.value)
