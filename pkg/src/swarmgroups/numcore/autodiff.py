"""Reverse-mode differentiation over a fixed set of dense primitives.

Every op accepts plain arrays or :class:`Node` objects. With no ``Node``
among the inputs the op just computes the value, so the same model code
serves inference (arrays) and training (nodes recorded on a :class:`Tape`).
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..errors import ContractError
from .eigen import sym_eigen
from .matrix import softmax_rows as _softmax_rows


class Tape:
    """Ordered record of nodes; index order is a valid topological order."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.params: dict[str, Node] = {}

    def param(self, name: str, value) -> "Node":
        if name in self.params:
            raise ContractError(f"parameter {name!r} registered twice")
        node = Node(self, np.asarray(value, dtype=np.float64), (), None, name=name)
        self.params[name] = node
        return node

    def const(self, value) -> "Node":
        return Node(self, np.asarray(value, dtype=np.float64), (), None)

    def __len__(self):
        return len(self.nodes)


class Node:
    __slots__ = ("tape", "value", "parents", "backward", "name", "index")
    # make numpy defer to the reflected operators (ndarray @ Node etc.)
    __array_ufunc__ = None

    def __init__(self, tape: Tape, value: np.ndarray, parents: tuple, backward: Callable | None, name=None):
        self.tape = tape
        self.value = value
        self.parents = parents
        self.backward = backward
        self.name = name
        self.index = len(tape.nodes)
        tape.nodes.append(self)

    @property
    def shape(self):
        return self.value.shape

    @property
    def T(self):
        return transpose(self)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Node#{self.index}{label} shape={self.value.shape}"


def value(x) -> np.ndarray:
    return x.value if isinstance(x, Node) else np.asarray(x, dtype=np.float64)


def _tape_of(xs: Sequence) -> Tape | None:
    for x in xs:
        if isinstance(x, Node):
            return x.tape
    return None


def _op(out: np.ndarray, inputs: Sequence, backward: Callable):
    """Record ``out`` on the inputs' tape, or return the bare value."""
    tape = _tape_of(inputs)
    if tape is None:
        return out
    return Node(tape, out, tuple(inputs), backward)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# -- elementwise arithmetic -------------------------------------------------

def add(a, b):
    va, vb = value(a), value(b)
    return _op(va + vb, (a, b), lambda g: (_unbroadcast(g, va.shape), _unbroadcast(g, vb.shape)))


def sub(a, b):
    va, vb = value(a), value(b)
    return _op(va - vb, (a, b), lambda g: (_unbroadcast(g, va.shape), -_unbroadcast(g, vb.shape)))


def mul(a, b):
    va, vb = value(a), value(b)
    return _op(va * vb, (a, b), lambda g: (_unbroadcast(g * vb, va.shape), _unbroadcast(g * va, vb.shape)))


def div(a, b):
    va, vb = value(a), value(b)
    out = va / vb
    return _op(out, (a, b), lambda g: (_unbroadcast(g / vb, va.shape), _unbroadcast(-g * out / vb, vb.shape)))


def square(a):
    va = value(a)
    return _op(va * va, (a,), lambda g: (2.0 * g * va,))


def exp(a):
    out = np.exp(value(a))
    return _op(out, (a,), lambda g: (g * out,))


def log(a):
    va = value(a)
    return _op(np.log(va), (a,), lambda g: (g / va,))


def xlogx(a):
    """x·log x elementwise with 0·log 0 = 0."""
    va = value(a)
    pos = va > 0
    safe = np.where(pos, va, 1.0)
    out = np.where(pos, va * np.log(safe), 0.0)
    return _op(out, (a,), lambda g: (np.where(pos, g * (np.log(safe) + 1.0), 0.0),))


def tanh(a):
    out = np.tanh(value(a))
    return _op(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a):
    va = value(a)
    out = np.where(va >= 0, 1.0 / (1.0 + np.exp(-np.abs(va))), np.exp(-np.abs(va)) / (1.0 + np.exp(-np.abs(va))))
    return _op(out, (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a):
    va = value(a)
    out = np.logaddexp(0.0, va)
    sig = np.exp(va - out)
    return _op(out, (a,), lambda g: (g * sig,))


def stop_gradient(a):
    """Value passes through; no adjoint flows back."""
    return value(a).copy()


# -- linear algebra ---------------------------------------------------------

def matmul(a, b):
    va, vb = value(a), value(b)
    return _op(va @ vb, (a, b), lambda g: (g @ vb.T, va.T @ g))


def transpose(a):
    va = value(a)
    return _op(va.T.copy(), (a,), lambda g: (g.T,))


def concat_cols(parts: Sequence):
    vals = [value(p) for p in parts]
    widths = np.cumsum([0] + [v.shape[1] for v in vals])
    out = np.concatenate(vals, axis=1)

    def back(g):
        return tuple(g[:, widths[i]:widths[i + 1]] for i in range(len(vals)))

    return _op(out, tuple(parts), back)


def block(a, r0: int, r1: int, c0: int, c1: int):
    """Sub-matrix a[r0:r1, c0:c1]."""
    va = value(a)

    def back(g):
        full = np.zeros_like(va)
        full[r0:r1, c0:c1] = g
        return (full,)

    return _op(va[r0:r1, c0:c1].copy(), (a,), back)


# -- reductions -------------------------------------------------------------

def sum_all(a):
    va = value(a)
    return _op(np.array(va.sum()), (a,), lambda g: (np.full_like(va, float(g)),))


def mean_all(a):
    va = value(a)
    n = va.size
    return _op(np.array(va.mean()), (a,), lambda g: (np.full_like(va, float(g) / n),))


def row_sum(a):
    va = value(a)
    return _op(va.sum(axis=1, keepdims=True), (a,), lambda g: (np.broadcast_to(g, va.shape).copy(),))


def minimum(scalars: Sequence):
    """Smallest of several scalar nodes; the adjoint goes to the first minimizer."""
    vals = [float(value(s)) for s in scalars]
    k = int(np.argmin(vals))

    def back(g):
        return tuple(g if i == k else np.zeros_like(g) for i in range(len(vals)))

    return _op(np.array(vals[k]), tuple(scalars), back)


# -- composite primitives ---------------------------------------------------

def softmax_rows(a):
    out = _softmax_rows(value(a))

    def back(g):
        return (out * (g - np.sum(g * out, axis=1, keepdims=True)),)

    return _op(out, (a,), back)


def layer_norm(a, eps: float = 1e-5):
    """Normalize each row to zero mean and unit variance (no affine part)."""
    va = value(a)
    mu = va.mean(axis=1, keepdims=True)
    xc = va - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=1, keepdims=True) + eps)
    out = xc * inv

    def back(g):
        gm = g.mean(axis=1, keepdims=True)
        gx = (g * out).mean(axis=1, keepdims=True)
        return (inv * (g - gm - out * gx),)

    return _op(out, (a,), back)


def psd_penalty(a):
    """Σ max(0, −λ_i)² over eigenvalues of the symmetrized input.

    Eigenvectors are held fixed in the backward pass, which gives the exact
    derivative when the negative eigenvalues are simple.
    """
    va = value(a)
    try:
        # positive definite: no negative eigenvalues, penalty and adjoint are 0
        np.linalg.cholesky(0.5 * (va + va.T))
        return _op(np.array(0.0), (a,), lambda g: (np.zeros_like(va),))
    except np.linalg.LinAlgError:
        pass
    w, v = sym_eigen(va)
    neg = np.minimum(w, 0.0)
    out = np.array(np.sum(neg * neg))

    def back(g):
        gs = (v * (2.0 * neg)) @ v.T
        # d/dA of f((A+A^T)/2) splits evenly between A and A^T
        return (float(g) * 0.5 * (gs + gs.T),)

    return _op(out, (a,), back)


# -- reverse sweep ----------------------------------------------------------

def grad(tape: Tape, loss: Node, wrt: Sequence[str] | None = None) -> dict[str, np.ndarray]:
    """Adjoints of a scalar ``loss`` w.r.t. every registered parameter."""
    if not isinstance(loss, Node) or loss.tape is not tape:
        raise ContractError("loss must be a node recorded on this tape")
    if loss.value.size != 1:
        raise ContractError(f"loss must be scalar, got shape {loss.value.shape}")
    adj: dict[int, np.ndarray] = {loss.index: np.ones_like(loss.value)}
    for node in reversed(tape.nodes[: loss.index + 1]):
        g = adj.pop(node.index, None)
        if g is None or node.backward is None:
            if g is not None and node.name is not None:
                adj[node.index] = g
            continue
        for parent, pg in zip(node.parents, node.backward(g)):
            if not isinstance(parent, Node):
                continue
            if parent.index in adj:
                adj[parent.index] = adj[parent.index] + pg
            else:
                adj[parent.index] = np.asarray(pg, dtype=np.float64).reshape(parent.value.shape)
    names = wrt if wrt is not None else list(tape.params)
    out = {}
    for name in names:
        node = tape.params[name]
        out[name] = adj.get(node.index, np.zeros_like(node.value)).reshape(node.value.shape)
    return out
