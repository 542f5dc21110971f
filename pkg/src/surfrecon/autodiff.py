"""Minimal tape-based reverse-mode differentiation over numpy arrays.

Only the handful of operations the classifier needs are provided. Every op
records a closure that maps the output gradient to input gradients; the tape
replays them in reverse creation order.
"""

from __future__ import annotations

from typing import Callable

import numpy as np
import scipy.sparse as sp

from .errors import ShapeMismatch


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-stable dense product.

    OpenBLAS switches to a gemv kernel for single-row inputs whose rounding
    differs from gemm, so one-row products are computed as two-row ones.
    """
    if a.ndim == 2 and a.shape[0] == 1:
        return np.matmul(np.vstack([a, a]), b)[:1]
    return np.matmul(a, b)


class Var:
    __slots__ = ("value", "grad", "_back", "_parents", "requires_grad", "_id")

    def __init__(self, value: np.ndarray, parents=(), back: Callable | None = None,
                 requires_grad: bool = False):
        self.value = value
        self.grad = None
        self._parents = parents
        self._back = back
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._id = 0

    @property
    def shape(self):
        return self.value.shape


class Tape:
    def __init__(self):
        self.nodes: list[Var] = []

    def leaf(self, value: np.ndarray, requires_grad: bool = True) -> Var:
        v = Var(value, requires_grad=requires_grad)
        self._push(v)
        return v

    def _push(self, v: Var) -> Var:
        v._id = len(self.nodes)
        self.nodes.append(v)
        return v

    def op(self, value, parents, back) -> Var:
        return self._push(Var(value, tuple(parents), back))

    def backward(self, out: Var, seed: np.ndarray | float = 1.0) -> None:
        out.grad = np.broadcast_to(np.asarray(seed, dtype=out.value.dtype), out.value.shape).copy()
        for node in reversed(self.nodes[: out._id + 1]):
            if node.grad is None or node._back is None or not node.requires_grad:
                continue
            grads = node._back(node.grad)
            for parent, g in zip(node._parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g

    # -- operations ---------------------------------------------------------

    def affine(self, x: Var, w: Var, b: Var) -> Var:
        if x.value.shape[1] != w.value.shape[0] or b.value.shape != (w.value.shape[1],):
            raise ShapeMismatch(f"affine: input {x.value.shape}, weight {w.value.shape}, "
                                f"bias {b.value.shape}")
        xv, wv = x.value, w.value

        def back(g):
            return matmul(g, wv.T), matmul(xv.T, g), g.sum(axis=0)

        return self.op(matmul(xv, wv) + b.value, (x, w, b), back)

    def spmm(self, m: sp.csr_matrix, x: Var) -> Var:
        """Constant sparse matrix times a dense variable."""
        if m.shape[1] != x.value.shape[0]:
            raise ShapeMismatch(f"sparse operand {m.shape} vs input {x.value.shape}")
        mt = None

        def back(g):
            nonlocal mt
            if mt is None:
                mt = m.T.tocsr()
            return (np.asarray(mt @ g),)

        return self.op(np.asarray(m @ x.value), (x,), back)

    def reshape(self, x: Var, shape) -> Var:
        old = x.value.shape
        return self.op(x.value.reshape(shape), (x,), lambda g: (g.reshape(old),))

    def concat(self, xs: list[Var]) -> Var:
        widths = [x.value.shape[1] for x in xs]
        cuts = np.cumsum(widths)[:-1]
        return self.op(np.concatenate([x.value for x in xs], axis=1), tuple(xs),
                       lambda g: tuple(np.split(g, cuts, axis=1)))

    def leaky_relu(self, x: Var, slope: float) -> Var:
        xv = x.value
        s = np.asarray(slope, dtype=xv.dtype)
        pos = xv > 0
        return self.op(np.where(pos, xv, xv * s), (x,), lambda g: (np.where(pos, g, g * s),))

    def bce_with_logits(self, z: Var, labels: np.ndarray) -> Var:
        """Mean binary cross-entropy of sigmoid(z) against {0,1} labels."""
        zv = z.value.reshape(-1)
        y = np.asarray(labels, dtype=zv.dtype).reshape(-1)
        if len(y) != len(zv):
            raise ShapeMismatch(f"{len(zv)} logits vs {len(y)} labels")
        loss = np.mean(np.logaddexp(0, zv) - y * zv)
        shape = z.value.shape

        def back(g):
            p = sigmoid(zv)
            return ((g * (p - y) / len(y)).reshape(shape).astype(zv.dtype),)

        return self.op(np.asarray(loss, dtype=zv.dtype), (z,), back)


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out
