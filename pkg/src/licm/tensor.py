"""Dense float64 tensors with reverse-mode automatic differentiation.

Everything downstream (encoders, fusion gate, loss) is built on this class.
Buffers are numpy float64 arrays; an op never mutates its inputs and always
returns a fresh node wired into the backward graph. Shapes broadcast like
numpy; gradients are un-broadcast back to each operand's shape.
"""

from __future__ import annotations

import numpy as np


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """n-dimensional float64 array with optional gradient tracking."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _result(data, parents, backward):
        out = Tensor(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    @staticmethod
    def as_tensor(x):
        return x if isinstance(x, Tensor) else Tensor(x)

    # -- basic introspection --------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(()))

    def numpy(self):
        """Detached copy of the underlying buffer."""
        return self.data.copy()

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- autodiff engine ------------------------------------------------------

    def _accumulate(self, grad):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def backward(self, grad=None):
        """Backpropagate from this node into every reachable parameter."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError(f"backward() without a seed gradient needs a scalar, got shape {self.data.shape}")
            grad = np.ones_like(self.data)
        if not self.requires_grad:
            raise ValueError("backward() on a tensor that does not require grad")

        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        self._accumulate(np.asarray(grad, dtype=np.float64).reshape(self.data.shape))
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)

    # -- arithmetic -----------------------------------------------------------

    def __add__(self, other):
        other = Tensor.as_tensor(other)
        out_data = self.data + other.data

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.data.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g, other.data.shape))

        return Tensor._result(out_data, (self, other), backward)

    __radd__ = __add__

    def __neg__(self):
        def backward(g):
            self._accumulate(-g)

        return Tensor._result(-self.data, (self,), backward)

    def __sub__(self, other):
        return self + (-Tensor.as_tensor(other))

    def __rsub__(self, other):
        return Tensor.as_tensor(other) + (-self)

    def __mul__(self, other):
        other = Tensor.as_tensor(other)
        out_data = self.data * other.data

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g * other.data, self.data.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g * self.data, other.data.shape))

        return Tensor._result(out_data, (self, other), backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = Tensor.as_tensor(other)
        out_data = self.data / other.data

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g / other.data, self.data.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(-g * self.data / (other.data * other.data), other.data.shape))

        return Tensor._result(out_data, (self, other), backward)

    def __rtruediv__(self, other):
        return Tensor.as_tensor(other) / self

    def __matmul__(self, other):
        return matmul(self, other)

    # -- elementwise functions ------------------------------------------------

    def tanh(self):
        y = np.tanh(self.data)

        def backward(g):
            self._accumulate(g * (1.0 - y * y))

        return Tensor._result(y, (self,), backward)

    def sigmoid(self):
        x = self.data
        y = np.empty_like(x)
        pos = x >= 0
        y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        y[~pos] = ex / (1.0 + ex)

        def backward(g):
            self._accumulate(g * y * (1.0 - y))

        return Tensor._result(y, (self,), backward)

    def exp(self):
        y = np.exp(self.data)

        def backward(g):
            self._accumulate(g * y)

        return Tensor._result(y, (self,), backward)

    def log(self):
        def backward(g):
            self._accumulate(g / self.data)

        return Tensor._result(np.log(self.data), (self,), backward)

    # -- reductions -----------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        out_data = self.data.sum(axis=axis, keepdims=keepdims)
        in_shape = self.data.shape

        def backward(g):
            if axis is None:
                self._accumulate(np.broadcast_to(g, in_shape).copy() if np.ndim(g) else np.full(in_shape, g))
                return
            gg = g
            if not keepdims:
                axes = axis if isinstance(axis, tuple) else (axis,)
                for ax in sorted(a % len(in_shape) for a in axes):
                    gg = np.expand_dims(gg, ax)
            self._accumulate(np.broadcast_to(gg, in_shape).copy())

        return Tensor._result(out_data, (self,), backward)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else np.prod(
            [self.data.shape[a] for a in (axis if isinstance(axis, tuple) else (axis,))]
        )
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(n))

    # -- shape manipulation ---------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        in_shape = self.data.shape

        def backward(g):
            self._accumulate(g.reshape(in_shape))

        return Tensor._result(self.data.reshape(shape), (self,), backward)

    def swapaxes(self, a, b):
        def backward(g):
            self._accumulate(g.swapaxes(a, b))

        return Tensor._result(self.data.swapaxes(a, b), (self,), backward)

    def transpose(self, axes=None):
        if axes is None:
            axes = tuple(reversed(range(self.data.ndim)))
        inv = np.argsort(axes)

        def backward(g):
            self._accumulate(g.transpose(inv))

        return Tensor._result(self.data.transpose(axes), (self,), backward)

    @property
    def T(self):
        return self.transpose()

    def __getitem__(self, key):
        out_data = self.data[key]
        in_shape = self.data.shape

        def backward(g):
            full = np.zeros(in_shape)
            np.add.at(full, key, g)
            self._accumulate(full)

        return Tensor._result(out_data.copy(), (self,), backward)


# -- free functions -----------------------------------------------------------


def matmul(a, b):
    """Matrix product with numpy batch semantics; operands must be >= 2-d."""
    a = Tensor.as_tensor(a)
    b = Tensor.as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul needs >=2-d operands, got shapes {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    out_data = np.matmul(a.data, b.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(np.matmul(g, b.data.swapaxes(-1, -2)), a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(np.matmul(a.data.swapaxes(-1, -2), g), b.data.shape))

    return Tensor._result(out_data, (a, b), backward)


def concat(tensors, axis=0):
    tensors = [Tensor.as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            if t.requires_grad:
                t._accumulate(piece)

    return Tensor._result(out_data, tuple(tensors), backward)


def stack(tensors, axis=0):
    tensors = [Tensor.as_tensor(t) for t in tensors]
    out_data = np.stack([t.data for t in tensors], axis=axis)

    def backward(g):
        for i, t in enumerate(tensors):
            if t.requires_grad:
                t._accumulate(np.take(g, i, axis=axis))

    return Tensor._result(out_data, tuple(tensors), backward)


def take_rows(table, idx):
    """Gather rows of a [V, d] table by an integer index array.

    Output shape is idx.shape + (d,). Gradients scatter-add back into the
    table, so repeated indices accumulate.
    """
    table = Tensor.as_tensor(table)
    idx = np.asarray(idx)
    if not np.issubdtype(idx.dtype, np.integer):
        raise ValueError(f"take_rows needs integer indices, got dtype {idx.dtype}")
    out_data = table.data[idx]

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, idx, g)
        table._accumulate(full)

    return Tensor._result(out_data, (table,), backward)


def spmm(adj, x):
    """Sparse constant matrix times dense tensor: adj @ x.

    `adj` is a scipy sparse matrix treated as a constant (no gradient);
    gradients flow to `x` only.
    """
    x = Tensor.as_tensor(x)
    out_data = np.asarray(adj @ x.data)
    adj_t = adj.T.tocsr()

    def backward(g):
        x._accumulate(np.asarray(adj_t @ g))

    return Tensor._result(out_data, (x,), backward)


def softmax(x, axis=-1):
    """Numerically stabilized softmax along `axis`."""
    x = Tensor.as_tensor(x)
    if x.shape[axis] == 0:
        raise ValueError(f"softmax over an empty axis {axis} of shape {x.shape}")
    shift = x.data.max(axis=axis, keepdims=True)
    e = (x - shift).exp()
    return e / e.sum(axis=axis, keepdims=True)


def masked_softmax(x, mask, axis=-1):
    """Softmax along `axis` restricted to positions where mask is nonzero.

    Masked positions get weight exactly 0. Rows with no unmasked position
    come out all-zero (callers decide whether that is an error).
    """
    x = Tensor.as_tensor(x)
    m = np.asarray(mask, dtype=np.float64)
    m = np.broadcast_to(m, x.shape)
    # Shift by the per-row max over unmasked entries so exp never overflows;
    # masked entries are pinned to the shift value before exp.
    masked_data = np.where(m > 0, x.data, -np.inf)
    shift = masked_data.max(axis=axis, keepdims=True)
    shift = np.where(np.isfinite(shift), shift, 0.0)
    pinned = x * m + (1.0 - m) * shift
    e = (pinned - shift).exp() * m
    denom = e.sum(axis=axis, keepdims=True)
    safe = np.where(denom.data == 0.0, 1.0, 0.0)
    return e / (denom + safe)


def logsumexp(x, axis=-1, keepdims=False):
    """log(sum(exp(x))) along `axis`, max-shifted for stability."""
    x = Tensor.as_tensor(x)
    shift = x.data.max(axis=axis, keepdims=True)
    out = (x - shift).exp().sum(axis=axis, keepdims=True).log() + shift
    if not keepdims:
        out = out.reshape(tuple(s for i, s in enumerate(out.shape) if i != (axis % len(out.shape))))
    return out


def dropout(x, rate, rng, training):
    """Inverted dropout; identity when not training or rate == 0."""
    if not training or rate <= 0.0:
        return x
    keep = 1.0 - rate
    mask = (rng.random(x.shape) < keep).astype(np.float64) / keep
    return x * mask
