"""A small reverse-mode automatic differentiation engine on numpy arrays.

Only the operations the network needs are provided. Each op returns a new
``Tensor`` that remembers its parents and a closure that pushes the output
gradient back to them; ``backward`` walks that record in reverse
topological order.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

_CHECK_FINITE = False


class ShapeError(ValueError):
    pass


@contextmanager
def checked():
    """Raise FloatingPointError as soon as any op produces NaN or Inf."""
    global _CHECK_FINITE
    old = _CHECK_FINITE
    _CHECK_FINITE = True
    try:
        yield
    finally:
        _CHECK_FINITE = old


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        label = f" {self.name}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_wrap(other)))

    def __rsub__(self, other):
        return add(_wrap(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self):
        return total(self)

    def backward(self):
        backward(self)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents, backward_fn) -> Tensor:
    if _CHECK_FINITE and not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite value produced")
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def fused(outputs: list[np.ndarray], parents, backward_fn) -> list[Tensor]:
    """Several outputs of one op; ``backward_fn`` gets every output gradient at once.

    Missing output gradients arrive as zeros. A hidden joint node sits between
    the outputs and the parents, so it runs only after all outputs are done.
    """
    parents = tuple(_wrap(p) for p in parents)
    joint = _result(np.zeros(0), parents, None)
    grads: list[np.ndarray | None] = [None] * len(outputs)

    def joint_bw(_):
        backward_fn([np.zeros_like(d) if g is None else g for g, d in zip(grads, outputs)])

    if joint.requires_grad:
        joint._backward = joint_bw
    tensors = []
    for i, data in enumerate(outputs):
        def out_bw(g, i=i):
            grads[i] = g
            joint.grad = joint.data
        tensors.append(_result(data, (joint,), out_bw))
    return tensors


def _accumulate(t: Tensor, g) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype, copy=True)
    else:
        t.grad = t.grad + g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_segments(ids: np.ndarray, n: int, length: int) -> np.ndarray:
    ids = np.asarray(ids)
    if ids.ndim != 1 or len(ids) != length:
        raise ShapeError(f"segment ids of shape {ids.shape} do not match {length} rows")
    if length and (ids.min() < 0 or ids.max() >= n):
        raise IndexError(f"segment id out of range [0, {n})")
    return ids


def _scatter_rows(x: np.ndarray, ids: np.ndarray, n: int) -> np.ndarray:
    """out[k] = sum of x[i] over i with ids[i] == k (rows may be vectors)."""
    if x.ndim == 1:
        return np.bincount(ids, weights=x, minlength=n).astype(x.dtype, copy=False)
    out = np.zeros((n,) + x.shape[1:], dtype=x.dtype)
    if len(ids) == 0:
        return out
    if not np.all(ids[1:] >= ids[:-1]):
        order = np.argsort(ids, kind="stable")
        x, ids = x[order], ids[order]
    starts = np.flatnonzero(np.r_[True, ids[1:] != ids[:-1]])
    out[ids[starts]] = np.add.reduceat(x, starts, axis=0)
    return out


def _segment_max(x: np.ndarray, ids: np.ndarray, n: int) -> np.ndarray:
    out = np.full(n, -np.inf, dtype=x.dtype)
    if len(ids) == 0:
        return out
    if np.all(ids[1:] >= ids[:-1]):
        xs, ss = x, ids
    else:
        order = np.argsort(ids, kind="stable")
        xs, ss = x[order], ids[order]
    starts = np.flatnonzero(np.r_[True, ss[1:] != ss[:-1]])
    out[ss[starts]] = np.maximum.reduceat(xs, starts)
    return out


# --- primitives -----------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)

    def bw(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _result(a.data + b.data, (a, b), bw)


def neg(a) -> Tensor:
    a = _wrap(a)
    return _result(-a.data, (a,), lambda g: _accumulate(a, -g))


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)

    def bw(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _result(a.data * b.data, (a, b), bw)


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 2 or b.data.ndim not in (1, 2) or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul of {a.shape} and {b.shape}")

    def bw(g):
        if a.requires_grad:
            _accumulate(a, np.outer(g, b.data) if b.data.ndim == 1 else g @ b.data.T)
        if b.requires_grad:
            _accumulate(b, a.data.T @ g)

    return _result(a.data @ b.data, (a, b), bw)


def relu(a) -> Tensor:
    a = _wrap(a)
    mask = a.data > 0
    return _result(a.data * mask, (a,), lambda g: _accumulate(a, g * mask))


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = _wrap(a)
    scale = np.where(a.data > 0, 1.0, slope).astype(a.data.dtype)
    return _result(a.data * scale, (a,), lambda g: _accumulate(a, g * scale))


def tanh(a) -> Tensor:
    a = _wrap(a)
    y = np.tanh(a.data)
    return _result(y, (a,), lambda g: _accumulate(a, g * (1 - y * y)))


def exp(a) -> Tensor:
    a = _wrap(a)
    y = np.exp(a.data)
    return _result(y, (a,), lambda g: _accumulate(a, g * y))


def log(a) -> Tensor:
    a = _wrap(a)
    return _result(np.log(a.data), (a,), lambda g: _accumulate(a, g / a.data))


def total(a) -> Tensor:
    a = _wrap(a)
    return _result(np.asarray(a.data.sum()), (a,), lambda g: _accumulate(a, np.broadcast_to(g, a.shape)))


def mean(a) -> Tensor:
    a = _wrap(a)
    n = a.data.size
    return _result(np.asarray(a.data.mean()), (a,), lambda g: _accumulate(a, np.broadcast_to(g / n, a.shape)))


def reshape(a, shape) -> Tensor:
    a = _wrap(a)
    return _result(a.data.reshape(shape), (a,), lambda g: _accumulate(a, g.reshape(a.shape)))


def gather(a, index) -> Tensor:
    """Rows ``a[index]``; the adjoint of scatter_add."""
    a = _wrap(a)
    index = np.asarray(index)
    if len(index) and (index.min() < 0 or index.max() >= a.shape[0]):
        raise IndexError("gather index out of range")
    return _result(a.data[index], (a,), lambda g: _accumulate(a, _scatter_rows(g, index, a.shape[0])))


def scatter_add(a, index, size: int) -> Tensor:
    """``out[k] = sum(a[i] for i where index[i] == k)`` with ``size`` output rows."""
    a = _wrap(a)
    index = _check_segments(index, size, a.shape[0])
    return _result(_scatter_rows(a.data, index, size), (a,), lambda g: _accumulate(a, g[index]))


def segment_sum(a, segment_ids, num_segments: int) -> Tensor:
    return scatter_add(a, segment_ids, num_segments)


def segment_softmax(a, segment_ids, num_segments: int) -> Tensor:
    """Softmax of a 1-d tensor computed independently inside each segment.

    Entries equal to -inf get probability 0; every segment that is used must
    contain at least one finite entry.
    """
    a = _wrap(a)
    if a.data.ndim != 1:
        raise ShapeError("segment_softmax expects a vector")
    ids = _check_segments(segment_ids, num_segments, a.shape[0])
    peak = _segment_max(a.data, ids, num_segments)
    e = np.exp(a.data - peak[ids])
    denom = _scatter_rows(e, ids, num_segments)
    y = e / denom[ids]

    def bw(g):
        inner = _scatter_rows(g * y, ids, num_segments)
        _accumulate(a, y * (g - inner[ids]))

    return _result(y, (a,), bw)


class BatchNormState:
    """Running statistics for one batch-norm layer (mutated only in training)."""

    def __init__(self, channels: int, dtype=np.float32):
        self.mean = np.zeros(channels, dtype=dtype)
        self.var = np.ones(channels, dtype=dtype)


def batch_norm(x, gamma, beta, state: BatchNormState, training: bool,
               momentum: float = 0.9, eps: float = 1e-5, relu: bool = False) -> Tensor:
    """Per-channel normalisation over all rows of ``x`` (one row per node or edge).

    ``relu=True`` fuses a following ReLU. The backward pass recomputes the
    normalised input, so only the output is held.
    """
    x, gamma, beta = _wrap(x), _wrap(gamma), _wrap(beta)
    if x.data.ndim != 2 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ShapeError(f"batch_norm of {x.shape} with affine {gamma.shape}/{beta.shape}")
    if training:
        mu = x.data.mean(axis=0)
        var = x.data.var(axis=0)
        state.mean[...] = momentum * state.mean + (1 - momentum) * mu
        state.var[...] = momentum * state.var + (1 - momentum) * var
    else:
        mu, var = state.mean, state.var
    inv = 1.0 / np.sqrt(var + eps)
    scale = gamma.data * inv
    y = (x.data * scale + (beta.data - mu * scale)).astype(x.data.dtype, copy=False)
    if relu:
        np.maximum(y, 0, out=y)
    if not (x.requires_grad or gamma.requires_grad or beta.requires_grad):
        return Tensor(y)

    def bw(g):
        if relu:
            g = g * (y > 0)
        xhat = (x.data - mu) * inv
        _accumulate(gamma, (g * xhat).sum(axis=0))
        _accumulate(beta, g.sum(axis=0))
        if x.requires_grad:
            gx = g * gamma.data
            if training:
                m = x.shape[0]
                gx = inv / m * (m * gx - gx.sum(axis=0) - xhat * (gx * xhat).sum(axis=0))
            else:
                gx = gx * inv
            _accumulate(x, gx)

    return _result(y, (x, gamma, beta), bw)


# --- backward pass ------------------------------------------------------------


def _topological(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
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
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every tensor requiring grad."""
    if loss.data.size != 1:
        raise ShapeError(f"loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    loss.grad = np.ones_like(loss.data)
    order = _topological(loss)
    while order:
        node = order.pop()
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
        if node._parents:
            # interior nodes are done: drop their gradient and saved closure state
            node.grad = None
            node._backward = None
            node._parents = ()


def grad(loss: Tensor, params: list[Tensor]) -> list[np.ndarray]:
    """Gradients of ``loss`` for ``params``; zeros where a parameter is unused."""
    for p in params:
        p.grad = None
    backward(loss)
    return [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
