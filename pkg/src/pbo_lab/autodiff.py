"""Minimal reverse-mode differentiation engine on float64 numpy buffers.

Every intermediate result is a :class:`Tensor` recorded on an implicit tape
(creation order is topological order, since operands must exist before the
node that consumes them). ``backward`` walks the tape in reverse from a
scalar loss and accumulates adjoints into ``Tensor.grad``. Nodes that are
unreachable from the loss keep their zero-initialized adjoint, which makes
gradient-blocking contracts directly assertable.

The op set is sized for small fully-connected networks and the operator
losses built on top of them; there is no GPU path and no dynamic shape
support. All arithmetic is float64.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Tensor",
    "ParamLayout",
    "backward",
    "grad",
    "grad_check",
    "as_tensor",
    "stop_gradient",
    "relu",
    "square",
    "exp",
    "reciprocal",
    "matmul",
    "tsum",
    "tmean",
    "tmax",
    "take",
    "slice_last",
    "reshape",
    "concat",
    "transpose_last2",
    "linear_solve",
    "value_of",
    "truncated_normal",
]


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum an upstream gradient down to the shape of a broadcast operand."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


class Tensor:
    """One tape node: a value buffer, an adjoint buffer, and parent links."""

    __slots__ = ("value", "_grad", "_parents", "_id", "_split_cache")

    # make numpy defer to the reflected operators instead of broadcasting
    __array_ufunc__ = None

    _ids = itertools.count()

    def __init__(self, value, parents=()):
        self.value = np.asarray(value, dtype=np.float64)
        self._grad = None  # allocated lazily; None means "all zeros"
        self._parents = parents  # tuple of (Tensor, vjp) pairs
        self._id = next(Tensor._ids)
        self._split_cache = None  # layout splits, reused across operator applications

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            self._grad = np.zeros_like(self.value)
        return self._grad

    @grad.setter
    def grad(self, value):
        self._grad = value

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(shape={self.value.shape}, id={self._id})"

    # -- arithmetic ----------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        out = Tensor(
            self.value + other.value,
            (
                (self, lambda g: _unbroadcast(g, self.value.shape)),
                (other, lambda g: _unbroadcast(g, other.value.shape)),
            ),
        )
        return out

    __radd__ = __add__

    def __neg__(self):
        return Tensor(-self.value, ((self, lambda g: -g),))

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        other = as_tensor(other)
        a, b = self.value, other.value
        return Tensor(
            a * b,
            (
                (self, lambda g: _unbroadcast(g * b, a.shape)),
                (other, lambda g: _unbroadcast(g * a, b.shape)),
            ),
        )

    __rmul__ = __mul__

    def __truediv__(self, const):
        if isinstance(const, Tensor):
            raise TypeError("division is supported by constants only")
        return self * (1.0 / const)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def value_of(x) -> np.ndarray:
    """Plain float64 ndarray view of a Tensor or array-like."""
    if isinstance(x, Tensor):
        return x.value
    return np.asarray(x, dtype=np.float64)


def _is_tensor(*xs) -> bool:
    return any(isinstance(x, Tensor) for x in xs)


# -- primitive ops (each works on Tensors or plain arrays) -------------


def stop_gradient(x):
    """Forward the value, block all adjoint flow."""
    if isinstance(x, Tensor):
        return Tensor(x.value.copy())
    return np.asarray(x, dtype=np.float64)


def relu(x):
    if not _is_tensor(x):
        return np.maximum(x, 0.0)
    x = as_tensor(x)
    mask = x.value > 0  # derivative at exactly 0 is 0
    return Tensor(x.value * mask, ((x, lambda g: g * mask),))


def square(x):
    if not _is_tensor(x):
        return np.square(x)
    x = as_tensor(x)
    return Tensor(np.square(x.value), ((x, lambda g: g * (2.0 * x.value)),))


def exp(x):
    if not _is_tensor(x):
        return np.exp(x)
    x = as_tensor(x)
    out_val = np.exp(x.value)
    return Tensor(out_val, ((x, lambda g: g * out_val),))


def reciprocal(x):
    if not _is_tensor(x):
        return 1.0 / np.asarray(x, dtype=np.float64)
    x = as_tensor(x)
    inv = 1.0 / x.value
    return Tensor(inv, ((x, lambda g: -g * inv * inv),))


def matmul(a, b):
    if not _is_tensor(a, b):
        return np.matmul(a, b)
    a, b = as_tensor(a), as_tensor(b)
    if a.value.ndim < 2 or b.value.ndim < 2:
        raise ValueError("matmul requires operands with ndim >= 2")
    av, bv = a.value, b.value
    return Tensor(
        np.matmul(av, bv),
        (
            (a, lambda g: _unbroadcast(np.matmul(g, bv.swapaxes(-1, -2)), av.shape)),
            (b, lambda g: _unbroadcast(np.matmul(av.swapaxes(-1, -2), g), bv.shape)),
        ),
    )


def tsum(x, axis=None, keepdims=False):
    if not _is_tensor(x):
        return np.sum(x, axis=axis, keepdims=keepdims)
    x = as_tensor(x)
    xv = x.value

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, xv.shape).copy()
        gg = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(gg, xv.shape).copy()

    return Tensor(np.sum(xv, axis=axis, keepdims=keepdims), ((x, vjp),))


def tmean(x, axis=None, keepdims=False):
    if not _is_tensor(x):
        return np.mean(x, axis=axis, keepdims=keepdims)
    x = as_tensor(x)
    n = x.value.size if axis is None else x.value.shape[axis]
    return tsum(x, axis=axis, keepdims=keepdims) / n


def tmax(x, axis):
    """Max over one axis; the adjoint flows to the argmax only (ties: lowest index)."""
    if not _is_tensor(x):
        return np.max(x, axis=axis)
    x = as_tensor(x)
    xv = x.value
    idx = np.argmax(xv, axis=axis)

    def vjp(g):
        out = np.zeros_like(xv)
        np.put_along_axis(
            out, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis
        )
        return out

    return Tensor(np.take_along_axis(xv, np.expand_dims(idx, axis), axis).squeeze(axis), ((x, vjp),))


def take(x, indices, axis):
    indices = np.asarray(indices)
    if not _is_tensor(x):
        return np.take(x, indices, axis=axis)
    x = as_tensor(x)
    xv = x.value

    def vjp(g):
        out = np.zeros_like(xv)
        moved = np.moveaxis(out, axis, 0)
        np.add.at(moved, indices, np.moveaxis(g, axis, 0))
        return out

    return Tensor(np.take(xv, indices, axis=axis), ((x, vjp),))


def slice_last(x, start: int, stop: int):
    """Contiguous slice along the last axis; cheaper than ``take`` for ranges."""
    if not _is_tensor(x):
        return np.asarray(x)[..., start:stop]
    x = as_tensor(x)
    xv = x.value

    def vjp(g):
        out = np.zeros_like(xv)
        out[..., start:stop] = g
        return out

    return Tensor(xv[..., start:stop], ((x, vjp),))


def reshape(x, shape):
    if not _is_tensor(x):
        return np.reshape(x, shape)
    x = as_tensor(x)
    old = x.value.shape
    return Tensor(x.value.reshape(shape), ((x, lambda g: g.reshape(old)),))


def transpose_last2(x):
    if not _is_tensor(x):
        return np.swapaxes(x, -1, -2)
    x = as_tensor(x)
    return Tensor(x.value.swapaxes(-1, -2), ((x, lambda g: g.swapaxes(-1, -2)),))


def concat(parts, axis):
    if not _is_tensor(*parts):
        return np.concatenate(parts, axis=axis)
    parts = [as_tensor(p) for p in parts]
    sizes = [p.value.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def make_vjp(i):
        sl = [slice(None)] * parts[i].value.ndim
        sl[axis] = slice(offsets[i], offsets[i + 1])
        return lambda g: g[tuple(sl)]

    return Tensor(
        np.concatenate([p.value for p in parts], axis=axis),
        tuple((p, make_vjp(i)) for i, p in enumerate(parts)),
    )


def linear_solve(a, b):
    """Solve ``a @ x = b`` for a square ``a`` and 1-d ``b``.

    Differentiable in both operands through the implicit relation:
    with ``u`` solving ``a^T u = g``, the adjoints are ``g_b = u`` and
    ``g_a = -outer(u, x)``.
    """
    if not _is_tensor(a, b):
        return np.linalg.solve(a, np.asarray(b, dtype=np.float64))
    a, b = as_tensor(a), as_tensor(b)
    if b.value.ndim != 1:
        raise ValueError("linear_solve expects a 1-d right-hand side")
    x = np.linalg.solve(a.value, b.value)
    at = a.value.T

    def vjp_a(g):
        u = np.linalg.solve(at, g)
        return -np.outer(u, x)

    def vjp_b(g):
        return np.linalg.solve(at, g)

    return Tensor(x, ((a, vjp_a), (b, vjp_b)))


# -- backward pass ------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Accumulate dloss/dnode into ``grad`` for every node reachable from ``loss``.

    The loss must be scalar. Adjoints of nodes that are not ancestors of the
    loss (in particular anything behind a stop-gradient) are left at zero.
    """
    if loss.value.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.value.shape}")
    reachable = {}
    stack = [loss]
    while stack:
        node = stack.pop()
        if node._id in reachable:
            continue
        reachable[node._id] = node
        stack.extend(parent for parent, _ in node._parents)
    loss.grad = np.ones_like(loss.value)
    for node in sorted(reachable.values(), key=lambda n: n._id, reverse=True):
        g = node._grad
        if g is None:
            continue
        for parent, vjp in node._parents:
            out = vjp(g)
            if parent._grad is None:
                # adopt fresh buffers, copy anything aliasing the child's grad
                out = np.asarray(out)
                if out is g or out.base is not None:
                    out = out.copy()
                parent._grad = out
            else:
                np.add(parent._grad, out, out=parent._grad)


def grad(loss: Tensor, wrt) -> list[np.ndarray]:
    """Run backward and return a copy of the adjoints of ``wrt`` tensors."""
    backward(loss)
    return [w.grad.copy() for w in wrt]


def grad_check(fn, point: np.ndarray, epsilon: float = 1e-5) -> float:
    """Max relative error between the engine gradient and central differences.

    ``fn`` maps a flat float64 vector to a scalar :class:`Tensor`. Returns
    ``max_i |analytic_i - numeric_i| / (|numeric_i| + 1e-12)``.
    """
    point = np.asarray(point, dtype=np.float64)
    x = Tensor(point)
    loss = fn(x)
    if not np.isfinite(loss.value).all():
        raise FloatingPointError("function returned a non-finite value")
    (analytic,) = grad(loss, [x])
    numeric = np.zeros_like(point)
    for i in range(point.size):
        shifted = point.copy()
        shifted.flat[i] += epsilon
        hi = float(fn(Tensor(shifted)).value)
        shifted.flat[i] -= 2.0 * epsilon
        lo = float(fn(Tensor(shifted)).value)
        numeric.flat[i] = (hi - lo) / (2.0 * epsilon)
    if not np.isfinite(numeric).all():
        raise FloatingPointError("finite differences produced a non-finite value")
    return float(np.max(np.abs(analytic - numeric) / (np.abs(numeric) + 1e-12)))


# -- flat parameter vectors with named segments --------------------------


@dataclass(frozen=True)
class ParamLayout:
    """Named, disjoint segments of a flat parameter vector.

    ``segments`` maps names to shapes in vector order; flattening then
    unflattening is the identity by construction.
    """

    segments: tuple[tuple[str, tuple[int, ...]], ...]

    @property
    def size(self) -> int:
        return int(sum(np.prod(shape, dtype=int) for _, shape in self.segments))

    def offsets(self) -> dict[str, tuple[int, int]]:
        out, pos = {}, 0
        for name, shape in self.segments:
            n = int(np.prod(shape, dtype=int))
            out[name] = (pos, pos + n)
            pos += n
        return out

    def _split(self, vec, shape_of, mode):
        # splitting a Tensor is cached on the node: values are immutable and
        # operators re-split the same parameter vector at every application
        key = (self.segments, mode)
        cached = isinstance(vec, Tensor)
        if cached and vec._split_cache is not None:
            hit = vec._split_cache.get(key)
            if hit is not None:
                return hit
        out, pos = {}, 0
        for name, shape in self.segments:
            n = int(np.prod(shape, dtype=int))
            out[name] = reshape(slice_last(vec, pos, pos + n), shape_of(shape))
            pos += n
        if cached:
            if vec._split_cache is None:
                vec._split_cache = {}
            vec._split_cache[key] = out
        return out

    def unflatten(self, vec):
        """Split a flat vector (Tensor or ndarray) into named shaped pieces."""
        return self._split(vec, lambda shape: shape, "single")

    def unflatten_batch(self, vecs):
        """Same as :meth:`unflatten` for a batch of vectors (batch, size)."""
        batch = value_of(vecs).shape[0]
        return self._split(vecs, lambda shape: (batch, *shape), "batch")

    def flatten(self, pieces: dict) -> np.ndarray:
        vec = np.empty(self.size, dtype=np.float64)
        pos = 0
        for name, shape in self.segments:
            n = int(np.prod(shape, dtype=int))
            vec[pos : pos + n] = np.asarray(pieces[name], dtype=np.float64).reshape(n)
            pos += n
        return vec


def truncated_normal(rng: np.random.Generator, size, std: float) -> np.ndarray:
    """Zero-mean truncated normal, resampled until within +/- 2 std."""
    out = rng.standard_normal(size) * std
    bad = np.abs(out) > 2.0 * std
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum())) * std
        bad = np.abs(out) > 2.0 * std
    return out
