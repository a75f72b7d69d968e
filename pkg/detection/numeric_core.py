"""
Dense float64 matrices with define-by-run reverse-mode differentiation.

Every operation on a tracked Matrix records a TapeNode holding its parents
and a closure mapping the output gradient to one gradient per parent. The
tape is rebuilt on every forward pass; ``backward`` walks it once, in
reverse topological order, and marks it consumed.

Matrices are immutable: the wrapped array is read-only and parameter
updates produce new Matrix objects.
"""
from __future__ import annotations

import contextlib
import contextvars
import logging
import zlib
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import linalg
from scipy.special import logsumexp

from .exceptions import CovarianceError, NonFiniteError, ShapeError, TapeError

logger = logging.getLogger(__name__)

_recording = contextvars.ContextVar("detection_tape_recording", default=True)


@contextlib.contextmanager
def no_tape():
    """Evaluate operations without recording them (inference only)"""
    token = _recording.set(False)
    try:
        yield
    finally:
        _recording.reset(token)


@dataclass(eq=False)
class TapeNode:
    op: str
    parents: tuple
    backward_fn: Callable
    consumed: bool = False


class Matrix:
    """Immutable 2-D float64 array that can take part in the gradient tape"""

    __slots__ = ("data", "requires_grad", "node")

    def __init__(self, data, requires_grad=False):
        arr = np.array(data, dtype=np.float64)
        self._init(arr, requires_grad, None)

    def _init(self, arr, requires_grad, node):
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeError(f"Matrix needs at most 2 dimensions, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            op = node.op if node is not None else "construction"
            raise NonFiniteError(f"non-finite values produced by {op}, shape {arr.shape}")
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = requires_grad
        self.node = node

    @classmethod
    def _wrap(cls, arr, node=None):
        obj = cls.__new__(cls)
        obj._init(np.asarray(arr, dtype=np.float64), False, node)
        return obj

    @classmethod
    def zeros(cls, rows, cols):
        return cls._wrap(np.zeros((rows, cols)))

    @property
    def shape(self):
        return self.data.shape

    @property
    def rows(self):
        return self.data.shape[0]

    @property
    def cols(self):
        return self.data.shape[1]

    @property
    def tracked(self):
        return self.requires_grad or self.node is not None

    @property
    def T(self):
        return transpose(self)

    def item(self):
        if self.shape != (1, 1):
            raise ShapeError(f"item() needs a 1x1 matrix, got {self.shape}")
        return float(self.data[0, 0])

    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_matrix(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(as_matrix(other), self)

    def __neg__(self):
        return scale(self, -1.0)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Matrix(shape={self.shape}{flag})"


def as_matrix(value):
    if isinstance(value, Matrix):
        return value
    return Matrix._wrap(np.array(value, dtype=np.float64))


def _result(arr, op, parents, backward_fn):
    if _recording.get() and any(p.tracked for p in parents):
        return Matrix._wrap(arr, TapeNode(op, tuple(parents), backward_fn))
    return Matrix._wrap(arr)


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast {a.shape} with {b.shape}") from None


# ==================== ARITHMETIC ====================

def matmul(a, b):
    a, b = as_matrix(a), as_matrix(b)
    if a.cols != b.rows:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape} (inner dimensions differ)")
    out = a.data @ b.data

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return _result(out, "matmul", (a, b), backward)


def add(a, b):
    a, b = as_matrix(a), as_matrix(b)
    _broadcast_shape("add", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, "add", (a, b), backward)


def sub(a, b):
    a, b = as_matrix(a), as_matrix(b)
    _broadcast_shape("sub", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(a.data - b.data, "sub", (a, b), backward)


def mul(a, b):
    a, b = as_matrix(a), as_matrix(b)
    _broadcast_shape("mul", a, b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(a.data * b.data, "mul", (a, b), backward)


def div(a, b):
    a, b = as_matrix(a), as_matrix(b)
    _broadcast_shape("div", a, b)
    out = a.data / b.data

    def backward(g):
        return (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * out / b.data, b.shape),
        )

    return _result(out, "div", (a, b), backward)


def scale(m, factor):
    factor = float(factor)

    def backward(g):
        return (g * factor,)

    return _result(m.data * factor, "scale", (m,), backward)


def square(m):
    def backward(g):
        return (2.0 * g * m.data,)

    return _result(m.data * m.data, "square", (m,), backward)


def reciprocal(m):
    out = 1.0 / m.data

    def backward(g):
        return (-g * out * out,)

    return _result(out, "reciprocal", (m,), backward)


def exp(m):
    out = np.exp(m.data)

    def backward(g):
        return (g * out,)

    return _result(out, "exp", (m,), backward)


def log(m):
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(m.data)

    def backward(g):
        return (g / m.data,)

    return _result(out, "log", (m,), backward)


def tanh_act(m):
    out = np.tanh(m.data)

    def backward(g):
        return (g * (1.0 - out * out),)

    return _result(out, "tanh", (m,), backward)


def transpose(m):
    def backward(g):
        return (g.T,)

    return _result(m.data.T, "transpose", (m,), backward)


# ==================== REDUCTIONS ====================

def sum_all(m, axis=None):
    """Sum of all entries (1x1), of each column (axis=0, 1xc) or of each row (axis=1, rx1)"""
    if axis is None:
        out = np.array([[m.data.sum()]])
    else:
        out = m.data.sum(axis=axis, keepdims=True)

    def backward(g):
        return (np.broadcast_to(g, m.shape).copy(),)

    return _result(out, "sum", (m,), backward)


def mean_all(m):
    return scale(sum_all(m), 1.0 / (m.rows * m.cols))


def row_softmax(m):
    shifted = m.data - m.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=1, keepdims=True)),)

    return _result(out, "row_softmax", (m,), backward)


def log_sum_exp(m, axis):
    out = logsumexp(m.data, axis=axis, keepdims=True)

    def backward(g):
        return (g * np.exp(m.data - out),)

    return _result(out, "log_sum_exp", (m,), backward)


def row_norm(m):
    """Euclidean norm of each row as an r x 1 column; zero rows get a zero subgradient"""
    out = np.sqrt((m.data * m.data).sum(axis=1, keepdims=True))

    def backward(g):
        safe = np.where(out > 0.0, out, 1.0)
        return (np.where(out > 0.0, g * m.data / safe, 0.0),)

    return _result(out, "row_norm", (m,), backward)


def diag(m):
    """Diagonal of a square matrix as a 1 x n row"""
    if m.rows != m.cols:
        raise ShapeError(f"diag: matrix must be square, got {m.shape}")

    def backward(g):
        return (np.diag(g.ravel()),)

    return _result(np.diag(m.data).reshape(1, -1).copy(), "diag", (m,), backward)


# ==================== STRUCTURE ====================

def concat_cols(parts: Sequence[Matrix]):
    parts = [as_matrix(p) for p in parts]
    rows = {p.rows for p in parts}
    if len(rows) != 1:
        raise ShapeError(f"concat_cols: row counts differ {[p.shape for p in parts]}")
    bounds = np.cumsum([0] + [p.cols for p in parts])

    def backward(g):
        return tuple(g[:, lo:hi] for lo, hi in zip(bounds[:-1], bounds[1:]))

    return _result(np.hstack([p.data for p in parts]), "concat_cols", parts, backward)


def concat_rows(parts: Sequence[Matrix]):
    parts = [as_matrix(p) for p in parts]
    cols = {p.cols for p in parts}
    if len(cols) != 1:
        raise ShapeError(f"concat_rows: column counts differ {[p.shape for p in parts]}")
    bounds = np.cumsum([0] + [p.rows for p in parts])

    def backward(g):
        return tuple(g[lo:hi, :] for lo, hi in zip(bounds[:-1], bounds[1:]))

    return _result(np.vstack([p.data for p in parts]), "concat_rows", parts, backward)


def take_cols(m, cols: Iterable[int]):
    cols = np.asarray(list(cols), dtype=np.intp)

    def backward(g):
        full = np.zeros(m.shape)
        np.add.at(full, (slice(None), cols), g)
        return (full,)

    return _result(m.data[:, cols], "take_cols", (m,), backward)


def take_rows(m, rows: Iterable[int]):
    rows = np.asarray(list(rows), dtype=np.intp)

    def backward(g):
        full = np.zeros(m.shape)
        np.add.at(full, rows, g)
        return (full,)

    return _result(m.data[rows, :], "take_rows", (m,), backward)


def gather_column(m, index):
    """out[i, j] = m[index[i, j], 0] for a column vector m"""
    if m.cols != 1:
        raise ShapeError(f"gather_column: expected a column vector, got {m.shape}")
    index = np.asarray(index, dtype=np.intp)

    def backward(g):
        full = np.zeros(m.shape)
        np.add.at(full[:, 0], index, g)
        return (full,)

    return _result(m.data[index, 0], "gather_column", (m,), backward)


def scatter_neighbors(values, index, n_cols):
    """Dense r x n_cols matrix with out[i, index[i, j]] = values[i, j], zero elsewhere"""
    index = np.asarray(index, dtype=np.intp)
    if values.shape != index.shape:
        raise ShapeError(f"scatter_neighbors: values {values.shape} vs index {index.shape}")
    rows = np.repeat(np.arange(values.rows), index.shape[1]).reshape(index.shape)
    out = np.zeros((values.rows, n_cols))
    np.add.at(out, (rows, index), values.data)

    def backward(g):
        return (g[rows, index],)

    return _result(out, "scatter_neighbors", (values,), backward)


# ==================== LINEAR ALGEBRA ====================

def cholesky_logdet_solve(s, v, epsilon=1e-6, retries=3, component=None):
    """
    log|s| and s^-1 v through a Cholesky factor, never forming the inverse.

    A failed factorization is retried with epsilon*I added, doubling epsilon
    each time, up to ``retries`` times.
    """
    s, v = as_matrix(s), as_matrix(v)
    if s.rows != s.cols or s.rows != v.rows:
        raise ShapeError(f"cholesky_logdet_solve: s {s.shape}, v {v.shape}")
    factor = None
    jitter = 0.0
    for attempt in range(retries + 1):
        try:
            factor = linalg.cho_factor(s.data + jitter * np.eye(s.rows), lower=True)
            break
        except linalg.LinAlgError:
            jitter = epsilon * (2.0 ** attempt)
            logger.debug("cholesky retry %d for component %s with jitter %g", attempt + 1, component, jitter)
    if factor is None:
        raise CovarianceError(component, retries)
    if jitter:
        logger.info("component %s needed diagonal jitter %g", component, jitter)

    logdet = np.array([[2.0 * np.log(np.diag(factor[0])).sum()]])
    solved = linalg.cho_solve(factor, v.data)

    def logdet_backward(g):
        inverse = linalg.cho_solve(factor, np.eye(s.rows))
        return (g[0, 0] * inverse, None)

    def solve_backward(g):
        grad_v = linalg.cho_solve(factor, g)
        return (-grad_v @ solved.T, grad_v)

    return (
        _result(logdet, "cholesky_logdet", (s, v), logdet_backward),
        _result(solved, "cholesky_solve", (s, v), solve_backward),
    )


# ==================== BACKWARD ====================

class Gradients:
    """Gradients of one backward pass, keyed by the leaf Matrix objects"""

    def __init__(self, entries):
        self._entries = entries

    def of(self, m):
        entry = self._entries.get(id(m))
        if entry is None:
            return np.zeros(m.shape)
        return entry[1]

    def __contains__(self, m):
        return id(m) in self._entries

    def all_finite(self):
        return all(np.isfinite(g).all() for _, g in self._entries.values())


def _topological_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        m, expanded = stack.pop()
        if expanded:
            order.append(m)
            continue
        if id(m) in seen:
            continue
        seen.add(id(m))
        stack.append((m, True))
        if m.node is not None:
            for parent in m.node.parents:
                if parent.tracked and id(parent) not in seen:
                    stack.append((parent, False))
    order.reverse()
    return order


def backward(loss):
    """Accumulate d loss / d leaf for every leaf with requires_grad reachable from loss"""
    if loss.shape != (1, 1):
        raise TapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.node is None:
        raise TapeError("loss was not produced by taped operations")
    if loss.node.consumed:
        raise TapeError("backward already ran on this tape; run forward again first")

    pending = {id(loss): np.ones((1, 1))}
    leaves = {}
    for m in _topological_order(loss):
        g = pending.pop(id(m), None)
        if g is None:
            continue
        if m.node is None:
            if m.requires_grad:
                leaves[id(m)] = (m, g)
            continue
        for parent, pg in zip(m.node.parents, m.node.backward_fn(g)):
            if pg is None or not parent.tracked:
                continue
            key = id(parent)
            pending[key] = pending[key] + pg if key in pending else pg
    loss.node.consumed = True
    return Gradients(leaves)


# ==================== RANDOMNESS ====================

class SeededRng:
    """
    PCG64 stream from numpy. The same seed gives the same stream on every
    platform; ``spawn`` derives independent child streams from a label.
    """

    def __init__(self, seed):
        seed = int(seed)
        if not 0 <= seed < 2 ** 64:
            raise ValueError(f"seed must fit in 64 unsigned bits, got {seed}")
        self.seed = seed
        self._generator = np.random.Generator(np.random.PCG64(seed))

    def spawn(self, label):
        sequence = np.random.SeedSequence(self.seed, spawn_key=(zlib.crc32(label.encode("utf-8")),))
        return SeededRng(int(sequence.generate_state(1, dtype=np.uint64)[0]))

    def uniform(self, low, high, shape):
        return self._generator.uniform(low, high, size=shape)

    def permutation(self, n):
        return self._generator.permutation(n)

    def choice(self, population, size):
        return self._generator.choice(population, size=size, replace=False)

    def normal(self, shape):
        return self._generator.standard_normal(size=shape)
