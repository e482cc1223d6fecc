"""Dense 2-D tensors with reverse-mode differentiation.

Every value is a float64 matrix. Operations on tensors that require gradients
are recorded on a tape in creation order; :meth:`Tensor.backward` replays the
adjoints in exact reverse recording order, which is a valid reverse
topological order because a node is always recorded after its inputs.

Only row-broadcasting (``n x m`` combined with ``1 x m``) is supported.
"""

from __future__ import annotations

import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DomainError, NumericError, ShapeError, UsageError

__all__ = [
    "Tensor",
    "GradTape",
    "as_tensor",
    "matmul",
    "add",
    "sub",
    "mul",
    "scale",
    "neg",
    "exp",
    "log",
    "relu",
    "sigmoid",
    "square",
    "clamp",
    "sum_all",
    "sum_rows",
    "sum_cols",
    "mean",
    "transpose",
    "add_row",
    "logsumexp_rows",
    "take_rows",
    "normalize_rows",
    "weighted_bce_with_logits",
    "dropout",
]


class GradTape:
    """Global recording order for differentiable operations.

    The tape only hands out monotonically increasing sequence numbers; each
    recorded node keeps references to its inputs and its adjoint closure.
    """

    _counter = itertools.count()

    @classmethod
    def next_index(cls) -> int:
        return next(cls._counter)


def _as_2d(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise ShapeError(f"tensors are 2-D, got array with shape {arr.shape}")
    return arr


class Tensor:
    """A float64 matrix that can participate in reverse-mode differentiation."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "_index", "_released")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = _as_2d(data)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self._index = -1
        self._released = False

    # -- construction helpers -------------------------------------------------
    @classmethod
    def _from_op(cls, data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
        out = cls(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
            out._index = GradTape.next_index()
        return out

    @classmethod
    def zeros(cls, rows: int, cols: int, requires_grad: bool = False) -> Tensor:
        return cls(np.zeros((rows, cols)), requires_grad=requires_grad)

    # -- basic properties -------------------------------------------------------
    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape  # type: ignore[return-value]

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def is_leaf(self) -> bool:
        return self._backward is None and not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def detach(self) -> Tensor:
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    # -- operators ----------------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if not np.isscalar(other):
            raise UsageError("only division by a scalar is supported")
        return scale(self, 1.0 / float(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    @property
    def T(self) -> Tensor:
        return transpose(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def relu(self):
        return relu(self)

    def sigmoid(self):
        return sigmoid(self)

    def square(self):
        return square(self)

    def sum(self):
        return sum_all(self)

    def mean(self):
        return mean(self)

    # -- differentiation --------------------------------------------------------
    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every leaf requiring gradients."""
        if self.shape != (1, 1):
            raise UsageError(f"backward() needs a scalar (1x1) loss, got shape {self.shape}")
        if not self.requires_grad:
            raise UsageError("loss does not depend on any tensor that requires gradients")
        if self._backward is None and not self.is_leaf:
            raise UsageError("backward() was already called on this graph; recompute the loss")

        nodes: list[Tensor] = []
        seen: set[int] = set()
        stack = [self]
        while stack:
            node = stack.pop()
            if id(node) in seen:
                continue
            seen.add(id(node))
            if node._released:
                raise UsageError("graph was already consumed by an earlier backward(); recompute the loss")
            nodes.append(node)
            stack.extend(p for p in node._parents if p.requires_grad)

        grads: dict[int, np.ndarray] = {id(self): np.ones((1, 1))}
        for node in sorted(nodes, key=lambda t: t._index, reverse=True):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg
            node._backward = None
            node._released = True


TensorLike = Tensor | np.ndarray | float | int


def as_tensor(x: TensorLike) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_same(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


# -- linear algebra -------------------------------------------------------------
def matmul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.cols != b.rows:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        return (g @ bd.T if a.requires_grad else None, ad.T @ g if b.requires_grad else None)

    return Tensor._from_op(ad @ bd, (a, b), backward)


def transpose(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    return Tensor._from_op(a.data.T.copy(), (a,), lambda g: (g.T,))


# -- elementwise binary ---------------------------------------------------------
def add(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        if b.rows == 1 and b.cols == a.cols:
            return add_row(a, b)
        if a.rows == 1 and a.cols == b.cols:
            return add_row(b, a)
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} are not compatible")
    return Tensor._from_op(a.data + b.data, (a, b), lambda g: (g, g))


def add_row(a: TensorLike, row: TensorLike) -> Tensor:
    """``a + row`` where ``row`` (1 x m) is broadcast over the rows of ``a`` (n x m)."""
    a, row = as_tensor(a), as_tensor(row)
    if row.rows != 1 or row.cols != a.cols:
        raise ShapeError(f"add_row: cannot broadcast {row.shape} over {a.shape}")
    return Tensor._from_op(a.data + row.data, (a, row), lambda g: (g, g.sum(axis=0, keepdims=True)))


def sub(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_same(a, b, "sub")
    return Tensor._from_op(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_same(a, b, "mul")
    ad, bd = a.data, b.data
    return Tensor._from_op(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(a: TensorLike, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return Tensor._from_op(a.data * c, (a,), lambda g: (g * c,))


def neg(a: TensorLike) -> Tensor:
    return scale(a, -1.0)


# -- elementwise unary ----------------------------------------------------------
def exp(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return Tensor._from_op(out, (a,), lambda g: (g * out,))


def log(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError("log: input has non-positive entries")
    ad = a.data
    return Tensor._from_op(np.log(ad), (a,), lambda g: (g / ad,))


def relu(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0  # subgradient 0 at 0
    return Tensor._from_op(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    s = _stable_sigmoid(a.data)
    return Tensor._from_op(s, (a,), lambda g: (g * s * (1.0 - s),))


def clamp(a: TensorLike, lo: float, hi: float) -> Tensor:
    """Clip into ``[lo, hi]``; the adjoint is zero where clipping was active."""
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return Tensor._from_op(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,))


def square(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return Tensor._from_op(ad * ad, (a,), lambda g: (2.0 * g * ad,))


# -- reductions -----------------------------------------------------------------
def sum_all(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    return Tensor._from_op(np.array([[a.data.sum()]]), (a,), lambda g: (np.full(shape, g[0, 0]),))


def sum_rows(a: TensorLike) -> Tensor:
    """Per-row sums, ``n x m -> n x 1``."""
    a = as_tensor(a)
    cols = a.cols
    return Tensor._from_op(a.data.sum(axis=1, keepdims=True), (a,), lambda g: (np.repeat(g, cols, axis=1),))


def sum_cols(a: TensorLike) -> Tensor:
    """Per-column sums, ``n x m -> 1 x m``."""
    a = as_tensor(a)
    rows = a.rows
    return Tensor._from_op(a.data.sum(axis=0, keepdims=True), (a,), lambda g: (np.repeat(g, rows, axis=0),))


def mean(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    return scale(sum_all(a), 1.0 / a.data.size)


def logsumexp_rows(a: TensorLike) -> Tensor:
    """Row-wise ``log(sum(exp(row)))`` computed with max-subtraction, ``n x m -> n x 1``."""
    a = as_tensor(a)
    if not np.all(np.isfinite(a.data)):
        raise NumericError("logsumexp_rows: non-finite input")
    m = a.data.max(axis=1, keepdims=True)
    shifted = np.exp(a.data - m)
    total = shifted.sum(axis=1, keepdims=True)
    out = m + np.log(total)
    soft = shifted / total
    return Tensor._from_op(out, (a,), lambda g: (g * soft,))


def normalize_rows(a: TensorLike, eps: float = 1e-12) -> Tensor:
    """Scale every row to unit Euclidean norm."""
    a = as_tensor(a)
    norms = np.maximum(np.sqrt((a.data * a.data).sum(axis=1, keepdims=True)), eps)
    out = a.data / norms

    def backward(g):
        return ((g - out * (g * out).sum(axis=1, keepdims=True)) / norms,)

    return Tensor._from_op(out, (a,), backward)


# -- indexing -------------------------------------------------------------------
def take_rows(a: TensorLike, index: Sequence[int] | np.ndarray) -> Tensor:
    """Gather rows ``a[index]``; repeated indices accumulate in the adjoint."""
    a = as_tensor(a)
    idx = np.asarray(index, dtype=np.intp)
    shape = a.shape

    def backward(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return Tensor._from_op(a.data[idx], (a,), backward)


# -- fused losses ---------------------------------------------------------------
def weighted_bce_with_logits(logits: TensorLike, targets: np.ndarray, pos_weight: float = 1.0) -> Tensor:
    """Sum over entries of ``-(w*y*log s(x) + (1-y)*log(1-s(x)))``.

    Uses ``log s(x) = -softplus(-x)`` so large logits never overflow.
    """
    logits = as_tensor(logits)
    y = np.asarray(targets, dtype=np.float64)
    if y.shape != logits.shape:
        raise ShapeError(f"bce: targets {y.shape} vs logits {logits.shape}")
    x = logits.data
    softplus_neg = np.logaddexp(0.0, -x)  # -log s(x)
    softplus_pos = np.logaddexp(0.0, x)  # -log(1 - s(x))
    w = float(pos_weight)
    total = np.sum(w * y * softplus_neg + (1.0 - y) * softplus_pos)
    s = _stable_sigmoid(x)

    def backward(g):
        return (g[0, 0] * (-w * y * (1.0 - s) + (1.0 - y) * s),)

    return Tensor._from_op(np.array([[total]]), (logits,), backward)


# -- regularisation -------------------------------------------------------------
def dropout(a: TensorLike, p: float, rng: np.random.Generator, training: bool = True) -> Tensor:
    """Inverted dropout: zero each entry with probability ``p``, scale survivors by ``1/(1-p)``."""
    if not 0.0 <= p < 1.0:
        raise UsageError(f"dropout probability must lie in [0, 1), got {p}")
    a = as_tensor(a)
    if not training or p == 0.0:
        return a
    keep = (rng.random(a.shape) >= p) / (1.0 - p)
    return Tensor._from_op(a.data * keep, (a,), lambda g: (g * keep,))


def parameters_finite(params: Iterable[Tensor]) -> bool:
    return all(np.all(np.isfinite(p.data)) for p in params)
