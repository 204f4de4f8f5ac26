"""Reverse-mode automatic differentiation over dense float64 arrays.

Every forward operation returns a new :class:`Tensor` that remembers its
parents and a closure mapping the output gradient to parent gradients.
:func:`backward` walks the graph in reverse topological order.

Operations act on the last axis wherever that matters (normalisation,
softmax, slicing, concatenation), so a single vector ``[d]`` and a batch
of row vectors ``[B, d]`` go through the same code path.

A root may be back-propagated exactly once; a second call raises
:class:`ContractError`. Leaf gradients accumulate across graphs until
:func:`sgd_momentum_step` (or :meth:`Tensor.zero_grad`) clears them.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DegenerateVectorError, OptimizerError, ShapeError

NORM_FLOOR = 1e-8

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def _as_array(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    return arr


class Tensor:
    """A node of the computation graph.

    ``data`` is a float64 array whose shape has at least one axis; scalars
    are stored with shape ``(1,)``.
    """

    __slots__ = ("data", "requires_grad", "op", "_parents", "_backward", "_grad", "_consumed", "name")

    def __init__(self, values, requires_grad: bool = False, name: str | None = None):
        self.data = _as_array(values)
        self.requires_grad = requires_grad
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._grad: np.ndarray | None = None
        self._consumed = False
        self.name = name

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: Sequence["Tensor"], backward: Callable, op: str) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.op = op
        out._grad = None
        out._consumed = False
        out.name = None
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def parents(self) -> tuple["Tensor", ...]:
        return self._parents

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            return np.zeros_like(self.data)
        return self._grad

    def zero_grad(self) -> None:
        self._grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self._grad is None:
            self._grad = np.array(g, dtype=np.float64, copy=True).reshape(self.data.shape)
        else:
            self._grad += g

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class Parameter(Tensor):
    """Trainable leaf with a momentum buffer of the same shape."""

    __slots__ = ("velocity",)

    def __init__(self, values, name: str | None = None):
        super().__init__(values, requires_grad=True, name=name)
        self.velocity = np.zeros_like(self.data)


def constant(values) -> Tensor:
    return Tensor(values)


def _check_same(a: Tensor, b: Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


# -- linear algebra ------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    A, B = a.data, b.data

    def backward(g):
        return g @ B.T, A.T @ g

    return Tensor._from_op(A @ B, (a, b), backward, "matmul")


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose: expected a matrix, got {a.shape}")
    return Tensor._from_op(a.data.T.copy(), (a,), lambda g: (g.T,), "transpose")


def affine(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """``x @ weight.T + bias`` for ``x`` of shape ``[d_in]`` or ``[B, d_in]``."""
    if weight.data.ndim != 2 or x.shape[-1] != weight.shape[1] or bias.shape != (weight.shape[0],):
        raise ShapeError(f"affine: input {x.shape}, weight {weight.shape}, bias {bias.shape}")
    X, W = x.data, weight.data

    def backward(g):
        if X.ndim == 1:
            return g @ W, np.outer(g, X), g
        return g @ W, g.T @ X, g.sum(axis=0)

    return Tensor._from_op(X @ W.T + bias.data, (x, weight, bias), backward, "affine")


# -- elementwise ---------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "add")
    return Tensor._from_op(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "sub")
    return Tensor._from_op(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "mul")
    A, B = a.data, b.data
    return Tensor._from_op(A * B, (a, b), lambda g: (g * B, g * A), "mul")


def scale(a: Tensor, c: float) -> Tensor:
    return Tensor._from_op(a.data * c, (a,), lambda g: (g * c,), "scale")


def elementwise(kind: str, a: Tensor, b) -> Tensor:
    """Dispatch by name: ``add``, ``sub``, ``mul`` or ``scale`` (``b`` a constant)."""
    if kind == "scale":
        return scale(a, float(b))
    ops = {"add": add, "sub": sub, "mul": mul}
    if kind not in ops:
        raise ContractError(f"unknown elementwise op {kind!r}")
    return ops[kind](a, b)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form never overflows and gives sigmoid(0) == 0.5 exactly
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _sigmoid_grad(y: np.ndarray) -> np.ndarray:
    return y * (1.0 - y)


def _tanh_grad(y: np.ndarray) -> np.ndarray:
    return 1.0 - y * y


def sigmoid(a: Tensor) -> Tensor:
    y = _sigmoid(a.data)
    return Tensor._from_op(y, (a,), lambda g: (g * _sigmoid_grad(y),), "sigmoid")


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return Tensor._from_op(y, (a,), lambda g: (g * _tanh_grad(y),), "tanh")


def activation(kind: str, a: Tensor) -> Tensor:
    if kind == "sigmoid":
        return sigmoid(a)
    if kind == "tanh":
        return tanh(a)
    raise ContractError(f"unknown activation {kind!r}")


# -- normalisation and reductions ---------------------------------------------


def l2_normalize(a: Tensor) -> Tensor:
    """Scale every vector along the last axis to unit Euclidean norm."""
    norm = np.sqrt(np.sum(a.data * a.data, axis=-1, keepdims=True))
    if np.any(norm < NORM_FLOOR):
        raise DegenerateVectorError(f"cannot normalise a vector with norm below {NORM_FLOOR:g}")
    y = a.data / norm

    def backward(g):
        return ((g - y * np.sum(g * y, axis=-1, keepdims=True)) / norm,)

    return Tensor._from_op(y, (a,), backward, "l2_normalize")


def sum(a: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    shape = a.shape
    return Tensor._from_op(np.array([a.data.sum()]), (a,), lambda g: (np.full(shape, g[0]),), "sum")


def mean(a: Tensor) -> Tensor:
    shape, n = a.shape, a.data.size
    return Tensor._from_op(
        np.array([a.data.mean()]), (a,), lambda g: (np.full(shape, g[0] / n),), "mean"
    )


def dot(a: Tensor, b: Tensor) -> Tensor:
    return sum(mul(a, b))


# -- structural ----------------------------------------------------------------


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    if not tensors:
        raise ContractError("concat needs at least one tensor")
    arrays = [t.data for t in tensors]
    try:
        out = np.concatenate(arrays, axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in tensors]}") from exc
    bounds = np.cumsum([arr.shape[axis] for arr in arrays])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor._from_op(out, tuple(tensors), backward, "concat")


def slice_last(a: Tensor, start: int, stop: int) -> Tensor:
    shape = a.shape

    def backward(g):
        full = np.zeros(shape)
        full[..., start:stop] = g
        return (full,)

    return Tensor._from_op(a.data[..., start:stop], (a,), backward, "slice")


def stack(tensors: Sequence[Tensor]) -> Tensor:
    """Stack equally shaped tensors along a new leading axis."""
    if not tensors:
        raise ContractError("stack needs at least one tensor")
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise ShapeError(f"stack: shapes differ {sorted(shapes)}")
    n = len(tensors)
    return Tensor._from_op(np.stack([t.data for t in tensors]), tuple(tensors),
                           lambda g: tuple(g[i] for i in range(n)), "stack")


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view {old} as {shape}") from exc
    return Tensor._from_op(out, (a,), lambda g: (g.reshape(old),), "reshape")


def detach(a: Tensor) -> Tensor:
    return Tensor(a.data)


def softmax_cross_entropy(logits: Tensor, targets, mask: np.ndarray | None = None) -> Tensor:
    """Per-row ``-log softmax(logits)[target]``.

    ``mask`` marks logits excluded from the normaliser (``True`` = drop);
    the target entry itself must stay unmasked. Returns shape ``[B]`` for
    ``[B, C]`` logits and ``(1,)`` for a single vector.
    """
    z = logits.data
    single = z.ndim == 1
    Z = z.reshape(1, -1) if single else z
    t = np.atleast_1d(np.asarray(targets, dtype=np.int64))
    if Z.ndim != 2 or t.shape != (Z.shape[0],):
        raise ShapeError(f"cross entropy: logits {logits.shape} with targets of shape {t.shape}")
    rows = np.arange(Z.shape[0])
    if mask is not None:
        mask = np.asarray(mask, dtype=bool).reshape(Z.shape)
        if mask[rows, t].any():
            raise ContractError("cross entropy: a target logit is masked out")
        Z = np.where(mask, -np.inf, Z)
    shift = Z - Z.max(axis=1, keepdims=True)
    e = np.exp(shift)
    total = e.sum(axis=1, keepdims=True)
    probs = e / total
    losses = np.log(total[:, 0]) - shift[rows, t]

    def backward(g):
        d = probs.copy()
        d[rows, t] -= 1.0
        d *= g.reshape(-1, 1)
        return (d.reshape(logits.shape),)

    return Tensor._from_op(losses, (logits,), backward, "cross_entropy")


# -- backward and optimisation -------------------------------------------------


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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


def backward(root: Tensor) -> None:
    """Populate ``grad`` of every node reachable from the scalar ``root``."""
    if root.shape != (1,):
        raise ContractError(f"backward needs a scalar root of shape (1,), got {root.shape}")
    if root._consumed:
        raise ContractError("backward already ran on this root; rebuild the graph")
    if not root.requires_grad:
        raise ContractError("root does not depend on any tensor that requires grad")
    root._consumed = True
    root._accumulate(np.ones(1))
    for node in reversed(_topological_order(root)):
        if node._backward is None or node._grad is None:
            continue
        for parent, g in zip(node._parents, node._backward(node._grad)):
            if parent.requires_grad and g is not None:
                parent._accumulate(g)


def sgd_momentum_step(params: Iterable[Parameter], lr: float, momentum: float) -> None:
    """``v <- momentum * v + grad``; ``theta <- theta - lr * v``; then clear grads.

    Nothing is updated if any gradient entry is non-finite.
    """
    params = list(params)
    if lr < 0:
        raise ContractError(f"learning rate must be non-negative, got {lr}")
    if not 0.0 <= momentum < 1.0:
        raise ContractError(f"momentum must lie in [0, 1), got {momentum}")
    for p in params:
        if p._grad is not None and not np.all(np.isfinite(p._grad)):
            raise OptimizerError(f"non-finite gradient in parameter {p.name or p.shape}")
    for p in params:
        g = p._grad if p._grad is not None else 0.0
        p.velocity *= momentum
        p.velocity += g
        p.data -= lr * p.velocity
        p._grad = None
