"""Dense float64 tensors with a recorded operation tape and reverse-mode gradients.

Every numeric quantity in the package (layer parameters, activations, losses)
is a ``Tensor``. Forward operations record (op kind, parents, backward closure)
on the result; ``backprop`` walks the tape in reverse topological order and
returns a map from tensor id to gradient array. The tape is rebuilt on every
forward pass and freed once the result tensor goes out of scope.

Only one broadcast form is supported for elementwise ops: a trailing vector
over the rows of a matrix (bias addition). Anything else is a ``ShapeError``.
"""

from __future__ import annotations

import itertools
from typing import Callable, Dict, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "GradientMap",
    "ShapeError",
    "DomainError",
    "NumericError",
    "tensor_binary",
    "tensor_unary",
    "backprop",
    "finite_diff_check",
    "reshape",
    "concat_rows",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class DomainError(ValueError):
    """Input values lie outside the mathematical domain of the operation."""


class NumericError(ArithmeticError):
    """An operation produced NaN/Inf from finite inputs."""


# Gradients keyed by tensor id; each entry has the shape of the tensor it grades.
GradientMap = Dict[int, np.ndarray]

_ids = itertools.count()

BINARY_KINDS = ("add", "sub", "mul_elementwise", "matmul")
UNARY_KINDS = ("tanh", "sigmoid", "relu", "exp", "log", "sum", "softmax_rows")


def _check_finite(array: np.ndarray, kind: str) -> None:
    if not np.all(np.isfinite(array)):
        raise NumericError(f"non-finite values produced by op '{kind}'")


class Tensor:
    """A float64 array plus its position in the recorded computation graph."""

    __slots__ = ("id", "array", "requires_grad", "op", "parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.id = next(_ids)
        self.array = arr
        self.requires_grad = bool(requires_grad)
        self.op: str | None = None
        self.parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray, GradientMap], None] | None = None

    @classmethod
    def _from_op(
        cls,
        array: np.ndarray,
        kind: str,
        parents: Sequence["Tensor"],
        backward: Callable[[np.ndarray, GradientMap], None],
    ) -> "Tensor":
        """Record the result of an operation on the tape.

        ``backward`` receives (grad_out, grads) and must accumulate each
        differentiable parent's contribution via ``_accumulate``.
        """
        _check_finite(array, kind)
        out = cls(array, requires_grad=any(p.requires_grad for p in parents))
        out.op = kind
        out.parents = tuple(parents)
        if out.requires_grad:
            out._backward = backward
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.array.shape

    @property
    def data(self) -> np.ndarray:
        """Flat row-major view of the values."""
        return self.array.reshape(-1)

    @property
    def op_record(self) -> tuple[str, tuple[int, ...]] | None:
        if self.op is None:
            return None
        return (self.op, tuple(p.id for p in self.parents))

    def item(self) -> float:
        return float(self.array.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(id={self.id}, shape={self.shape}, requires_grad={self.requires_grad})"

    # Operator sugar; all dispatch through the kind-based entry points below.
    def __add__(self, other: "Tensor") -> "Tensor":
        return tensor_binary("add", self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return tensor_binary("sub", self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return tensor_binary("mul_elementwise", self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return tensor_binary("matmul", self, other)


def _accumulate(grads: GradientMap, t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.id in grads:
        grads[t.id] = grads[t.id] + g
    else:
        grads[t.id] = np.array(g, dtype=np.float64, copy=True)


def _broadcast_ok(a_shape: tuple[int, ...], b_shape: tuple[int, ...]) -> bool:
    """True when b is a trailing vector broadcastable over a's rows."""
    return len(b_shape) == 1 and len(a_shape) >= 2 and a_shape[-1] == b_shape[0]


def _reduce_to_vector(g: np.ndarray) -> np.ndarray:
    """Sum gradient over all leading axes, leaving the trailing vector."""
    return g.reshape(-1, g.shape[-1]).sum(axis=0)


def tensor_binary(kind: str, a: Tensor, b: Tensor) -> Tensor:
    if kind not in BINARY_KINDS:
        raise ValueError(f"unknown binary op kind '{kind}'")

    if kind == "matmul":
        if a.array.ndim != 2 or b.array.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul shapes incompatible: {a.shape} x {b.shape}")
        out = a.array @ b.array

        def backward(grad_out: np.ndarray, grads: GradientMap) -> None:
            _accumulate(grads, a, grad_out @ b.array.T)
            _accumulate(grads, b, a.array.T @ grad_out)

        return Tensor._from_op(out, kind, (a, b), backward)

    broadcast = a.shape != b.shape
    if broadcast and not _broadcast_ok(a.shape, b.shape):
        raise ShapeError(f"elementwise '{kind}' shapes incompatible: {a.shape} vs {b.shape}")

    if kind == "add":
        out = a.array + b.array
    elif kind == "sub":
        out = a.array - b.array
    else:
        out = a.array * b.array

    def backward(grad_out: np.ndarray, grads: GradientMap) -> None:
        if kind == "add":
            ga, gb = grad_out, grad_out
        elif kind == "sub":
            ga, gb = grad_out, -grad_out
        else:
            ga, gb = grad_out * b.array, grad_out * a.array
        _accumulate(grads, a, ga)
        _accumulate(grads, b, _reduce_to_vector(gb) if broadcast else gb)

    return Tensor._from_op(out, kind, (a, b), backward)


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softmax_rows(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def tensor_unary(kind: str, a: Tensor) -> Tensor:
    if kind not in UNARY_KINDS:
        raise ValueError(f"unknown unary op kind '{kind}'")

    if kind == "tanh":
        out = np.tanh(a.array)

        def backward(grad_out, grads):
            _accumulate(grads, a, grad_out * (1.0 - out * out))

    elif kind == "sigmoid":
        out = _stable_sigmoid(a.array)

        def backward(grad_out, grads):
            _accumulate(grads, a, grad_out * out * (1.0 - out))

    elif kind == "relu":
        out = np.maximum(a.array, 0.0)

        def backward(grad_out, grads):
            _accumulate(grads, a, grad_out * (a.array > 0.0))

    elif kind == "exp":
        out = np.exp(a.array)

        def backward(grad_out, grads):
            _accumulate(grads, a, grad_out * out)

    elif kind == "log":
        if np.any(a.array <= 0.0):
            raise DomainError("log requires strictly positive inputs")
        out = np.log(a.array)

        def backward(grad_out, grads):
            _accumulate(grads, a, grad_out / a.array)

    elif kind == "sum":
        out = np.asarray(a.array.sum())

        def backward(grad_out, grads):
            _accumulate(grads, a, np.broadcast_to(grad_out, a.shape))

    else:  # softmax_rows
        if a.array.ndim < 1:
            raise ShapeError("softmax_rows requires rank >= 1")
        out = _softmax_rows(a.array)

        def backward(grad_out, grads):
            dot = (grad_out * out).sum(axis=-1, keepdims=True)
            _accumulate(grads, a, out * (grad_out - dot))

    return Tensor._from_op(out, kind, (a,), backward)


def reshape(a: Tensor, new_shape: Sequence[int]) -> Tensor:
    """Graph-recorded reshape (row-major); gradient reshapes back."""
    new_shape = tuple(int(n) for n in new_shape)
    if int(np.prod(new_shape, dtype=np.int64)) != a.array.size:
        raise ShapeError(f"cannot reshape {a.shape} to {new_shape}")
    out = a.array.reshape(new_shape)

    def backward(grad_out, grads):
        _accumulate(grads, a, grad_out.reshape(a.shape))

    return Tensor._from_op(out, "reshape", (a,), backward)


def concat_rows(tensors: Sequence[Tensor]) -> Tensor:
    """Stack 2-D tensors along axis 0; gradient splits back per input."""
    if not tensors:
        raise ShapeError("concat_rows requires at least one tensor")
    width = tensors[0].shape[-1]
    for t in tensors:
        if t.array.ndim != 2 or t.shape[-1] != width:
            raise ShapeError(f"concat_rows needs matching 2-D rows, got {t.shape}")
    out = np.concatenate([t.array for t in tensors], axis=0)
    offsets = np.cumsum([0] + [t.shape[0] for t in tensors])

    def backward(grad_out, grads):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            _accumulate(grads, t, grad_out[lo:hi])

    return Tensor._from_op(out, "concat_rows", tuple(tensors), backward)


def _topo_order(root: Tensor) -> list[Tensor]:
    """Iterative post-order DFS over the tape (graphs can be deep)."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.id in seen:
            continue
        seen.add(node.id)
        stack.append((node, True))
        for p in node.parents:
            if p.id not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def backprop(root: Tensor) -> GradientMap:
    """Reverse-mode gradients of a scalar root for every reachable
    requires_grad tensor. Gradients sum over repeated uses."""
    if root.array.size != 1:
        raise ShapeError(f"backprop root must be scalar, got shape {root.shape}")
    grads: GradientMap = {}
    if not root.requires_grad:
        return grads
    grads[root.id] = np.ones(root.shape, dtype=np.float64)
    for node in reversed(_topo_order(root)):
        if node._backward is None:
            continue
        g = grads.get(node.id)
        if g is None:
            continue
        node._backward(g, grads)
    return grads


def finite_diff_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    epsilon: float = 1e-4,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Relative error per coordinate is |analytic - numeric| divided by
    max(1, |analytic|, |numeric|).
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    probe = Tensor(x.array.copy(), requires_grad=True)
    grads = backprop(f(probe))
    analytic = grads.get(probe.id)
    if analytic is None:
        analytic = np.zeros_like(probe.array)

    flat = x.array.reshape(-1).copy()
    numeric = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + epsilon
        hi = f(Tensor(flat.reshape(x.shape))).item()
        flat[i] = orig - epsilon
        lo = f(Tensor(flat.reshape(x.shape))).item()
        flat[i] = orig
        numeric[i] = (hi - lo) / (2.0 * epsilon)

    a = analytic.reshape(-1)
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(numeric)))
    return float(np.max(np.abs(a - numeric) / denom)) if flat.size else 0.0
