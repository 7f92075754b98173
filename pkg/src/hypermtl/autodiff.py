"""Dense float64 tensors with tape-based reverse-mode differentiation.

Just enough operations for the model: matrix products, ReLU, softmax,
cross-entropy, row gather/stack, and a handful of elementwise helpers.
Graphs are define-by-run: open a ``GradGraph`` context, build a scalar
loss from ``Tensor`` objects, then call ``graph.backward(loss)``.
Outside a graph the same functions just compute values, which is the
inference path.

Every operation checks its result for NaN/Inf and raises
``NumericalError`` on the first bad value, so divergence is caught at
the op that produced it.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import DimensionError, NumericalError

_ACTIVE_GRAPH: "GradGraph | None" = None


class Tensor:
    """A float64 array plus an optional same-shape gradient buffer.

    ``grad`` exists iff ``requires_grad`` is true; gradients accumulate
    additively across uses, so call ``zero_grad`` between training steps.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NumericalError("tensor initialized with non-finite values")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if requires_grad else None

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        # Internal fast path: takes ownership of a freshly computed array.
        out = cls.__new__(cls)
        out.data = arr
        out.requires_grad = False
        out.grad = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0.0

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class GradGraph:
    """Tape of recorded operations, replayed in reverse for backprop.

    Nodes are appended in construction order, which is a topological
    order by construction; ``backward`` visits each node exactly once
    in reverse.
    """

    def __init__(self):
        self._nodes: list[Callable[[], None]] = []
        self._used = False

    def __enter__(self) -> "GradGraph":
        global _ACTIVE_GRAPH
        if _ACTIVE_GRAPH is not None:
            raise RuntimeError("GradGraph contexts do not nest")
        _ACTIVE_GRAPH = self
        return self

    def __exit__(self, *exc) -> None:
        global _ACTIVE_GRAPH
        _ACTIVE_GRAPH = None

    def __len__(self) -> int:
        return len(self._nodes)

    def backward(self, loss: Tensor) -> None:
        if self._used:
            raise RuntimeError("backward already ran on this graph")
        if loss.data.shape != ():
            raise DimensionError(f"backward needs a scalar loss, got {loss.shape}")
        if loss.grad is None:
            raise RuntimeError("loss was not recorded on this graph")
        self._used = True
        loss.grad[...] = 1.0
        for node in reversed(self._nodes):
            node()


def _finite(arr: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NumericalError(f"{op} produced non-finite values")
    return arr


def _track(out_data: np.ndarray, inputs: Sequence[Tensor], op: str) -> "Tensor | None":
    """Wrap a result; if recording applies, attach a grad buffer and return it."""
    out = Tensor._wrap(_finite(out_data, op))
    if _ACTIVE_GRAPH is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.grad = np.zeros_like(out.data)
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two 2-D tensors."""
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dims disagree: {a.shape} x {b.shape}")
    out = _track(a.data @ b.data, (a, b), "matmul")
    if out.requires_grad:
        def backward():
            if a.grad is not None:
                a.grad += out.grad @ b.data.T
            if b.grad is not None:
                b.grad += a.data.T @ out.grad
        _ACTIVE_GRAPH._nodes.append(backward)
    return out


def relu(a: Tensor) -> Tensor:
    """Elementwise max(0, x); gradient passes only where x > 0."""
    out = _track(np.maximum(a.data, 0.0), (a,), "relu")
    if out.requires_grad:
        mask = a.data > 0.0
        def backward():
            if a.grad is not None:
                a.grad += out.grad * mask
        _ACTIVE_GRAPH._nodes.append(backward)
    return out


def softmax(a: Tensor) -> Tensor:
    """Stable softmax over a 1-D tensor; output sums to 1."""
    if a.data.ndim != 1 or a.data.size == 0:
        raise DimensionError(f"softmax needs a non-empty vector, got shape {a.shape}")
    shifted = a.data - a.data.max()
    e = np.exp(shifted)
    s = e / e.sum()
    out = _track(s, (a,), "softmax")
    if out.requires_grad:
        def backward():
            if a.grad is not None:
                g = out.grad
                a.grad += s * (g - np.dot(g, s))
        _ACTIVE_GRAPH._nodes.append(backward)
    return out


def cross_entropy(logits: Tensor, target_class: int) -> Tensor:
    """Negative log softmax probability of ``target_class``.

    Gradient w.r.t. the logits is softmax(logits) - onehot(target).
    """
    if logits.data.ndim != 1:
        raise DimensionError(f"cross_entropy needs a logit vector, got {logits.shape}")
    n = logits.data.size
    target = int(target_class)
    if not 0 <= target < n:
        raise IndexError(f"target class {target} out of range for {n} logits")
    m = logits.data.max()
    shifted = logits.data - m
    e = np.exp(shifted)
    total = e.sum()
    loss = np.log(total) - shifted[target]
    out = _track(np.float64(loss).reshape(()), (logits,), "cross_entropy")
    if out.requires_grad:
        probs = e / total
        def backward():
            if logits.grad is not None:
                g = probs.copy()
                g[target] -= 1.0
                logits.grad += float(out.grad) * g
        _ACTIVE_GRAPH._nodes.append(backward)
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum of two same-shape tensors."""
    if a.shape != b.shape:
        raise DimensionError(f"add shape mismatch: {a.shape} vs {b.shape}")
    out = _track(a.data + b.data, (a, b), "add")
    if out.requires_grad:
        def backward():
            if a.grad is not None:
                a.grad += out.grad
            if b.grad is not None:
                b.grad += out.grad
        _ACTIVE_GRAPH._nodes.append(backward)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of two same-shape tensors."""
    if a.shape != b.shape:
        raise DimensionError(f"mul shape mismatch: {a.shape} vs {b.shape}")
    out = _track(a.data * b.data, (a, b), "mul")
    if out.requires_grad:
        def backward():
            if a.grad is not None:
                a.grad += out.grad * b.data
            if b.grad is not None:
                b.grad += out.grad * a.data
        _ACTIVE_GRAPH._nodes.append(backward)
    return out


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a python float constant."""
    c = float(c)
    if not np.isfinite(c):
        raise NumericalError("scale by non-finite constant")
    out = _track(a.data * c, (a,), "scale")
    if out.requires_grad:
        def backward():
            if a.grad is not None:
                a.grad += out.grad * c
        _ACTIVE_GRAPH._nodes.append(backward)
    return out


def mean_rows(a: Tensor) -> Tensor:
    """Mean over the rows of a 2-D tensor, returning a vector."""
    if a.data.ndim != 2 or a.shape[0] == 0:
        raise DimensionError(f"mean_rows needs a non-empty matrix, got {a.shape}")
    m = a.shape[0]
    out = _track(a.data.mean(axis=0), (a,), "mean_rows")
    if out.requires_grad:
        def backward():
            if a.grad is not None:
                a.grad += out.grad[None, :] / m
        _ACTIVE_GRAPH._nodes.append(backward)
    return out


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    try:
        data = a.data.reshape(shape).copy()
    except ValueError as e:
        raise DimensionError(f"cannot reshape {a.shape} to {shape}: {e}") from None
    out = _track(data, (a,), "reshape")
    if out.requires_grad:
        def backward():
            if a.grad is not None:
                a.grad += out.grad.reshape(a.shape)
        _ACTIVE_GRAPH._nodes.append(backward)
    return out


def concat_rows(rows: Sequence[Tensor]) -> Tensor:
    """Stack 1-D tensors of equal length into a matrix, one per row."""
    if len(rows) == 0:
        raise DimensionError("concat_rows needs at least one row")
    n = rows[0].data.size
    for r in rows:
        if r.data.ndim != 1 or r.data.size != n:
            raise DimensionError("concat_rows needs 1-D tensors of equal length")
    out = _track(np.stack([r.data for r in rows]), tuple(rows), "concat_rows")
    if out.requires_grad:
        rows = tuple(rows)
        def backward():
            for i, r in enumerate(rows):
                if r.grad is not None:
                    r.grad += out.grad[i]
        _ACTIVE_GRAPH._nodes.append(backward)
    return out


def take_rows(a: Tensor, indices: Sequence[int]) -> Tensor:
    """Gather rows of a 2-D tensor; duplicate indices accumulate in backward."""
    if a.data.ndim != 2:
        raise DimensionError(f"take_rows needs a matrix, got {a.shape}")
    idx = np.asarray(list(indices), dtype=np.intp)
    if idx.size == 0:
        raise DimensionError("take_rows needs at least one index")
    if idx.min() < 0 or idx.max() >= a.shape[0]:
        raise IndexError(f"row index out of range for {a.shape[0]} rows")
    out = _track(a.data[idx], (a,), "take_rows")
    if out.requires_grad:
        def backward():
            if a.grad is not None:
                np.add.at(a.grad, idx, out.grad)
        _ACTIVE_GRAPH._nodes.append(backward)
    return out


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise DimensionError(f"transpose needs a matrix, got {a.shape}")
    out = _track(a.data.T.copy(), (a,), "transpose")
    if out.requires_grad:
        def backward():
            if a.grad is not None:
                a.grad += out.grad.T
        _ACTIVE_GRAPH._nodes.append(backward)
    return out


def vsum(a: Tensor) -> Tensor:
    """Sum of all elements, as a scalar tensor."""
    out = _track(np.float64(a.data.sum()).reshape(()), (a,), "vsum")
    if out.requires_grad:
        def backward():
            if a.grad is not None:
                a.grad += out.grad
        _ACTIVE_GRAPH._nodes.append(backward)
    return out


def grad_check(graph_builder: Callable[[], Tensor], params: Sequence[Tensor],
               epsilon: float = 1e-5) -> float:
    """Compare tape gradients against central finite differences.

    ``graph_builder`` must rebuild the same scalar loss from the current
    contents of ``params`` on every call (no internal randomness).
    Returns the max relative error over every parameter component, with
    denominator max(|analytic|, |numeric|, 1e-8).
    """
    if not 1e-7 <= epsilon <= 1e-4:
        raise ValueError(f"epsilon {epsilon} outside [1e-7, 1e-4]")
    for p in params:
        p.zero_grad()
    with GradGraph() as g:
        loss = graph_builder()
    if loss.data.shape != ():
        raise DimensionError(f"grad_check needs a scalar loss, got {loss.shape}")
    g.backward(loss)
    analytic = [p.grad.copy() for p in params]

    worst = 0.0
    for p, ana in zip(params, analytic):
        flat = p.data.reshape(-1)
        aflat = ana.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + epsilon
            f_hi = graph_builder().item()
            flat[i] = keep - epsilon
            f_lo = graph_builder().item()
            flat[i] = keep
            numeric = (f_hi - f_lo) / (2.0 * epsilon)
            denom = max(abs(aflat[i]), abs(numeric), 1e-8)
            worst = max(worst, abs(aflat[i] - numeric) / denom)
    return worst
