"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every operation acts on the trailing two axes as a matrix; leading axes are a
folded batch. Broadcasting is limited to: 2-D parameters against a batch in
``matmul``, scalars, and the explicit row-broadcast ops ``add_row``/``mul_row``.
Any other shape disagreement raises ``ShapeError``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ShapeError

Array = np.ndarray
BackwardFn = Callable[[Array], Sequence[Optional[Array]]]
Scalar = Union[int, float]

# largest/smallest doubles strictly inside (0, 1)
_ONE_MINUS = float(np.nextafter(1.0, 0.0))
_TINY = float(np.nextafter(0.0, 1.0))


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, *, name: str = ""):
        self.data: Array = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[Array] = None
        self.name = name
        self.op = "leaf"
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[BackwardFn] = None

    @classmethod
    def from_op(
        cls,
        data: Array,
        parents: Sequence["Tensor"],
        backward: BackwardFn,
        op: str,
    ) -> "Tensor":
        """Wrap an op result; ``backward(grad_out)`` returns one grad (or None) per parent."""
        out = cls.__new__(cls)
        out.data = np.asarray(data, dtype=np.float64)
        out.requires_grad = any(p.requires_grad for p in parents)
        out.grad = None
        out.name = ""
        out.op = op
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError(f"item() needs a single element, tensor has shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{label}, requires_grad={self.requires_grad})"


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else constant(x)


def _unbroadcast(grad: Array, shape: Tuple[int, ...]) -> Array:
    """Sum ``grad`` down to ``shape`` over axes that were broadcast."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _require_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _require_matrix(op: str, x: Tensor) -> None:
    if x.ndim < 2:
        raise ShapeError(f"{op}: expected a matrix (ndim >= 2), got shape {x.shape}")


# ---------------------------------------------------------------------------
# Tape and backward
# ---------------------------------------------------------------------------


@dataclass
class Tape:
    """Recorded nodes reachable from a root, inputs before consumers."""

    root: Tensor
    nodes: List[Tensor] = field(default_factory=list)

    @classmethod
    def record(cls, root: Tensor) -> "Tape":
        order: List[Tensor] = []
        seen = set()
        stack: List[Tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        return cls(root=root, nodes=order)

    def leaves(self) -> List[Tensor]:
        return [n for n in self.nodes if n.is_leaf]

    def run(self, seed: Optional[Array] = None) -> None:
        grads = {id(self.root): np.ones_like(self.root.data) if seed is None else seed}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                node.grad = np.array(g, dtype=np.float64) if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for p, pg in zip(node._parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                prev = grads.get(id(p))
                grads[id(p)] = pg if prev is None else prev + pg


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every requires_grad leaf reachable from ``loss``."""
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    Tape.record(loss).run()


# ---------------------------------------------------------------------------
# Matrix ops
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _require_matrix("matmul", a)
    _require_matrix("matmul", b)
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner extents differ, {a.shape} x {b.shape}")
    ab, bb = a.shape[:-2], b.shape[:-2]
    if ab and bb and ab != bb:
        raise ShapeError(f"matmul: batch extents differ, {a.shape} x {b.shape}")
    out = np.matmul(a.data, b.data)

    def _backward(g: Array):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2)) if a.requires_grad else None
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g) if b.requires_grad else None
        return (
            None if ga is None else _unbroadcast(ga, a.shape),
            None if gb is None else _unbroadcast(gb, b.shape),
        )

    return Tensor.from_op(out, (a, b), _backward, "matmul")


def transpose(x: Tensor) -> Tensor:
    _require_matrix("transpose", x)

    def _backward(g: Array):
        return (np.swapaxes(g, -1, -2),)

    return Tensor.from_op(np.swapaxes(x.data, -1, -2), (x,), _backward, "transpose")


def softmax_rows(x: Tensor, mask: Optional[Array] = None) -> Tensor:
    """Row softmax with per-row max subtraction.

    ``mask`` (broadcastable to ``x``) marks admissible columns; excluded columns
    get weight exactly 0 and a row with no admissible column is all zeros.
    """
    z = x.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), z.shape)
        z = np.where(mask, z, -np.inf)
    row_max = z.max(axis=-1, keepdims=True)
    row_max = np.where(np.isfinite(row_max), row_max, 0.0)
    e = np.exp(z - row_max)
    total = e.sum(axis=-1, keepdims=True)
    y = np.divide(e, total, out=np.zeros_like(e), where=total > 0)

    def _backward(g: Array):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return Tensor.from_op(y, (x,), _backward, "softmax_rows")


# ---------------------------------------------------------------------------
# Elementwise ops
# ---------------------------------------------------------------------------


def add(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        c = float(b)

        def _backward_scalar(g: Array):
            return (g,)

        return Tensor.from_op(a.data + c, (a,), _backward_scalar, "add_scalar")
    _require_same_shape("add", a, b)

    def _backward(g: Array):
        return g, g

    return Tensor.from_op(a.data + b.data, (a, b), _backward, "add")


def mul(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        return scale(a, float(b))
    _require_same_shape("mul", a, b)

    def _backward(g: Array):
        return g * b.data, g * a.data

    return Tensor.from_op(a.data * b.data, (a, b), _backward, "mul")


def scale(x: Tensor, c: Scalar) -> Tensor:
    c = float(c)

    def _backward(g: Array):
        return (g * c,)

    return Tensor.from_op(x.data * c, (x,), _backward, "scale")


def _check_row(op: str, x: Tensor, row: Tensor) -> None:
    if row.shape[-1:] != x.shape[-1:] or (row.ndim >= 2 and row.shape[-2] != 1):
        raise ShapeError(f"{op}: row shape {row.shape} does not broadcast over {x.shape}")
    try:
        target = np.broadcast_shapes(x.shape, row.shape)
    except ValueError as exc:
        raise ShapeError(f"{op}: row shape {row.shape} does not broadcast over {x.shape}") from exc
    if target != x.shape:
        raise ShapeError(f"{op}: row shape {row.shape} does not broadcast over {x.shape}")


def add_row(x: Tensor, row: Tensor) -> Tensor:
    """``x + row`` with ``row`` of shape (n,) or (..., 1, n) repeated over every row of ``x``."""
    _check_row("add_row", x, row)

    def _backward(g: Array):
        return g, _unbroadcast(g, row.shape)

    return Tensor.from_op(x.data + row.data, (x, row), _backward, "add_row")


def mul_row(x: Tensor, row: Tensor) -> Tensor:
    """``x ⊙ row`` with the row broadcast over every row of ``x`` (channel-wise gating)."""
    _check_row("mul_row", x, row)

    def _backward(g: Array):
        return g * row.data, _unbroadcast(g * x.data, row.shape)

    return Tensor.from_op(x.data * row.data, (x, row), _backward, "mul_row")


def relu(x: Tensor) -> Tensor:
    positive = x.data > 0

    def _backward(g: Array):
        return (g * positive,)

    return Tensor.from_op(np.where(positive, x.data, 0.0), (x,), _backward, "relu")


def sigmoid(x: Tensor) -> Tensor:
    e = np.exp(-np.abs(x.data))
    y = np.where(x.data >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    y = np.clip(y, _TINY, _ONE_MINUS)

    def _backward(g: Array):
        return (g * y * (1.0 - y),)

    return Tensor.from_op(y, (x,), _backward, "sigmoid")


def log(x: Tensor) -> Tensor:
    def _backward(g: Array):
        return (g / x.data,)

    return Tensor.from_op(np.log(x.data), (x,), _backward, "log")


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    inside = (x.data >= lo) & (x.data <= hi)

    def _backward(g: Array):
        return (g * inside,)

    return Tensor.from_op(np.clip(x.data, lo, hi), (x,), _backward, "clip")


def dropout(x: Tensor, rate: float, rng: Optional[np.random.Generator]) -> Tensor:
    """Inverted dropout; identity when ``rate == 0`` or ``rng`` is None (evaluation)."""
    if rate <= 0.0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)

    def _backward(g: Array):
        return (g * keep,)

    return Tensor.from_op(x.data * keep, (x,), _backward, "dropout")


# ---------------------------------------------------------------------------
# Layout ops
# ---------------------------------------------------------------------------


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(n) for n in shape)
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}") from exc

    def _backward(g: Array):
        return (g.reshape(x.shape),)

    return Tensor.from_op(out, (x,), _backward, "reshape")


def flatten(x: Tensor) -> Tensor:
    """Merge the trailing two axes row-major: (..., m, n) -> (..., m*n)."""
    _require_matrix("flatten", x)
    return reshape(x, x.shape[:-2] + (x.shape[-2] * x.shape[-1],))


def concat(xs: Sequence[Tensor], axis: int) -> Tensor:
    if not xs:
        raise ShapeError("concat: no tensors given")
    ndim = xs[0].ndim
    ax = axis % ndim
    for t in xs[1:]:
        if t.ndim != ndim or t.shape[:ax] + t.shape[ax + 1:] != xs[0].shape[:ax] + xs[0].shape[ax + 1:]:
            raise ShapeError(
                f"concat: shapes {[u.shape for u in xs]} disagree outside axis {axis}"
            )
    bounds = np.cumsum([t.shape[ax] for t in xs])[:-1]

    def _backward(g: Array):
        return tuple(np.split(g, bounds, axis=ax))

    return Tensor.from_op(np.concatenate([t.data for t in xs], axis=ax), tuple(xs), _backward, "concat")


def concat_rows(xs: Sequence[Tensor]) -> Tensor:
    for t in xs:
        _require_matrix("concat_rows", t)
    return concat(xs, axis=-2)


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    _require_matrix("slice_rows", x)
    if not 0 <= start < stop <= x.shape[-2]:
        raise ShapeError(f"slice_rows: [{start}, {stop}) outside {x.shape[-2]} rows")

    def _backward(g: Array):
        full = np.zeros_like(x.data)
        full[..., start:stop, :] = g
        return (full,)

    return Tensor.from_op(x.data[..., start:stop, :], (x,), _backward, "slice_rows")


def broadcast_batch(x: Tensor, batch_shape: Sequence[int]) -> Tensor:
    """Repeat ``x`` over new leading axes; the gradient sums over them."""
    batch_shape = tuple(int(n) for n in batch_shape)
    out = np.broadcast_to(x.data, batch_shape + x.shape).copy()

    def _backward(g: Array):
        return (_unbroadcast(g, x.shape),)

    return Tensor.from_op(out, (x,), _backward, "broadcast_batch")


def embedding(table: Tensor, indices) -> Tensor:
    """Gather rows of ``table``; index -1 yields a zero row that receives no gradient."""
    idx = np.asarray(indices, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError(f"embedding: table must be 2-D, got {table.shape}")
    n_rows = table.shape[0]
    bad = (idx < -1) | (idx >= n_rows)
    if bad.any():
        raise ShapeError(
            f"embedding: index {int(idx[bad].flat[0])} outside table of {n_rows} rows"
        )
    valid = idx >= 0
    out = np.zeros(idx.shape + (table.shape[1],))
    out[valid] = table.data[idx[valid]]

    def _backward(g: Array):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx[valid], g[valid])
        return (gt,)

    return Tensor.from_op(out, (table,), _backward, "embedding")


# ---------------------------------------------------------------------------
# Reductions
# ---------------------------------------------------------------------------


def sum_rows(x: Tensor) -> Tensor:
    """Column sums: (..., m, n) -> (..., 1, n)."""
    _require_matrix("sum_rows", x)
    if x.shape[-2] < 1:
        raise ShapeError("sum_rows: empty input")

    def _backward(g: Array):
        return (np.broadcast_to(g, x.shape).copy(),)

    return Tensor.from_op(x.data.sum(axis=-2, keepdims=True), (x,), _backward, "sum_rows")


def sum_all(x: Tensor) -> Tensor:
    def _backward(g: Array):
        return (np.full(x.shape, float(g)),)

    return Tensor.from_op(np.asarray(x.data.sum()), (x,), _backward, "sum_all")


def mean(x: Tensor) -> Tensor:
    if x.size == 0:
        raise ShapeError("mean: empty input")
    return scale(sum_all(x), 1.0 / x.size)
