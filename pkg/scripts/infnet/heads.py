"""Per-task prediction heads and the weighted multi-task BCE objective."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .errors import NoSignalError, SchemaViolationError, ShapeError
from .params import MLP, ParamStore
from .tensor import (
    Tensor,
    add,
    clip,
    concat,
    constant,
    log,
    mul,
    reshape,
    scale,
    sigmoid,
    slice_rows,
    sum_all,
)

EPS = 1e-12


@dataclass
class HeadParams:
    heads: List[MLP]
    # λ_i, fixed (not trained)
    task_weights: np.ndarray

    @classmethod
    def create(
        cls, store: ParamStore, num_tasks: int, d: int, task_weights: Optional[Sequence[float]] = None
    ) -> "HeadParams":
        weights = np.ones(num_tasks) if task_weights is None else np.asarray(task_weights, dtype=np.float64)
        if weights.shape != (num_tasks,) or (weights <= 0).any():
            raise ShapeError(f"task weights must be {num_tasks} positive values, got {list(weights)}")
        return cls(
            heads=[MLP.create(store, f"head.{i}", d, d, 1) for i in range(num_tasks)],
            task_weights=weights,
        )

    def __len__(self) -> int:
        return len(self.heads)


def predict(
    T_final: Tensor,
    heads: HeadParams,
    *,
    dropout_rate: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """ŷ (..., N_task) with ŷ_i = sigmoid(MLP_i(row i of T_final))."""
    if T_final.shape[-2] != len(heads):
        raise ShapeError(f"predict: {T_final.shape[-2]} task rows for {len(heads)} heads")
    logits = []
    for i, head in enumerate(heads.heads):
        row = slice_rows(T_final, i, i + 1)
        logits.append(head(row, dropout_rate=dropout_rate, rng=rng))
    # each logit is (..., 1, 1); lay tasks out along the last axis
    z = concat(logits, axis=-1)
    return sigmoid(_drop_row_axis(z))


def _drop_row_axis(x: Tensor) -> Tensor:
    return reshape(x, x.shape[:-2] + (x.shape[-1],))


def bce(probs: Tensor, labels) -> Tensor:
    """Elementwise −[y ln ŷ + (1−y) ln(1−ŷ)] with ŷ clamped to [ε, 1−ε]."""
    y = np.asarray(labels, dtype=np.float64)
    if not np.isin(y, (0.0, 1.0)).all():
        bad = y[~np.isin(y, (0.0, 1.0))].flat[0]
        raise SchemaViolationError(f"label {bad} is not 0/1")
    if y.shape != probs.shape:
        raise ShapeError(f"bce: labels {y.shape} vs predictions {probs.shape}")
    p = clip(probs, EPS, 1.0 - EPS)
    pos = mul(log(p), constant(y))
    neg = mul(log(add(scale(p, -1.0), 1.0)), constant(1.0 - y))
    return scale(add(pos, neg), -1.0)


def multi_task_loss(probs: Tensor, labels, label_mask, task_weights) -> Tensor:
    """Σ_i λ_i·bce over unmasked tasks, averaged over the batch rows."""
    mask = np.asarray(label_mask, dtype=bool)
    y = np.asarray(labels, dtype=np.float64)
    if mask.shape != probs.shape or y.shape != probs.shape:
        raise ShapeError(f"multi_task_loss: predictions {probs.shape}, labels {y.shape}, mask {mask.shape}")
    if not mask.any():
        raise NoSignalError("every task label is masked in this batch")
    lam = np.asarray(task_weights, dtype=np.float64)
    # masked labels are never read
    y = np.where(mask, y, 0.0)
    weights = np.broadcast_to(lam, probs.shape) * mask
    per_entry = mul(bce(probs, y), constant(weights))
    n_rows = probs.shape[0] if probs.ndim > 1 else 1
    return scale(sum_all(per_entry), 1.0 / n_rows)
