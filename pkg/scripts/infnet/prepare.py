"""Normalize validated examples into index arrays and shuffle them into mini-batches."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, List, Optional, Sequence

import numpy as np

from .types import Example, FeatureSchema


@dataclass
class Batch:
    user_ids: List[str]
    # 0-based category per field, (B, M)
    cat_idx: np.ndarray
    # 0-based item per sequence slot, -1 on padding, (B, L)
    seq_idx: np.ndarray
    seq_mask: np.ndarray
    labels: np.ndarray
    label_mask: np.ndarray

    def __len__(self) -> int:
        return len(self.user_ids)

    def take(self, rows: Sequence[int]) -> "Batch":
        rows = np.asarray(rows, dtype=np.int64)
        return Batch(
            user_ids=[self.user_ids[i] for i in rows],
            cat_idx=self.cat_idx[rows],
            seq_idx=self.seq_idx[rows],
            seq_mask=self.seq_mask[rows],
            labels=self.labels[rows],
            label_mask=self.label_mask[rows],
        )


def window_sequence(items: Sequence[int], max_len: int) -> List[int]:
    """Keep the most recent ``max_len`` items (tail), right-pad with 0."""
    kept = list(items[-max_len:]) if max_len > 0 else []
    return kept + [0] * (max_len - len(kept))


def collate(examples: Sequence[Example], schema: FeatureSchema, *, validate: bool = True) -> Batch:
    n = len(examples)
    cat = np.zeros((n, schema.num_fields), dtype=np.int64)
    seq = np.full((n, schema.total_seq_len), -1, dtype=np.int64)
    labels = np.zeros((n, schema.num_tasks), dtype=np.float64)
    label_mask = np.zeros((n, schema.num_tasks), dtype=bool)
    spans = schema.behavior_spans()
    for r, ex in enumerate(examples):
        if validate:
            ex.validate(schema)
        cat[r] = np.asarray(ex.categorical_values, dtype=np.int64) - 1
        for (start, stop), items in zip(spans, ex.sequences):
            window = window_sequence(items, stop - start)
            seq[r, start:stop] = np.asarray(window, dtype=np.int64) - 1
        labels[r] = ex.labels
        label_mask[r] = ex.label_mask
    return Batch(
        user_ids=[ex.user_id for ex in examples],
        cat_idx=cat,
        seq_idx=seq,
        seq_mask=seq >= 0,
        labels=labels,
        label_mask=label_mask,
    )


def iter_batches(
    data: Batch, batch_size: int, rng: Optional[np.random.Generator] = None
) -> Iterator[Batch]:
    """Mini-batches in a permutation drawn from ``rng`` (dataset order when None)."""
    n = len(data)
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for start in range(0, n, batch_size):
        yield data.take(order[start:start + batch_size])
