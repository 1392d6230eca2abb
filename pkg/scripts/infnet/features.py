"""Layer-0 tokenization: categorical, sequence and task tokens plus their proxies."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Tuple, Union

import numpy as np

from .errors import SchemaViolationError
from .params import MLP, Linear, ParamStore
from .prepare import Batch, collate
from .tensor import (
    Tensor,
    broadcast_batch,
    concat_rows,
    constant,
    embedding,
    flatten,
    mul,
    reshape,
    slice_rows,
    sum_rows,
)
from .types import Example, FeatureSchema, TokenSet

Source = Union[Example, Batch]


@dataclass
class EmbeddingTables:
    schema: FeatureSchema
    cat_tables: List[Tensor]
    seq_tables: List[Tensor]
    # None when the model runs without task tokens
    task_tokens: Optional[Tensor]
    shared_task_tokens: Optional[Tensor]
    phi_cat: MLP
    phi_seq: Linear

    @classmethod
    def create(cls, schema: FeatureSchema, store: ParamStore, *, with_task_tokens: bool = True) -> "EmbeddingTables":
        d, m = schema.embed_dim, schema.num_cat_proxies
        cat_tables = [store.uniform(f"embed.cat.{j}", (v, d)) for j, v in enumerate(schema.cardinalities)]
        seq_tables = [store.uniform(f"embed.seq.{a}", (w, d)) for a, w in enumerate(schema.vocab_sizes)]
        task = shared = None
        if with_task_tokens:
            task, shared = _task_tokens(schema, store)
        return cls(
            schema=schema,
            cat_tables=cat_tables,
            seq_tables=seq_tables,
            task_tokens=task,
            shared_task_tokens=shared,
            phi_cat=MLP.create(store, "phi_cat", schema.num_fields * d, m * d, m * d),
            phi_seq=Linear.create(store, "phi_seq", d, d),
        )


def _task_tokens(schema: FeatureSchema, store: ParamStore) -> Tuple[Tensor, Tensor]:
    d = schema.embed_dim
    return (
        store.uniform("tokens.task", (schema.num_tasks, d)),
        store.uniform("tokens.shared", (schema.num_shared_task_tokens, d)),
    )


def init_task_tokens(schema: FeatureSchema, rng_seed: int) -> Tuple[Tensor, Tensor]:
    """Learnable task tokens (N_task×d) and shared task tokens (N_s×d) for ``rng_seed``."""
    return _task_tokens(schema, ParamStore(rng_seed, schema.embed_dim))


def _as_batch(source: Source, schema: FeatureSchema) -> Tuple[Batch, bool]:
    if isinstance(source, Example):
        return collate([source], schema), True
    return source, False


def _unbatch(x: Tensor) -> Tensor:
    return reshape(x, x.shape[1:])


def embed_categorical(source: Source, tables: EmbeddingTables) -> Tensor:
    """C: row j is the v_j-th row of field j's table. (M×d) for an Example, (B×M×d) for a Batch."""
    batch, single = _as_batch(source, tables.schema)
    cols = []
    for j, table in enumerate(tables.cat_tables):
        idx = batch.cat_idx[:, j:j + 1]
        bad = (idx < 0) | (idx >= table.shape[0])
        if bad.any():
            raise SchemaViolationError(
                f"categorical field {j + 1}: value {int(idx[bad][0]) + 1} outside [1, {table.shape[0]}]"
            )
        cols.append(embedding(table, idx))
    C = concat_rows(cols)
    return _unbatch(C) if single else C


def build_categorical_proxies(
    C: Tensor,
    phi_cat: MLP,
    num_proxies: int,
    *,
    dropout_rate: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """C̃ = reshape(φ_cat(flatten(C)), m×d)."""
    d = C.shape[-1]
    out = phi_cat(flatten(C), dropout_rate=dropout_rate, rng=rng)
    return reshape(out, C.shape[:-2] + (num_proxies, d))


def embed_sequences(source: Source, tables: EmbeddingTables, schema: FeatureSchema) -> Tuple[Tensor, np.ndarray]:
    """S (L×d) with behavior blocks concatenated in order, plus the real-token mask."""
    batch, single = _as_batch(source, schema)
    blocks = []
    for a, ((start, stop), table) in enumerate(zip(schema.behavior_spans(), tables.seq_tables)):
        idx = batch.seq_idx[:, start:stop]
        if (idx >= table.shape[0]).any():
            bad = int(idx[idx >= table.shape[0]][0]) + 1
            raise SchemaViolationError(f"sequence {a + 1}: item {bad} outside [1, {table.shape[0]}]")
        blocks.append(embedding(table, idx))
    S = concat_rows(blocks)
    mask = batch.seq_mask
    if single:
        return _unbatch(S), mask[0]
    return S, mask


def build_sequence_proxies(
    S: Tensor, seq_mask: np.ndarray, phi_seq: Linear, schema: FeatureSchema
) -> Tensor:
    """Row a of S̃ is the sum of φ_seq over the real tokens of behavior a."""
    projected = phi_seq(S)
    keep = np.broadcast_to(np.asarray(seq_mask, dtype=np.float64)[..., None], projected.shape)
    projected = mul(projected, constant(keep))
    rows = [sum_rows(slice_rows(projected, start, stop)) for start, stop in schema.behavior_spans()]
    return concat_rows(rows)


def tokenize(
    source: Source,
    tables: EmbeddingTables,
    *,
    dropout_rate: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> TokenSet:
    schema = tables.schema
    C = embed_categorical(source, tables)
    S, mask = embed_sequences(source, tables, schema)
    C_proxy = build_categorical_proxies(C, tables.phi_cat, schema.num_cat_proxies, dropout_rate=dropout_rate, rng=rng)
    S_proxy = build_sequence_proxies(S, mask, tables.phi_seq, schema)
    T = T_proxy = None
    if tables.task_tokens is not None:
        lead = C.shape[:-2]
        T = broadcast_batch(tables.task_tokens, lead) if lead else tables.task_tokens
        T_proxy = broadcast_batch(tables.shared_task_tokens, lead) if lead else tables.shared_task_tokens
    return TokenSet(C=C, C_proxy=C_proxy, S=S, S_proxy=S_proxy, T=T, T_proxy=T_proxy, seq_mask=mask)
