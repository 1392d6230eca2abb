"""Shared datatypes for INFNet tokenization, training and evaluation."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from .errors import SchemaViolationError
from .tensor import Tensor


@dataclass(frozen=True)
class FeatureSchema:
    cardinalities: Tuple[int, ...]
    max_lens: Tuple[int, ...]
    vocab_sizes: Tuple[int, ...]
    num_tasks: int
    embed_dim: int = 16
    num_cat_proxies: int = 4
    num_shared_task_tokens: int = 2

    @property
    def num_fields(self) -> int:
        return len(self.cardinalities)

    @property
    def num_behaviors(self) -> int:
        return len(self.max_lens)

    @property
    def total_seq_len(self) -> int:
        return int(sum(self.max_lens))

    def behavior_spans(self) -> List[Tuple[int, int]]:
        """``[start, stop)`` row range of each behavior block inside S."""
        out: List[Tuple[int, int]] = []
        start = 0
        for n in self.max_lens:
            out.append((start, start + n))
            start += n
        return out

    def validate(self) -> None:
        problems: List[str] = []
        if not self.cardinalities:
            problems.append("at least one categorical field is required (M >= 1)")
        if not self.max_lens:
            problems.append("at least one behavior sequence is required (F >= 1)")
        if len(self.vocab_sizes) != len(self.max_lens):
            problems.append(
                f"vocabs has {len(self.vocab_sizes)} entries but lens has {len(self.max_lens)}"
            )
        for j, v in enumerate(self.cardinalities):
            if v < 1:
                problems.append(f"cardinality of field {j + 1} must be >= 1 (got {v})")
        for a, n in enumerate(self.max_lens):
            if n < 1:
                problems.append(f"max length of sequence {a + 1} must be >= 1 (got {n})")
        for a, w in enumerate(self.vocab_sizes):
            if w < 1:
                problems.append(f"vocabulary of sequence {a + 1} must be >= 1 (got {w})")
        for name in ("num_tasks", "embed_dim", "num_cat_proxies", "num_shared_task_tokens"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be >= 1 (got {getattr(self, name)})")
        if problems:
            raise SchemaViolationError("invalid schema: " + "; ".join(problems))

    def data_signature(self) -> Dict[str, Any]:
        """The part of the schema a dataset file declares (model widths excluded)."""
        return {
            "cards": list(self.cardinalities),
            "lens": list(self.max_lens),
            "vocabs": list(self.vocab_sizes),
            "tasks": self.num_tasks,
        }

    def to_dict(self) -> Dict[str, Any]:
        return {
            **self.data_signature(),
            "d": self.embed_dim,
            "m": self.num_cat_proxies,
            "n_shared": self.num_shared_task_tokens,
        }

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "FeatureSchema":
        return cls(
            cardinalities=tuple(int(x) for x in d["cards"]),
            max_lens=tuple(int(x) for x in d["lens"]),
            vocab_sizes=tuple(int(x) for x in d["vocabs"]),
            num_tasks=int(d["tasks"]),
            embed_dim=int(d.get("d", 16)),
            num_cat_proxies=int(d.get("m", 4)),
            num_shared_task_tokens=int(d.get("n_shared", 2)),
        )


@dataclass
class Example:
    user_id: str
    categorical_values: List[int]
    # one list per behavior type, oldest first, 1-based item ids
    sequences: List[List[int]]
    labels: List[int]
    # True where the task's label is observed; unobserved labels are stored as 0
    label_mask: List[bool]

    def validate(self, schema: FeatureSchema) -> None:
        if len(self.categorical_values) != schema.num_fields:
            raise SchemaViolationError(
                f"expected {schema.num_fields} categorical values, got {len(self.categorical_values)}"
            )
        if len(self.sequences) != schema.num_behaviors:
            raise SchemaViolationError(
                f"expected {schema.num_behaviors} sequences, got {len(self.sequences)}"
            )
        if len(self.labels) != schema.num_tasks or len(self.label_mask) != schema.num_tasks:
            raise SchemaViolationError(
                f"expected {schema.num_tasks} labels and mask entries, "
                f"got {len(self.labels)} and {len(self.label_mask)}"
            )
        for j, (v, card) in enumerate(zip(self.categorical_values, schema.cardinalities)):
            if not 1 <= v <= card:
                raise SchemaViolationError(
                    f"categorical field {j + 1}: value {v} outside [1, {card}]"
                )
        for a, (items, vocab) in enumerate(zip(self.sequences, schema.vocab_sizes)):
            for it in items:
                if not 1 <= it <= vocab:
                    raise SchemaViolationError(
                        f"sequence {a + 1}: item {it} outside [1, {vocab}]"
                    )
        for i, y in enumerate(self.labels):
            if y not in (0, 1):
                raise SchemaViolationError(f"task {i + 1}: label {y} is not 0/1")


@dataclass
class TokenSet:
    C: Tensor
    C_proxy: Tensor
    S: Tensor
    S_proxy: Tensor
    T: Optional[Tensor]
    T_proxy: Optional[Tensor]
    # True on real (non-pad) rows of S; shape (..., L)
    seq_mask: np.ndarray


@dataclass
class BlockState(TokenSet):
    T_hat: Optional[Tensor] = None
    # flow name -> attention weights (..., q, k), forward values only
    attention: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def from_tokens(cls, tokens: TokenSet) -> "BlockState":
        return cls(
            C=tokens.C,
            C_proxy=tokens.C_proxy,
            S=tokens.S,
            S_proxy=tokens.S_proxy,
            T=tokens.T,
            T_proxy=tokens.T_proxy,
            seq_mask=tokens.seq_mask,
        )


@dataclass
class ScoredLabel:
    score: float
    label: int
    user_id: str


@dataclass
class GradCheckReport:
    name: str
    max_rel_error: float
    tol: float
    n_checked: int
    # parameter/input name with the worst error
    worst: str = ""
    # entries on a ReLU/clip kink or with both derivatives below the zero floor
    n_skipped: int = 0

    @property
    def passed(self) -> bool:
        return self.n_checked > 0 and self.max_rel_error <= self.tol
