"""Synthetic multi-task data with planted, task-dependent interaction rules.

Task i's clean label is 1 iff categorical field ``a_i`` takes a value in a
task-specific subset AND behavior sequence ``b_i`` contains an item from a
task-specific subset. The (field, behavior) pair differs across tasks, so the
interaction a model must learn depends on the task. Labels are then flipped
independently with probability ``noise_rate``.

Both subsets are sized so the clean base rate sits near one half, which keeps
the noisy-label AUC ceiling near ``1 - noise_rate``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .config import SyntheticSpec
from .errors import SyntheticSpecError
from .types import Example, FeatureSchema

logger = logging.getLogger(__name__)

SPLIT_STREAMS = {"train": 1, "val": 2, "test": 3}


@dataclass(frozen=True)
class PlantedRule:
    task: int
    # 0-based field / behavior positions
    field: int
    behavior: int
    # 1-based values that satisfy each half of the conjunction
    categories: Tuple[int, ...]
    items: Tuple[int, ...]

    def fires(self, ex: Example, schema: FeatureSchema) -> bool:
        if ex.categorical_values[self.field] not in self.categories:
            return False
        window = ex.sequences[self.behavior][-schema.max_lens[self.behavior]:]
        allowed = set(self.items)
        return any(it in allowed for it in window)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "task": self.task + 1,
            "field": self.field + 1,
            "behavior": self.behavior + 1,
            "categories": list(self.categories),
            "items": list(self.items),
        }


def window_hit_rate(n_items: int, vocab: int, max_len: int) -> float:
    """P(a uniform history of uniform length 0..max_len holds one of ``n_items`` items)."""
    miss = 1.0 - n_items / vocab
    return float(np.mean([1.0 - miss ** length for length in range(max_len + 1)]))


def base_rate(rule: PlantedRule, schema: FeatureSchema) -> float:
    """P(clean label = 1) when values are uniform and sequence lengths uniform on 0..n."""
    V = schema.cardinalities[rule.field]
    hit = window_hit_rate(
        len(rule.items), schema.vocab_sizes[rule.behavior], schema.max_lens[rule.behavior]
    )
    return len(rule.categories) / V * hit


def ceiling_auc(pi: float, noise_rate: float) -> float:
    """AUC of the clean rule scored against labels flipped with probability ``noise_rate``."""
    if noise_rate == 0.0:
        return 1.0
    p1 = pi * (1.0 - noise_rate) + (1.0 - pi) * noise_rate
    p0 = 1.0 - p1
    if p1 <= 0.0 or p0 <= 0.0:
        return float("nan")
    a = pi * (1.0 - noise_rate) / p1
    b = pi * noise_rate / p0
    return 0.5 + 0.5 * (a - b)


TARGET_BASE_RATE = 0.5


def _category_subset_size(cardinality: int) -> int:
    # each conjunct fires with probability about sqrt(0.5)
    return max(1, min(cardinality - 1, round(cardinality * math.sqrt(TARGET_BASE_RATE))))


def _item_subset_size(vocab: int, max_len: int, category_rate: float) -> int:
    """Item-subset size whose window hit rate brings the rule's base rate closest to one half."""
    return min(
        range(1, vocab),
        key=lambda k: abs(category_rate * window_hit_rate(k, vocab, max_len) - TARGET_BASE_RATE),
    )


def plant_rules(schema: FeatureSchema, rng: np.random.Generator) -> List[PlantedRule]:
    M, F = schema.num_fields, schema.num_behaviors
    if M * F < schema.num_tasks:
        raise SyntheticSpecError(
            f"{schema.num_tasks} tasks need distinct (field, behavior) pairs but only {M}x{F} exist"
        )
    rules: List[PlantedRule] = []
    for i in range(schema.num_tasks):
        field = i % M
        behavior = (i // M + field) % F
        V = schema.cardinalities[field]
        W = schema.vocab_sizes[behavior]
        if V < 2:
            raise SyntheticSpecError(f"field {field + 1} needs at least 2 categories to host a rule (has {V})")
        if W < 2:
            raise SyntheticSpecError(f"sequence {behavior + 1} needs at least 2 items to host a rule (has {W})")
        n_cats = _category_subset_size(V)
        n_items = _item_subset_size(W, schema.max_lens[behavior], n_cats / V)
        cats = rng.choice(np.arange(1, V + 1), size=n_cats, replace=False)
        items = rng.choice(np.arange(1, W + 1), size=n_items, replace=False)
        rules.append(
            PlantedRule(
                task=i,
                field=field,
                behavior=behavior,
                categories=tuple(sorted(int(c) for c in cats)),
                items=tuple(sorted(int(t) for t in items)),
            )
        )
    return rules


def _draw_features(schema: FeatureSchema, rng: np.random.Generator, n_users: int) -> Tuple[str, List[int], List[List[int]]]:
    user = f"u{int(rng.integers(n_users))}"
    cats = [int(rng.integers(1, v + 1)) for v in schema.cardinalities]
    seqs = []
    for n, w in zip(schema.max_lens, schema.vocab_sizes):
        length = int(rng.integers(0, n + 1))
        seqs.append([int(x) for x in rng.integers(1, w + 1, size=length)])
    return user, cats, seqs


def _draw_split(
    spec: SyntheticSpec, rules: Sequence[PlantedRule], n: int, rng: np.random.Generator
) -> List[Example]:
    schema = spec.schema
    out: List[Example] = []
    for _ in range(n):
        user, cats, seqs = _draw_features(schema, rng, spec.n_users)
        ex = Example(user_id=user, categorical_values=cats, sequences=seqs, labels=[], label_mask=[])
        flips = rng.random(schema.num_tasks) < spec.noise_rate
        observed = rng.random(schema.num_tasks) >= spec.mask_rate
        labels = []
        for rule, flip, seen in zip(rules, flips, observed):
            y = int(rule.fires(ex, schema)) ^ int(flip)
            labels.append(y if seen else 0)
        ex.labels = labels
        ex.label_mask = [bool(s) for s in observed]
        out.append(ex)
    return out


@dataclass
class SyntheticData:
    schema: FeatureSchema
    seed: int
    noise_rate: float
    rules: List[PlantedRule]
    splits: Dict[str, List[Example]]

    def base_rates(self) -> List[float]:
        return [base_rate(r, self.schema) for r in self.rules]

    def ceilings(self) -> List[float]:
        return [ceiling_auc(pi, self.noise_rate) for pi in self.base_rates()]

    def manifest(self) -> Dict[str, Any]:
        return {
            "seed": self.seed,
            "noise_rate": self.noise_rate,
            "schema": self.schema.to_dict(),
            "splits": {k: len(v) for k, v in self.splits.items()},
            "rules": [r.to_dict() for r in self.rules],
            "base_rates": self.base_rates(),
            "ceiling_auc": self.ceilings(),
        }


def generate_synthetic(spec: SyntheticSpec, seed: int) -> SyntheticData:
    """Deterministic train/val/test splits; each split draws from its own sub-seed."""
    problems = spec.problems()
    if problems:
        raise SyntheticSpecError("; ".join(problems))
    spec.schema.validate()
    rule_seed = seed if spec.rule_seed is None else spec.rule_seed
    rules = plant_rules(spec.schema, np.random.default_rng([rule_seed, 0]))
    sizes = {"train": spec.n_train, "val": spec.n_val, "test": spec.n_test}
    splits = {
        name: _draw_split(spec, rules, sizes[name], np.random.default_rng([seed, stream]))
        for name, stream in SPLIT_STREAMS.items()
    }
    logger.info(
        "generated synthetic data seed=%d noise=%.3f sizes=%s", seed, spec.noise_rate, sizes
    )
    return SyntheticData(
        schema=spec.schema, seed=seed, noise_rate=spec.noise_rate, rules=rules, splits=splits
    )


def oracle_scores(rules: Sequence[PlantedRule], examples: Sequence[Example], schema: FeatureSchema) -> np.ndarray:
    """(n, N_task) 0/1 scores from evaluating the clean rules."""
    return np.array(
        [[float(r.fires(ex, schema)) for r in rules] for ex in examples], dtype=np.float64
    ).reshape(len(examples), len(rules))


def random_examples(
    schema: FeatureSchema, n: int, seed: int, *, mask_rate: float = 0.0, n_users: int = 5,
    rng: Optional[np.random.Generator] = None,
) -> List[Example]:
    """Unstructured examples with random labels, for shape and gradient checks."""
    rng = rng or np.random.default_rng(seed)
    out = []
    for _ in range(n):
        user, cats, seqs = _draw_features(schema, rng, n_users)
        labels = [int(x) for x in rng.integers(0, 2, size=schema.num_tasks)]
        observed = [bool(x) for x in rng.random(schema.num_tasks) >= mask_rate]
        if not any(observed):
            observed[int(rng.integers(schema.num_tasks))] = True
        labels = [y if seen else 0 for y, seen in zip(labels, observed)]
        out.append(Example(user_id=user, categorical_values=cats, sequences=seqs, labels=labels, label_mask=observed))
    return out
