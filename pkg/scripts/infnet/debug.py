from __future__ import annotations

import math
from typing import Any, List, Mapping, Sequence

from .types import FeatureSchema


def _fmt(x: Any) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "  n/a "
    return f"{x:.4f}"


def format_schema(schema: FeatureSchema) -> str:
    return (
        f"M={schema.num_fields} cards={list(schema.cardinalities)} "
        f"F={schema.num_behaviors} lens={list(schema.max_lens)} vocabs={list(schema.vocab_sizes)} "
        f"tasks={schema.num_tasks} d={schema.embed_dim} m={schema.num_cat_proxies} "
        f"n_shared={schema.num_shared_task_tokens}"
    )


def format_metrics_report(metrics: Mapping[str, Any], *, split: str, title: str = "INFNet evaluation") -> str:
    lines: List[str] = []
    lines.append(f"=== {title} ({split}, {metrics.get('n_examples', 0)} examples) ===")
    lines.append(f"{'task':<8} {'AUC':>7} {'gAUC':>7} {'logloss':>8}")
    for i, (a, g, ll) in enumerate(zip(metrics["auc"], metrics["gauc"], metrics["task_logloss"]), 1):
        lines.append(f"{'task_' + str(i):<8} {_fmt(a):>7} {_fmt(g):>7} {_fmt(ll):>8}")
    lines.append(
        f"{'mean':<8} {_fmt(metrics['mean_auc']):>7} {_fmt(metrics['mean_gauc']):>7} {_fmt(metrics['logloss']):>8}"
    )
    return "\n".join(lines)


def format_parameter_report(total: int, groups: Mapping[str, int]) -> str:
    lines = [f"parameters: {total}"]
    for name, n in groups.items():
        lines.append(f"  {name:<12} {n:>9}  ({100.0 * n / total:.1f}%)" if total else f"  {name:<12} {n:>9}")
    return "\n".join(lines)


def format_ablation_report(table, seeds: Sequence[int]) -> str:
    lines = [f"=== Ablation (test AUC, mean over seeds {list(seeds)}) ===", table.to_string(float_format="%.4f")]
    if "full" in table.columns and "mean" in table.index:
        full = table.loc["mean", "full"]
        for col in table.columns:
            if col != "full":
                lines.append(f"full - {col}: {full - table.loc['mean', col]:+.4f}")
    return "\n".join(lines)
