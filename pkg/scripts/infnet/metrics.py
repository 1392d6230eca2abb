"""AUC by rank sum with mid-ranks for ties, and user-grouped gAUC."""
from __future__ import annotations

from typing import Sequence

import numpy as np
import pandas as pd

from .errors import UndefinedMetricError
from .types import ScoredLabel


def auc_arrays(scores, labels) -> float:
    """P(random positive outranks random negative), ties credited 0.5. O(n log n)."""
    s = pd.Series(np.asarray(scores, dtype=np.float64))
    y = np.asarray(labels, dtype=np.int64)
    if len(s) != len(y):
        raise ValueError(f"{len(s)} scores for {len(y)} labels")
    if not np.isfinite(s.to_numpy()).all():
        raise ValueError("scores must be finite")
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos + n_neg != len(y):
        raise ValueError("labels must be 0/1")
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError(f"AUC needs both classes (positives={n_pos}, negatives={n_neg})")
    ranks = s.rank(method="average").to_numpy()
    rank_sum = ranks[y == 1].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def auc(items: Sequence[ScoredLabel]) -> float:
    return auc_arrays([it.score for it in items], [it.label for it in items])


def _frame(items: Sequence[ScoredLabel]) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "user_id": [it.user_id for it in items],
            "score": [it.score for it in items],
            "label": [it.label for it in items],
        }
    )


def per_user_auc(items: Sequence[ScoredLabel]) -> pd.DataFrame:
    """One row per eligible user (both classes present): ``user_id``, ``auc``, ``impressions``."""
    rows = []
    for user, group in _frame(items).groupby("user_id", sort=True):
        if group["label"].nunique() < 2:
            continue
        rows.append(
            {
                "user_id": user,
                "auc": auc_arrays(group["score"].to_numpy(), group["label"].to_numpy()),
                "impressions": len(group),
            }
        )
    return pd.DataFrame(rows, columns=["user_id", "auc", "impressions"])


def gauc(items: Sequence[ScoredLabel], weighting: str = "impression") -> float:
    """Average per-user AUC over users with both classes, weighted by impressions or uniformly."""
    if weighting not in ("impression", "uniform"):
        raise ValueError(f"unknown gAUC weighting {weighting!r}")
    users = per_user_auc(items)
    if users.empty:
        raise UndefinedMetricError("gAUC needs at least one user with both classes")
    if weighting == "uniform":
        return float(users["auc"].mean())
    weights = users["impressions"].to_numpy(dtype=np.float64)
    return float(np.dot(users["auc"].to_numpy(), weights) / weights.sum())
