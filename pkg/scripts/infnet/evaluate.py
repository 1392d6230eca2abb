from __future__ import annotations

import math
from typing import Dict, List, Optional

import numpy as np

from .errors import UndefinedMetricError
from .heads import EPS
from .metrics import auc_arrays, gauc
from .prepare import Batch, iter_batches
from .types import ScoredLabel


def predict_dataset(model, data: Batch, *, batch_size: int = 4096) -> np.ndarray:
    """(n, N_task) probabilities in dataset order, dropout off."""
    parts = [model.predict_proba(b) for b in iter_batches(data, batch_size)]
    if not parts:
        return np.zeros((0, model.schema.num_tasks))
    return np.concatenate(parts, axis=0)


def logloss(probs: np.ndarray, labels: np.ndarray, mask: np.ndarray, task_weights: np.ndarray) -> float:
    """Mean over rows of the λ-weighted BCE of observed labels."""
    if len(probs) == 0 or not mask.any():
        return math.nan
    p = np.clip(probs, EPS, 1.0 - EPS)
    per = -(labels * np.log(p) + (1.0 - labels) * np.log(1.0 - p))
    return float((per * task_weights * mask).sum() / len(probs))


def _nan_on_undefined(fn, *args, **kwargs) -> float:
    try:
        return fn(*args, **kwargs)
    except UndefinedMetricError:
        return math.nan


def _nanmean(xs: List[float]) -> float:
    vals = [x for x in xs if not math.isnan(x)]
    return float(np.mean(vals)) if vals else math.nan


def score_tasks(
    probs: np.ndarray, data: Batch, *, gauc_weighting: str = "impression"
) -> Dict[str, object]:
    n_tasks = probs.shape[1] if probs.ndim == 2 else 0
    aucs: List[float] = []
    gaucs: List[float] = []
    for i in range(n_tasks):
        seen = data.label_mask[:, i]
        scores = probs[seen, i]
        labels = data.labels[seen, i].astype(np.int64)
        aucs.append(_nan_on_undefined(auc_arrays, scores, labels))
        users = [u for u, s in zip(data.user_ids, seen) if s]
        items = [ScoredLabel(float(s), int(y), u) for s, y, u in zip(scores, labels, users)]
        gaucs.append(_nan_on_undefined(gauc, items, gauc_weighting))
    return {
        "auc": aucs,
        "gauc": gaucs,
        "mean_auc": _nanmean(aucs),
        "mean_gauc": _nanmean(gaucs),
    }


def evaluate_model(
    model, data: Batch, *, batch_size: int = 4096, gauc_weighting: Optional[str] = None
) -> Dict[str, object]:
    """Per-task AUC/gAUC (NaN where a task has a single class), their means, and logloss."""
    weighting = gauc_weighting or model.config.gauc_weighting
    probs = predict_dataset(model, data, batch_size=batch_size)
    out = score_tasks(probs, data, gauc_weighting=weighting)
    out["logloss"] = logloss(probs, data.labels, data.label_mask, model.heads.task_weights)
    out["task_logloss"] = [
        logloss(
            probs[data.label_mask[:, i], i:i + 1],
            data.labels[data.label_mask[:, i], i:i + 1],
            data.label_mask[data.label_mask[:, i], i:i + 1],
            np.ones(1),
        )
        for i in range(probs.shape[1])
    ]
    out["n_examples"] = len(data)
    return out
