"""Tab-separated result tables (pandas) and the dataset manifest."""
from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Any, Dict, List, Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import StorageError

VARIANT_COLUMNS = {
    "full": "full",
    "no_task_tokens": "w/o1",
    "no_homogeneous": "w/o2",
    "no_heterogeneous": "w/o3",
}


def task_labels(num_tasks: int) -> List[str]:
    return [f"task_{i + 1}" for i in range(num_tasks)]


def history_frame(history: Sequence[Mapping[str, Any]], num_tasks: int) -> pd.DataFrame:
    """step, loss, auc_1..N, gauc_1..N (2 + 2·N columns), one row per evaluation."""
    columns = ["step", "loss"] + [f"auc_{i + 1}" for i in range(num_tasks)] + [
        f"gauc_{i + 1}" for i in range(num_tasks)
    ]
    return pd.DataFrame([{c: h.get(c, math.nan) for c in columns} for h in history], columns=columns)


def metrics_frame(metrics: Mapping[str, Any]) -> pd.DataFrame:
    n = len(metrics["auc"])
    rows = [
        {"task": label, "auc": a, "gauc": g, "logloss": ll}
        for label, a, g, ll in zip(task_labels(n), metrics["auc"], metrics["gauc"], metrics["task_logloss"])
    ]
    rows.append(
        {"task": "mean", "auc": metrics["mean_auc"], "gauc": metrics["mean_gauc"], "logloss": metrics["logloss"]}
    )
    return pd.DataFrame(rows, columns=["task", "auc", "gauc", "logloss"])


def ablation_frame(runs: pd.DataFrame, num_tasks: int) -> pd.DataFrame:
    """Rows = tasks + mean, columns = variants; cells are seed-averaged test AUC."""
    labels = task_labels(num_tasks)
    table = runs.groupby(["variant", "task"], sort=False)["auc"].mean().unstack("variant")
    variants = [v for v in VARIANT_COLUMNS.values() if v in table.columns]
    table = table.reindex(index=labels, columns=variants)
    table.loc["mean"] = table.mean(axis=0)
    table.index.name = "task"
    return table


def runs_frame(records: Sequence[Mapping[str, Any]]) -> pd.DataFrame:
    """Long form: one row per (variant or value, seed, task)."""
    return pd.DataFrame(list(records))


def sweep_frame(runs: pd.DataFrame, param: str, num_tasks: int) -> pd.DataFrame:
    """Rows = swept values, columns = per-task seed-averaged test AUC plus their mean."""
    table = runs.groupby([param, "task"], sort=True)["auc"].mean().unstack("task")
    table = table.reindex(columns=task_labels(num_tasks))
    table.columns = [f"auc_{i + 1}" for i in range(num_tasks)]
    table["mean_auc"] = table.mean(axis=1)
    return table


def attention_frame(weights: np.ndarray, row_labels: Sequence[str], col_labels: Sequence[str]) -> pd.DataFrame:
    return pd.DataFrame(np.asarray(weights), index=list(row_labels), columns=list(col_labels))


def entropy_frame(tables: Mapping[str, pd.DataFrame]) -> pd.DataFrame:
    """Shannon entropy (nats) of every attention row, next to the largest weight and its column."""
    rows = []
    for name, df in tables.items():
        for query, weights in df.iterrows():
            w = weights.to_numpy(dtype=np.float64)
            nz = w[w > 0]
            rows.append(
                {
                    "matrix": name,
                    "query": query,
                    "entropy": float(-(nz * np.log(nz)).sum()),
                    "max_weight": float(w.max()) if len(w) else math.nan,
                    "argmax": df.columns[int(w.argmax())] if len(w) else "",
                }
            )
    return pd.DataFrame(rows, columns=["matrix", "query", "entropy", "max_weight", "argmax"])


def write_tsv(df: pd.DataFrame, path: Path, *, index: bool = False) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        df.to_csv(path, sep="\t", index=index, float_format="%.12g", lineterminator="\n")
    except OSError as exc:
        raise StorageError(f"cannot write {path}: {exc}") from exc
    return path


def write_json(obj: Dict[str, Any], path: Path) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as exc:
        raise StorageError(f"cannot write {path}: {exc}") from exc
    return path
