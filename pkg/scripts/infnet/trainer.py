"""Mini-batch training with validation-driven early stopping and resumable checkpoints."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np

from .checkpoint import Checkpoint, save_checkpoint
from .config import TrainConfig
from .errors import DivergenceError
from .evaluate import evaluate_model
from .model import INFNetModel
from .optim import build_optimizer, clip_grad_norm
from .prepare import Batch, collate, iter_batches
from .tensor import backward
from .types import Example, FeatureSchema

logger = logging.getLogger(__name__)

Data = Union[Batch, Sequence[Example]]

BEST_NAME = "best.ckpt"
LAST_NAME = "last.ckpt"


@dataclass
class EarlyStopping:
    """Strict improvement on a maximized metric; stops after ``patience`` misses in a row."""

    patience: int
    best: Optional[float] = None
    bad_evals: int = 0

    def update(self, metric: float) -> bool:
        """Record one evaluation; True when it improved on the best so far."""
        improved = self.best is None or (
            not math.isnan(metric) and (math.isnan(self.best) or metric > self.best)
        )
        if improved:
            self.best = metric
            self.bad_evals = 0
        else:
            self.bad_evals += 1
        return improved

    @property
    def exhausted(self) -> bool:
        return self.bad_evals >= self.patience


@dataclass
class TrainResult:
    best: Checkpoint
    last: Checkpoint
    history: List[Dict[str, Any]] = field(default_factory=list)
    model: Optional[INFNetModel] = None

    @property
    def stopped_early(self) -> bool:
        return self.last.bad_evals >= self.last.config.patience


def _as_batch(data: Data, schema: FeatureSchema) -> Batch:
    return data if isinstance(data, Batch) else collate(list(data), schema)


def apply_ablation(model: INFNetModel, mode: str) -> INFNetModel:
    """The model under ``mode``; ``full`` on a full model (or any same mode) is the identity."""
    return model.with_mode(mode)


def history_record(epoch: int, step: int, loss: float, metrics: Dict[str, Any]) -> Dict[str, Any]:
    rec: Dict[str, Any] = {"epoch": epoch, "step": step, "loss": loss}
    for i, v in enumerate(metrics["auc"]):
        rec[f"auc_{i + 1}"] = v
    for i, v in enumerate(metrics["gauc"]):
        rec[f"gauc_{i + 1}"] = v
    rec["mean_auc"] = metrics["mean_auc"]
    rec["val_logloss"] = metrics["logloss"]
    return rec


def _snapshot(model: INFNetModel, opt, stopper: EarlyStopping, step: int, epoch: int,
              history: List[Dict[str, Any]], best_params: Dict[str, np.ndarray]) -> Checkpoint:
    return Checkpoint(
        schema=model.schema,
        config=model.config,
        params=model.state_dict(),
        best_params={k: v.copy() for k, v in best_params.items()},
        optimizer_state=opt.state_dict(),
        optimizer_step=opt.t,
        step=step,
        epoch=epoch,
        best_metric=stopper.best,
        bad_evals=stopper.bad_evals,
        history=[dict(h) for h in history],
    )


def train(
    config: TrainConfig,
    schema: FeatureSchema,
    train_data: Data,
    val_data: Data,
    *,
    out_dir: Optional[Path] = None,
    resume: Optional[Checkpoint] = None,
    eval_batch_size: int = 4096,
) -> TrainResult:
    """Train until patience runs out or ``max_epochs``; returns the best and last checkpoints.

    Shuffling and dropout draw from generators seeded by ``(seed, epoch)``, so a
    run resumed from an end-of-epoch checkpoint continues exactly like an
    uninterrupted one.
    """
    config.validate()
    train_batch = _as_batch(train_data, schema)
    val_batch = _as_batch(val_data, schema)
    model = INFNetModel(schema, config)
    opt = build_optimizer(config)
    stopper = EarlyStopping(config.patience)
    history: List[Dict[str, Any]] = []
    best_params: Dict[str, np.ndarray] = {}
    step = epoch = 0

    if resume is not None:
        model.load_state_dict(resume.params)
        opt.load_state_dict(resume.optimizer_state, resume.optimizer_step)
        stopper.best, stopper.bad_evals = resume.best_metric, resume.bad_evals
        history = [dict(h) for h in resume.history]
        best_params = {k: v.copy() for k, v in resume.best_params.items()}
        step, epoch = resume.step, resume.epoch
        logger.info("resuming at epoch %d step %d (best %.5f)", epoch, step, stopper.best or float("nan"))
    else:
        logger.info(
            "training seed=%d ablation=%s blocks=%d params=%d groups=%s",
            config.seed, config.ablation, config.n_blocks, model.parameter_count(), model.parameter_groups(),
        )

    out = Path(out_dir) if out_dir is not None else None
    params = model.parameters()
    while epoch < config.max_epochs and not stopper.exhausted:
        shuffle_rng = np.random.default_rng([config.seed, epoch, 1])
        dropout_rng = np.random.default_rng([config.seed, epoch, 2]) if config.dropout > 0 else None
        losses: List[float] = []
        for batch in iter_batches(train_batch, config.batch_size, shuffle_rng):
            if not batch.label_mask.any():
                logger.debug("skipping batch with no observed labels at step %d", step)
                continue
            model.zero_grad()
            loss, _ = model.loss(batch, rng=dropout_rng)
            value = loss.item()
            if not math.isfinite(value):
                raise DivergenceError(f"training loss is {value} (epoch {epoch + 1})", step + 1)
            backward(loss)
            clip_grad_norm(params, config.grad_clip)
            opt.step(params)
            step += 1
            losses.append(value)
        epoch += 1

        metrics = evaluate_model(
            model, val_batch, batch_size=eval_batch_size, gauc_weighting=config.gauc_weighting
        )
        mean_loss = float(np.mean(losses)) if losses else math.nan
        history.append(history_record(epoch, step, mean_loss, metrics))
        if stopper.update(metrics["mean_auc"]):
            best_params = model.state_dict()
            if out is not None:
                best = _snapshot(model, opt, stopper, step, epoch, history, {})
                best.params = {k: v.copy() for k, v in best_params.items()}
                save_checkpoint(out / BEST_NAME, best)
        logger.info(
            "epoch %d step %d loss %.5f val_auc %.5f (best %.5f, %d/%d without improvement)",
            epoch, step, mean_loss, metrics["mean_auc"], stopper.best, stopper.bad_evals, config.patience,
        )
        if out is not None:
            save_checkpoint(out / LAST_NAME, _snapshot(model, opt, stopper, step, epoch, history, best_params))

    last = _snapshot(model, opt, stopper, step, epoch, history, best_params)
    best = replace(last, params={k: v.copy() for k, v in (best_params or last.params).items()}, best_params={})
    if stopper.exhausted:
        logger.info("early stop after %d evaluations without improvement", stopper.bad_evals)
    return TrainResult(best=best, last=last, history=history, model=model)


def model_from_checkpoint(ckpt: Checkpoint, *, ablation: Optional[str] = None) -> INFNetModel:
    config = ckpt.config if ablation is None else replace(ckpt.config, ablation=ablation)
    model = INFNetModel(ckpt.schema, config)
    model.load_state_dict(ckpt.params, strict=ablation is None or ablation == ckpt.config.ablation)
    return model
