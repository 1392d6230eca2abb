from __future__ import annotations

from .block import BlockParams, FlowParams, ForwardContext, block_forward, cross_attention, pgu, stack_forward
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import RunConfig, SyntheticSpec, TrainConfig, build_run_config, default_schema
from .dataset import read_dataset, write_dataset
from .errors import InfnetError
from .evaluate import evaluate_model
from .features import (
    EmbeddingTables,
    build_categorical_proxies,
    build_sequence_proxies,
    embed_categorical,
    embed_sequences,
    init_task_tokens,
    tokenize,
)
from .gradcheck import grad_check
from .heads import bce, multi_task_loss, predict
from .metrics import auc, gauc
from .model import INFNetModel
from .optim import Adagrad, Adam, adagrad_step, adam_step
from .prepare import collate
from .synthetic import generate_synthetic
from .tensor import Tensor, backward
from .trainer import apply_ablation, train
from .types import BlockState, Example, FeatureSchema, ScoredLabel, TokenSet

__all__ = [
    "Tensor",
    "backward",
    "grad_check",
    "FeatureSchema",
    "Example",
    "TokenSet",
    "BlockState",
    "ScoredLabel",
    "EmbeddingTables",
    "embed_categorical",
    "build_categorical_proxies",
    "embed_sequences",
    "build_sequence_proxies",
    "init_task_tokens",
    "tokenize",
    "FlowParams",
    "BlockParams",
    "ForwardContext",
    "cross_attention",
    "pgu",
    "block_forward",
    "stack_forward",
    "predict",
    "bce",
    "multi_task_loss",
    "INFNetModel",
    "auc",
    "gauc",
    "evaluate_model",
    "read_dataset",
    "write_dataset",
    "collate",
    "generate_synthetic",
    "SyntheticSpec",
    "TrainConfig",
    "RunConfig",
    "build_run_config",
    "default_schema",
    "train",
    "apply_ablation",
    "adam_step",
    "adagrad_step",
    "Adam",
    "Adagrad",
    "Checkpoint",
    "save_checkpoint",
    "load_checkpoint",
    "InfnetError",
]
