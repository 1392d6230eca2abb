"""INFNet command line: synthetic data, training, evaluation, ablations, proxy sweeps,
attention dumps and gradient checks.

Examples (from the repository root)::

    python scripts/run_infnet.py gen-data --config infnet.conf
    python scripts/run_infnet.py train --config infnet.conf --set n_blocks=1 --seed 7
    python scripts/run_infnet.py eval --config infnet.conf --split test
    python scripts/run_infnet.py ablate --config infnet.conf --set seeds=1,2,3
    python scripts/run_infnet.py dump-attention --config infnet.conf --set example_index=3
    python scripts/run_infnet.py grad-check
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from .checkpoint import Checkpoint, load_checkpoint
from .config import ABLATIONS, MODE_ALIASES, SPLITS, RunConfig, TrainConfig, build_run_config
from .dataset import check_compatible, load_examples, write_dataset
from .debug import format_ablation_report, format_metrics_report, format_parameter_report, format_schema
from .errors import ConfigError, InfnetError, exit_code_for
from .evaluate import evaluate_model
from .prepare import collate
from .serialize import (
    VARIANT_COLUMNS,
    ablation_frame,
    attention_frame,
    entropy_frame,
    history_frame,
    metrics_frame,
    runs_frame,
    sweep_frame,
    task_labels,
    write_json,
    write_tsv,
)
from .synthetic import generate_synthetic
from .trainer import BEST_NAME, LAST_NAME, model_from_checkpoint, train
from .types import Example, FeatureSchema

logger = logging.getLogger(__name__)

# final-block matrices written by dump-attention: file stem -> (flow, query kind, key family)
ATTENTION_DUMPS: Dict[str, Tuple[str, str, str]] = {
    "task_from_categorical": ("that_from_c", "task", "C"),
    "task_from_sequence": ("that_from_s", "task", "S"),
    "shared_from_categorical": ("tp_from_c", "shared", "C"),
    "shared_from_sequence": ("tp_from_s", "shared", "S"),
}
SCHEMA_DATA_KEYS = ("cards", "lens", "vocabs", "tasks")


def split_path(cfg: RunConfig, split: str) -> Path:
    return cfg.data_path / f"{split}.txt"


def resolve_schema(cfg: RunConfig, declared: FeatureSchema, source: str) -> FeatureSchema:
    """Data dimensions from the dataset header, model widths from the run config.

    Data keys set explicitly in the config must agree with the header.
    """
    if any(k in cfg.explicit_keys for k in SCHEMA_DATA_KEYS):
        check_compatible(declared, cfg.schema, source)
    return replace(
        cfg.schema,
        cardinalities=declared.cardinalities,
        max_lens=declared.max_lens,
        vocab_sizes=declared.vocab_sizes,
        num_tasks=declared.num_tasks,
    )


def load_split(cfg: RunConfig, split: str, schema: Optional[FeatureSchema] = None) -> Tuple[FeatureSchema, List[Example]]:
    path = split_path(cfg, split)
    declared, examples = load_examples(path)
    if schema is not None:
        check_compatible(declared, schema, str(path))
        return schema, examples
    return resolve_schema(cfg, declared, str(path)), examples


def _checkpoint_path(cfg: RunConfig) -> Path:
    return Path(cfg.checkpoint) if cfg.checkpoint else cfg.out_path / BEST_NAME


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_gen_data(cfg: RunConfig) -> int:
    data = generate_synthetic(cfg.synthetic, cfg.train.seed)
    for split, examples in data.splits.items():
        write_dataset(split_path(cfg, split), cfg.schema, examples)
    manifest = data.manifest()
    write_json(manifest, cfg.data_path / "manifest.json")
    print(f"wrote {', '.join(f'{k}={len(v)}' for k, v in data.splits.items())} to {cfg.data_path}")
    print("ceiling AUC per task: " + ", ".join(f"{c:.4f}" for c in manifest["ceiling_auc"]))
    return 0


def _train_one(
    cfg: RunConfig,
    train_cfg: TrainConfig,
    schema: FeatureSchema,
    train_examples: Sequence[Example],
    val_examples: Sequence[Example],
    out_dir: Path,
    resume: Optional[Checkpoint] = None,
):
    result = train(
        train_cfg,
        schema,
        collate(train_examples, schema),
        collate(val_examples, schema),
        out_dir=out_dir,
        resume=resume,
        eval_batch_size=cfg.eval_batch_size,
    )
    write_tsv(history_frame(result.history, schema.num_tasks), out_dir / "history.tsv")
    return result


def cmd_train(cfg: RunConfig, *, resume: bool = False) -> int:
    schema, train_examples = load_split(cfg, "train")
    _, val_examples = load_split(cfg, "val", schema)
    previous = None
    if resume:
        path = Path(cfg.checkpoint) if cfg.checkpoint else cfg.out_path / LAST_NAME
        previous = load_checkpoint(path)
        check_compatible(previous.schema, schema, str(path))
        logger.info("resuming from %s", path)
    result = _train_one(cfg, cfg.train, schema, train_examples, val_examples, cfg.out_path, previous)
    last = result.history[-1] if result.history else {}
    print(
        f"trained {last.get('epoch', 0)} epochs ({last.get('step', 0)} steps); "
        f"best val mean AUC {result.best.best_metric}; checkpoint {cfg.out_path / BEST_NAME}"
    )
    return 0


def cmd_eval(cfg: RunConfig) -> int:
    path = _checkpoint_path(cfg)
    ckpt = load_checkpoint(path)
    _, examples = load_split(cfg, cfg.split, ckpt.schema)
    model = model_from_checkpoint(ckpt)
    metrics = evaluate_model(model, collate(examples, ckpt.schema), batch_size=cfg.eval_batch_size,
                             gauc_weighting=cfg.train.gauc_weighting)
    print(format_schema(ckpt.schema))
    print(format_parameter_report(model.parameter_count(), model.parameter_groups()))
    print(format_metrics_report(metrics, split=cfg.split))
    write_tsv(metrics_frame(metrics), cfg.out_path / f"metrics_{cfg.split}.tsv")
    return 0


def _test_records(cfg: RunConfig, result, schema: FeatureSchema, test_examples: Sequence[Example],
                  **labels: Any) -> List[Dict[str, Any]]:
    model = model_from_checkpoint(result.best)
    metrics = evaluate_model(model, collate(test_examples, schema), batch_size=cfg.eval_batch_size,
                             gauc_weighting=cfg.train.gauc_weighting)
    return [
        {**labels, "task": task, "auc": a, "gauc": g}
        for task, a, g in zip(task_labels(schema.num_tasks), metrics["auc"], metrics["gauc"])
    ]


def cmd_ablate(cfg: RunConfig) -> int:
    """Train every variant under identical data, seeds and checkpoint selection."""
    schema, train_examples = load_split(cfg, "train")
    _, val_examples = load_split(cfg, "val", schema)
    _, test_examples = load_split(cfg, "test", schema)
    records: List[Dict[str, Any]] = []
    for seed in cfg.seeds:
        for mode in ABLATIONS:
            logger.info("ablation variant %s seed %d", mode, seed)
            train_cfg = replace(cfg.train, seed=seed, ablation=mode)
            out_dir = cfg.out_path / "ablation" / mode / f"seed{seed}"
            result = _train_one(cfg, train_cfg, schema, train_examples, val_examples, out_dir)
            records.extend(
                _test_records(cfg, result, schema, test_examples, variant=VARIANT_COLUMNS[mode], seed=seed)
            )
    runs = runs_frame(records)
    table = ablation_frame(runs, schema.num_tasks)
    write_tsv(runs, cfg.out_path / "ablation_runs.tsv")
    write_tsv(table, cfg.out_path / "ablation.tsv", index=True)
    print(format_ablation_report(table, cfg.seeds))
    return 0


def cmd_sweep(cfg: RunConfig) -> int:
    """Vary one proxy count, everything else fixed."""
    base, train_examples = load_split(cfg, "train")
    _, val_examples = load_split(cfg, "val", base)
    _, test_examples = load_split(cfg, "test", base)
    attr = {"m": "num_cat_proxies", "n_shared": "num_shared_task_tokens"}[cfg.sweep_param]
    records: List[Dict[str, Any]] = []
    for value in cfg.sweep_values:
        schema = replace(base, **{attr: value})
        for seed in cfg.seeds:
            logger.info("sweep %s=%d seed %d", cfg.sweep_param, value, seed)
            train_cfg = replace(cfg.train, seed=seed)
            out_dir = cfg.out_path / "sweep" / f"{cfg.sweep_param}{value}" / f"seed{seed}"
            result = _train_one(cfg, train_cfg, schema, train_examples, val_examples, out_dir)
            records.extend(
                _test_records(cfg, result, schema, test_examples, **{cfg.sweep_param: value, "seed": seed})
            )
    runs = runs_frame(records)
    table = sweep_frame(runs, cfg.sweep_param, base.num_tasks)
    write_tsv(runs, cfg.out_path / f"sweep_{cfg.sweep_param}_runs.tsv")
    write_tsv(table, cfg.out_path / f"sweep_{cfg.sweep_param}.tsv", index=True)
    print(table.to_string(float_format="%.4f"))
    return 0


def attention_columns(schema: FeatureSchema, family: str) -> List[str]:
    if family == "C":
        return [f"C{j + 1}" for j in range(schema.num_fields)]
    return [f"S{a + 1}_{t + 1}" for a, n in enumerate(schema.max_lens) for t in range(n)]


def cmd_dump_attention(cfg: RunConfig) -> int:
    ckpt = load_checkpoint(_checkpoint_path(cfg))
    schema = ckpt.schema
    if ckpt.config.ablation in ("no_task_tokens", "no_heterogeneous"):
        raise ConfigError(f"a {ckpt.config.ablation} model has no task cross-attention to dump")
    _, examples = load_split(cfg, cfg.split, schema)
    if cfg.example_index >= len(examples):
        raise ConfigError(f"example_index {cfg.example_index} outside the {len(examples)} {cfg.split} examples")
    example = examples[cfg.example_index]
    example.validate(schema)
    model = model_from_checkpoint(ckpt)
    _, state = model.forward(example, record_attention=True)
    last = len(model.blocks) - 1
    rows = {
        "task": [f"task_{i + 1}" for i in range(schema.num_tasks)],
        "shared": [f"shared_{k + 1}" for k in range(schema.num_shared_task_tokens)],
    }
    tables = {}
    for stem, (flow, query, family) in ATTENTION_DUMPS.items():
        weights = state.attention[f"block{last}.{flow}"]
        df = attention_frame(weights, rows[query], attention_columns(schema, family))
        tables[stem] = df
        write_tsv(df, cfg.out_path / f"attention_{stem}.tsv", index=True)
    entropy = entropy_frame(tables)
    write_tsv(entropy, cfg.out_path / "attention_entropy.tsv")
    print(f"user {example.user_id}: final-block attention written to {cfg.out_path}")
    print(entropy.to_string(index=False, float_format="%.4f"))
    return 0


def cmd_grad_check(cfg: RunConfig) -> int:
    from .gradcheck import format_report, grad_check_suite

    reports = grad_check_suite(cfg.gradcheck_eps, cfg.gradcheck_tol, seed=cfg.train.seed)
    print(format_report(reports))
    return 0 if all(r.passed for r in reports) else 1


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "sweep": cmd_sweep,
    "dump-attention": cmd_dump_attention,
    "grad-check": cmd_grad_check,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="Flat key = value run configuration")
    common.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="Override one config key (repeatable, last wins)",
    )
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out-dir", default=None, help="Directory for checkpoints and tables")
    common.add_argument("--checkpoint", default=None, help="Checkpoint path (default: <out-dir>/best.ckpt)")
    common.add_argument("--split", choices=SPLITS, default=None)
    common.add_argument("--mode", choices=sorted(MODE_ALIASES), default=None, help="Model variant")
    common.add_argument("-v", "--verbose", action="store_true", help="DEBUG logging")

    ap = argparse.ArgumentParser(prog="infnet", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", parents=[common], help="Write synthetic train/val/test files and a manifest")
    tr = sub.add_parser("train", parents=[common], help="Train and write best.ckpt + history.tsv")
    tr.add_argument("--resume", action="store_true", help="Continue from <out-dir>/last.ckpt (or --checkpoint)")
    sub.add_parser("eval", parents=[common], help="Per-task AUC/gAUC of a checkpoint on one split")
    sub.add_parser("ablate", parents=[common], help="Train full, w/o1, w/o2, w/o3 and compare on test")
    sub.add_parser("sweep", parents=[common], help="Vary m or n_shared and compare on test")
    sub.add_parser("dump-attention", parents=[common], help="Final-block task attention for one example")
    sub.add_parser("grad-check", parents=[common], help="Finite-difference check of every component")
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = build_run_config(
            args.config,
            args.overrides,
            seed=args.seed,
            out_dir=args.out_dir,
            mode=MODE_ALIASES[args.mode] if args.mode else None,
            checkpoint=args.checkpoint,
            split=args.split,
        )
        if args.command == "train":
            return cmd_train(cfg, resume=args.resume)
        return COMMANDS[args.command](cfg)
    except (InfnetError, OSError) as exc:
        print(f"infnet {args.command}: {exc}", file=sys.stderr)
        return exit_code_for(exc)


if __name__ == "__main__":
    raise SystemExit(main())
