"""Run configuration: training, synthetic data and paths, parsed from ``key = value`` files."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Literal, Optional, Sequence, Tuple

from dotenv.parser import Binding, parse_stream

from .errors import ConfigError, SchemaViolationError
from .types import FeatureSchema

Ablation = Literal["full", "no_task_tokens", "no_homogeneous", "no_heterogeneous"]
OptimizerName = Literal["adam", "adagrad"]
GaucWeighting = Literal["impression", "uniform"]

ABLATIONS: Tuple[str, ...] = ("full", "no_task_tokens", "no_homogeneous", "no_heterogeneous")
# CLI spelling of the ablated variants
MODE_ALIASES: Dict[str, str] = {
    "full": "full",
    "wo1": "no_task_tokens",
    "wo2": "no_homogeneous",
    "wo3": "no_heterogeneous",
}
LEARNING_RATES = (1e-4, 3e-4, 1e-3)
L2_WEIGHTS = (0.0, 1e-7, 1e-6, 1e-5)
DROPOUT_RATES = (0.0, 0.1, 0.2)


def _in_grid(value: float, grid: Sequence[float]) -> bool:
    return any(math.isclose(value, g, rel_tol=1e-9, abs_tol=0.0) or value == g for g in grid)


@dataclass
class TrainConfig:
    batch_size: int = 4096
    learning_rate: float = 1e-3
    optimizer: OptimizerName = "adam"
    l2_weight: float = 0.0
    dropout: float = 0.0
    n_blocks: int = 2
    n_heads: int = 1
    # None means d_k = d (per head: d // n_heads)
    key_dim: Optional[int] = None
    patience: int = 5
    max_epochs: int = 30
    seed: int = 0
    ablation: Ablation = "full"
    # global-norm clip; 0 disables
    grad_clip: float = 10.0
    task_weights: Optional[Tuple[float, ...]] = None
    gauc_weighting: GaucWeighting = "impression"
    adam_betas: Tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    adagrad_eps: float = 1e-10

    def problems(self) -> List[str]:
        out: List[str] = []
        if self.batch_size < 1:
            out.append(f"batch_size must be >= 1 (got {self.batch_size})")
        # 0 freezes the parameters; only used to exercise the stopping rule
        if self.learning_rate != 0.0 and not _in_grid(self.learning_rate, LEARNING_RATES):
            out.append(f"learning_rate must be one of {LEARNING_RATES} or 0 (got {self.learning_rate})")
        if self.optimizer not in ("adam", "adagrad"):
            out.append(f"optimizer must be adam or adagrad (got {self.optimizer!r})")
        if not _in_grid(self.l2_weight, L2_WEIGHTS):
            out.append(f"l2_weight must be one of {L2_WEIGHTS} (got {self.l2_weight})")
        if not _in_grid(self.dropout, DROPOUT_RATES):
            out.append(f"dropout must be one of {DROPOUT_RATES} (got {self.dropout})")
        if self.n_blocks < 1:
            out.append(f"n_blocks must be >= 1 (got {self.n_blocks})")
        if self.n_heads < 1:
            out.append(f"n_heads must be >= 1 (got {self.n_heads})")
        if self.key_dim is not None and self.key_dim < 1:
            out.append(f"key_dim must be >= 1 (got {self.key_dim})")
        if self.patience < 1:
            out.append(f"patience must be >= 1 (got {self.patience})")
        if self.max_epochs < 1:
            out.append(f"max_epochs must be >= 1 (got {self.max_epochs})")
        if self.ablation not in ABLATIONS:
            out.append(f"ablation must be one of {ABLATIONS} (got {self.ablation!r})")
        if self.grad_clip < 0:
            out.append(f"grad_clip must be >= 0 (got {self.grad_clip})")
        if self.task_weights is not None and any(w <= 0 for w in self.task_weights):
            out.append(f"task_weights must all be > 0 (got {list(self.task_weights)})")
        if self.gauc_weighting not in ("impression", "uniform"):
            out.append(f"gauc_weighting must be impression or uniform (got {self.gauc_weighting!r})")
        return out

    def validate(self) -> None:
        probs = self.problems()
        if probs:
            raise ConfigError("; ".join(probs))

    def to_dict(self) -> Dict[str, Any]:
        d = asdict(self)
        d["adam_betas"] = list(self.adam_betas)
        d["task_weights"] = None if self.task_weights is None else list(self.task_weights)
        return d

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        kw = {k: v for k, v in d.items() if k in known}
        if kw.get("adam_betas") is not None:
            kw["adam_betas"] = tuple(float(x) for x in kw["adam_betas"])
        if kw.get("task_weights") is not None:
            kw["task_weights"] = tuple(float(x) for x in kw["task_weights"])
        return cls(**kw)


@dataclass
class SyntheticSpec:
    schema: FeatureSchema
    noise_rate: float = 0.05
    # probability that a task label is unobserved on an example
    mask_rate: float = 0.0
    n_train: int = 20000
    n_val: int = 5000
    n_test: int = 5000
    n_users: int = 500
    # None derives the rule stream from the generation seed
    rule_seed: Optional[int] = None

    def problems(self) -> List[str]:
        out: List[str] = []
        if not 0.0 <= self.noise_rate < 0.5:
            out.append(f"noise_rate must be in [0, 0.5) (got {self.noise_rate})")
        if not 0.0 <= self.mask_rate < 1.0:
            out.append(f"mask_rate must be in [0, 1) (got {self.mask_rate})")
        for name in ("n_train", "n_val", "n_test"):
            if getattr(self, name) < 0:
                out.append(f"{name} must be >= 0 (got {getattr(self, name)})")
        if self.n_users < 1:
            out.append(f"n_users must be >= 1 (got {self.n_users})")
        return out


def default_schema() -> FeatureSchema:
    return FeatureSchema(
        cardinalities=(20, 30, 12, 8),
        max_lens=(10, 10),
        vocab_sizes=(60, 60),
        num_tasks=3,
        embed_dim=16,
        num_cat_proxies=4,
        num_shared_task_tokens=2,
    )


# ---------------------------------------------------------------------------
# Flat key = value run configuration
# ---------------------------------------------------------------------------


def _int(s: str) -> int:
    return int(s.strip())


def _float(s: str) -> float:
    return float(s.strip())


def _opt_int(s: str) -> Optional[int]:
    s = s.strip()
    return None if s.lower() in ("", "none", "auto") else int(s)


def _int_list(s: str) -> Tuple[int, ...]:
    return tuple(int(x) for x in s.split(",") if x.strip())


def _float_list(s: str) -> Tuple[float, ...]:
    return tuple(float(x) for x in s.split(",") if x.strip())


def _opt_float_list(s: str) -> Optional[Tuple[float, ...]]:
    s = s.strip()
    return None if s.lower() in ("", "none") else _float_list(s)


def _str(s: str) -> str:
    return s.strip()


def _mode(s: str) -> str:
    s = s.strip()
    return MODE_ALIASES.get(s, s)


# key -> (parser, section, attribute)
KEYS: Dict[str, Tuple[Callable[[str], Any], str, str]] = {
    "cards": (_int_list, "schema", "cardinalities"),
    "lens": (_int_list, "schema", "max_lens"),
    "vocabs": (_int_list, "schema", "vocab_sizes"),
    "tasks": (_int, "schema", "num_tasks"),
    "d": (_int, "schema", "embed_dim"),
    "m": (_int, "schema", "num_cat_proxies"),
    "n_shared": (_int, "schema", "num_shared_task_tokens"),
    "noise_rate": (_float, "synthetic", "noise_rate"),
    "mask_rate": (_float, "synthetic", "mask_rate"),
    "n_train": (_int, "synthetic", "n_train"),
    "n_val": (_int, "synthetic", "n_val"),
    "n_test": (_int, "synthetic", "n_test"),
    "n_users": (_int, "synthetic", "n_users"),
    "rule_seed": (_opt_int, "synthetic", "rule_seed"),
    "batch_size": (_int, "train", "batch_size"),
    "learning_rate": (_float, "train", "learning_rate"),
    "optimizer": (_str, "train", "optimizer"),
    "l2_weight": (_float, "train", "l2_weight"),
    "dropout": (_float, "train", "dropout"),
    "n_blocks": (_int, "train", "n_blocks"),
    "n_heads": (_int, "train", "n_heads"),
    "key_dim": (_opt_int, "train", "key_dim"),
    "patience": (_int, "train", "patience"),
    "max_epochs": (_int, "train", "max_epochs"),
    "seed": (_int, "train", "seed"),
    "ablation": (_mode, "train", "ablation"),
    "grad_clip": (_float, "train", "grad_clip"),
    "task_weights": (_opt_float_list, "train", "task_weights"),
    "gauc_weighting": (_str, "train", "gauc_weighting"),
    "data_dir": (_str, "run", "data_dir"),
    "out_dir": (_str, "run", "out_dir"),
    "checkpoint": (_str, "run", "checkpoint"),
    "split": (_str, "run", "split"),
    "seeds": (_int_list, "run", "seeds"),
    "sweep_param": (_str, "run", "sweep_param"),
    "sweep_values": (_int_list, "run", "sweep_values"),
    "example_index": (_int, "run", "example_index"),
    "gradcheck_eps": (_float, "run", "gradcheck_eps"),
    "gradcheck_tol": (_float, "run", "gradcheck_tol"),
    "eval_batch_size": (_int, "run", "eval_batch_size"),
}

SWEEP_PARAMS = ("m", "n_shared")
SPLITS = ("train", "val", "test")


@dataclass
class RunConfig:
    schema: FeatureSchema = field(default_factory=default_schema)
    train: TrainConfig = field(default_factory=TrainConfig)
    synthetic: Optional[SyntheticSpec] = None
    data_dir: str = "data/infnet"
    out_dir: str = "runs/infnet"
    checkpoint: str = ""
    split: str = "test"
    seeds: Tuple[int, ...] = (1, 2, 3)
    sweep_param: str = "m"
    sweep_values: Tuple[int, ...] = (2, 4, 8)
    example_index: int = 0
    gradcheck_eps: float = 1e-4
    gradcheck_tol: float = 1e-4
    eval_batch_size: int = 4096
    # keys explicitly set by file/overrides (schema keys matter when a dataset header disagrees)
    explicit_keys: Tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.synthetic is None:
            self.synthetic = SyntheticSpec(schema=self.schema)

    def problems(self) -> List[str]:
        out: List[str] = []
        try:
            self.schema.validate()
        except SchemaViolationError as exc:
            out.append(str(exc))
        out.extend(self.train.problems())
        out.extend(self.synthetic.problems())
        if self.train.task_weights is not None and len(self.train.task_weights) != self.schema.num_tasks:
            out.append(
                f"task_weights has {len(self.train.task_weights)} entries for {self.schema.num_tasks} tasks"
            )
        d = self.schema.embed_dim
        if d % self.train.n_heads:
            out.append(f"d={d} is not divisible by n_heads={self.train.n_heads}")
        if self.split not in SPLITS:
            out.append(f"split must be one of {SPLITS} (got {self.split!r})")
        if not self.seeds:
            out.append("seeds must list at least one seed")
        if self.sweep_param not in SWEEP_PARAMS:
            out.append(f"sweep_param must be one of {SWEEP_PARAMS} (got {self.sweep_param!r})")
        if any(v < 1 for v in self.sweep_values):
            out.append(f"sweep_values must all be >= 1 (got {list(self.sweep_values)})")
        if self.example_index < 0:
            out.append(f"example_index must be >= 0 (got {self.example_index})")
        if self.gradcheck_eps <= 0 or self.gradcheck_tol <= 0:
            out.append("gradcheck_eps and gradcheck_tol must be > 0")
        if self.eval_batch_size < 1:
            out.append(f"eval_batch_size must be >= 1 (got {self.eval_batch_size})")
        return out

    def validate(self) -> "RunConfig":
        probs = self.problems()
        if probs:
            raise ConfigError("invalid configuration: " + "; ".join(probs))
        return self

    @property
    def out_path(self) -> Path:
        return Path(self.out_dir)

    @property
    def data_path(self) -> Path:
        return Path(self.data_dir)


def parse_override(text: str) -> Tuple[str, str]:
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not key=value")
    k, v = text.split("=", 1)
    return k.strip(), v.strip()


def _binding_line(binding: Binding) -> int:
    # the parser folds blank lines into the binding that follows them
    text = binding.original.string
    return binding.original.line + text[: len(text) - len(text.lstrip())].count("\n")


def read_config_file(path: Path) -> List[Tuple[str, str]]:
    """Ordered ``(key, value)`` pairs from a flat ``key = value`` file with ``#`` comments.

    A line that does not parse as ``key = value`` raises ConfigError naming its line number.
    """
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    pairs: List[Tuple[str, str]] = []
    with path.open(encoding="utf-8") as stream:
        for binding in parse_stream(stream):
            if binding.error:
                raise ConfigError(
                    f"{path}:{_binding_line(binding)}: expected 'key = value', "
                    f"got {binding.original.string.strip()!r}"
                )
            if binding.key is None:
                continue
            if binding.value is None:
                raise ConfigError(f"{path}:{_binding_line(binding)}: key {binding.key!r} has no value")
            pairs.append((binding.key, binding.value))
    return pairs


def build_run_config(
    config_path: Optional[Path] = None,
    overrides: Sequence[str] = (),
    *,
    seed: Optional[int] = None,
    out_dir: Optional[str] = None,
    mode: Optional[str] = None,
    checkpoint: Optional[str] = None,
    split: Optional[str] = None,
) -> RunConfig:
    """Defaults < config file < ``--set`` overrides (last wins) < dedicated flags. Validates everything."""
    pairs: List[Tuple[str, str]] = []
    if config_path is not None:
        pairs.extend(read_config_file(Path(config_path)))
    pairs.extend(parse_override(o) for o in overrides)
    if seed is not None:
        pairs.append(("seed", str(seed)))
    if out_dir is not None:
        pairs.append(("out_dir", out_dir))
    if mode is not None:
        pairs.append(("ablation", mode))
    if checkpoint is not None:
        pairs.append(("checkpoint", checkpoint))
    if split is not None:
        pairs.append(("split", split))

    values: Dict[str, Any] = {}
    problems: List[str] = []
    for k, raw in pairs:
        spec = KEYS.get(k)
        if spec is None:
            problems.append(f"unknown key {k!r}")
            continue
        parser = spec[0]
        try:
            values[k] = parser(raw)
        except ValueError:
            problems.append(f"key {k!r}: cannot parse {raw!r}")
    if problems:
        raise ConfigError("invalid configuration: " + "; ".join(problems))

    sections: Dict[str, Dict[str, Any]] = {"schema": {}, "synthetic": {}, "train": {}, "run": {}}
    for k, v in values.items():
        _parser, section, attr = KEYS[k]
        sections[section][attr] = v

    schema = replace(default_schema(), **sections["schema"])
    train = replace(TrainConfig(), **sections["train"])
    synthetic = replace(SyntheticSpec(schema=schema), **sections["synthetic"])
    cfg = RunConfig(
        schema=schema,
        train=train,
        synthetic=synthetic,
        explicit_keys=tuple(values),
        **sections["run"],
    )
    return cfg.validate()
