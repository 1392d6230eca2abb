"""INFNetModel: tokenization, the block stack and the per-task heads behind one forward call."""
from __future__ import annotations

import logging
from dataclasses import replace
from typing import Dict, List, Optional, Set, Tuple, Union

import numpy as np

from .block import FLOWS, BlockParams, ForwardContext, stack_forward
from .config import TrainConfig
from .features import EmbeddingTables, tokenize
from .heads import HeadParams, multi_task_loss, predict
from .params import Linear, ParamStore
from .prepare import Batch
from .tensor import Tensor, add, concat, concat_rows, flatten, mul, reshape, scale, sum_all
from .types import BlockState, Example, FeatureSchema

logger = logging.getLogger(__name__)

Source = Union[Example, Batch]

_LAYER0_PARAMS: Dict[str, Tuple[str, ...]] = {
    "C": ("embed.cat",),
    "Cp": ("embed.cat", "phi_cat"),
    "S": ("embed.seq",),
    "Sp": ("embed.seq", "phi_seq"),
    "T": ("tokens.task",),
    "Tp": ("tokens.shared",),
}


class INFNetModel:
    def __init__(self, schema: FeatureSchema, config: Optional[TrainConfig] = None):
        schema.validate()
        self.schema = schema
        self.config = config or TrainConfig()
        self.ablation = self.config.ablation
        self.store = ParamStore(self.config.seed, schema.embed_dim)
        ctx = ForwardContext(ablation=self.ablation)
        self.tables = EmbeddingTables.create(schema, self.store, with_task_tokens=ctx.task_tokens)
        self.blocks: List[BlockParams] = [
            BlockParams.create(
                self.store,
                l,
                schema,
                ablation=self.ablation,
                n_heads=self.config.n_heads,
                key_dim=self.config.key_dim,
            )
            for l in range(self.config.n_blocks)
        ]
        d = schema.embed_dim
        self.readouts: List[Linear] = []
        if not ctx.task_tokens:
            width = (schema.num_cat_proxies + schema.num_behaviors) * d
            self.readouts = [
                Linear.create(self.store, f"readout.{i}", width, d) for i in range(schema.num_tasks)
            ]
        self.heads = HeadParams.create(self.store, schema.num_tasks, d, self.config.task_weights)

    def __repr__(self) -> str:
        return (
            f"INFNetModel(ablation={self.ablation!r}, blocks={len(self.blocks)}, "
            f"params={self.parameter_count()})"
        )

    # -- forward -----------------------------------------------------------

    def context(
        self, rng: Optional[np.random.Generator] = None, *, record_attention: bool = False
    ) -> ForwardContext:
        return ForwardContext(
            ablation=self.ablation,
            dropout_rate=self.config.dropout if rng is not None else 0.0,
            rng=rng,
            record_attention=record_attention,
        )

    def forward(
        self,
        source: Source,
        *,
        rng: Optional[np.random.Generator] = None,
        record_attention: bool = False,
    ) -> Tuple[Tensor, BlockState]:
        """Probabilities (..., N_task) and the final block state. ``rng`` turns on dropout."""
        ctx = self.context(rng, record_attention=record_attention)
        tokens = tokenize(source, self.tables, dropout_rate=ctx.dropout_rate, rng=rng)
        state = stack_forward(BlockState.from_tokens(tokens), self.blocks, ctx)
        T_final = state.T if ctx.task_tokens else self._readout(state)
        probs = predict(T_final, self.heads, dropout_rate=ctx.dropout_rate, rng=rng)
        return probs, state

    def _readout(self, state: BlockState) -> Tensor:
        features = concat([flatten(state.C_proxy), flatten(state.S_proxy)], axis=-1)
        rows = []
        for readout in self.readouts:
            r = readout(features)
            rows.append(reshape(r, r.shape[:-1] + (1, r.shape[-1])))
        return concat_rows(rows)

    def predict_proba(self, source: Source) -> np.ndarray:
        return self.forward(source)[0].data

    def loss(self, batch: Batch, *, rng: Optional[np.random.Generator] = None) -> Tuple[Tensor, Tensor]:
        """(objective, probabilities); the objective includes L2 when ``l2_weight > 0``."""
        probs, _ = self.forward(batch, rng=rng)
        objective = multi_task_loss(probs, batch.labels, batch.label_mask, self.heads.task_weights)
        if self.config.l2_weight > 0:
            objective = add(objective, self.l2_penalty())
        return objective, probs

    def l2_penalty(self) -> Tensor:
        total = None
        for _, p in self.store.items():
            sq = sum_all(mul(p, p))
            total = sq if total is None else add(total, sq)
        return scale(total, self.config.l2_weight)

    # -- parameters --------------------------------------------------------

    def parameters(self) -> List[Tuple[str, Tensor]]:
        return self.store.items()

    def zero_grad(self) -> None:
        self.store.zero_grad()

    def state_dict(self) -> Dict[str, np.ndarray]:
        return self.store.state_dict()

    def load_state_dict(self, state: Dict[str, np.ndarray], *, strict: bool = True) -> None:
        self.store.load_state_dict(state, strict=strict)

    def parameter_count(self) -> int:
        return self.store.count()

    def parameter_groups(self) -> Dict[str, int]:
        """Parameter counts by component (embeddings, proxies, each block, heads)."""
        out: Dict[str, int] = {}
        for name, t in self.store.items():
            head = name.split(".", 1)[0]
            if head in ("head", "readout"):
                group = "heads"
            elif head in ("phi_cat", "phi_seq"):
                group = "proxies"
            elif head in ("embed", "tokens"):
                group = "embeddings"
            else:
                group = head
            out[group] = out.get(group, 0) + t.size
        return out

    def with_mode(self, ablation: str) -> "INFNetModel":
        """Same configuration under ``ablation``, carrying over every surviving parameter."""
        if ablation == self.ablation:
            return self
        other = INFNetModel(self.schema, replace(self.config, ablation=ablation))
        shared = {k: v for k, v in self.state_dict().items() if k in other.store}
        other.load_state_dict(shared, strict=False)
        return other

    def dormant_parameter_names(self) -> List[str]:
        """Parameters that cannot influence the predictions for this block count and mode.

        Heads read only the final task tokens (or the final proxies without task
        tokens), so updates the last blocks make to other families never reach
        the loss. Query/key projections attending over a single key are dormant
        too, since a one-column softmax is constant.
        """
        ctx = ForwardContext(ablation=self.ablation)
        key_rows = {
            "C": self.schema.num_fields,
            "S": self.schema.total_seq_len,
            "T": self.schema.num_tasks,
        }
        live: Set[str] = {"head", "readout"}
        needed: Set[str] = {"T"} if ctx.task_tokens else {"Cp", "Sp"}
        for params in reversed(self.blocks):
            prefix = f"block{params.index}"
            inputs: Set[str] = set()

            def use_flow(flow: str) -> None:
                if flow not in params.flows:
                    return
                q, kv = FLOWS[flow]
                inputs.update((q, kv))
                if key_rows[kv] > 1:
                    live.add(f"{prefix}.{flow}")
                else:
                    for h in range(len(params.flows[flow].heads)):
                        live.add(f"{prefix}.{flow}.h{h}.w_v")

            for family, gate, proxy in (("C", "pgu_cat", "Cp"), ("S", "pgu_seq", "Sp")):
                if family in needed:
                    inputs.add(family)
                    if getattr(params, gate) is not None:
                        live.add(f"{prefix}.{gate}")
                        inputs.add(proxy)
            if "T" in needed:
                if params.pgu_task is not None:
                    live.add(f"{prefix}.pgu_task")
                    inputs.add("Tp")
                inputs.add("T")
                use_flow("that_from_c")
                use_flow("that_from_s")
            if "Cp" in needed:
                inputs.add("Cp")
                use_flow("cp_from_s")
                use_flow("cp_from_t")
            if "Sp" in needed:
                inputs.add("Sp")
                use_flow("sp_from_c")
                use_flow("sp_from_t")
            if "Tp" in needed:
                inputs.add("Tp")
                use_flow("tp_from_c")
                use_flow("tp_from_s")
            needed = inputs
        for family in needed:
            live.update(_LAYER0_PARAMS[family])

        def is_live(name: str) -> bool:
            return any(name == p or name.startswith(p + ".") for p in live)

        return [name for name in self.store.names() if not is_live(name)]
