"""One INFNet block: heterogeneous cross-attention flows then PGU refinement, and the stack driver.

Flow names read ``<target>_from_<source>``: ``cp`` categorical proxies, ``sp``
sequence proxies, ``tp`` shared task proxies, ``that`` the intermediate task
tokens T̂. Every block owns its own parameters for every flow.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import ConfigError, ShapeError
from .params import MLP, ParamStore
from .tensor import (
    Tensor,
    add,
    concat,
    dropout,
    flatten,
    matmul,
    mul_row,
    reshape,
    scale,
    sigmoid,
    softmax_rows,
    transpose,
)
from .types import BlockState, FeatureSchema

# flow -> (query family, key/value family)
FLOWS: Dict[str, Tuple[str, str]] = {
    "cp_from_s": ("Cp", "S"),
    "cp_from_t": ("Cp", "T"),
    "sp_from_c": ("Sp", "C"),
    "sp_from_t": ("Sp", "T"),
    "tp_from_c": ("Tp", "C"),
    "tp_from_s": ("Tp", "S"),
    "that_from_c": ("T", "C"),
    "that_from_s": ("T", "S"),
}
TASK_FLOWS = frozenset(f for f, (q, k) in FLOWS.items() if "T" in (q, k) or q == "Tp")
# initial PGU gate logit; sigmoid(2) ~ 0.88 so a fresh gate nearly passes its input
PGU_GATE_BIAS = 2.0


@dataclass
class ForwardContext:
    """Per-call switches: ablation mode, training-time dropout and attention capture."""

    ablation: str = "full"
    dropout_rate: float = 0.0
    rng: Optional[np.random.Generator] = None
    record_attention: bool = False

    @property
    def task_tokens(self) -> bool:
        return self.ablation != "no_task_tokens"

    @property
    def heterogeneous(self) -> bool:
        return self.ablation != "no_heterogeneous"

    @property
    def homogeneous(self) -> bool:
        return self.ablation != "no_homogeneous"

    @property
    def training(self) -> bool:
        return self.rng is not None and self.dropout_rate > 0.0


@dataclass
class FlowParams:
    # one (W_Q, W_K, W_V) triple per head
    heads: List[Tuple[Tensor, Tensor, Tensor]]

    @classmethod
    def create(
        cls, store: ParamStore, name: str, d: int, *, key_dim: Optional[int] = None, n_heads: int = 1
    ) -> "FlowParams":
        if d % n_heads:
            raise ConfigError(f"embedding size {d} is not divisible by {n_heads} heads")
        d_v = d // n_heads
        d_k = key_dim or d_v
        heads = []
        for h in range(n_heads):
            heads.append(
                (
                    store.uniform(f"{name}.h{h}.w_q", (d, d_k)),
                    store.uniform(f"{name}.h{h}.w_k", (d, d_k)),
                    store.uniform(f"{name}.h{h}.w_v", (d, d_v)),
                )
            )
        return cls(heads=heads)


@dataclass
class BlockParams:
    index: int
    flows: Dict[str, FlowParams] = field(default_factory=dict)
    pgu_cat: Optional[MLP] = None
    pgu_seq: Optional[MLP] = None
    pgu_task: Optional[MLP] = None

    @classmethod
    def create(
        cls,
        store: ParamStore,
        index: int,
        schema: FeatureSchema,
        *,
        ablation: str = "full",
        n_heads: int = 1,
        key_dim: Optional[int] = None,
    ) -> "BlockParams":
        ctx = ForwardContext(ablation=ablation)
        d = schema.embed_dim
        prefix = f"block{index}"
        out = cls(index=index)
        if ctx.heterogeneous:
            for flow in FLOWS:
                if flow in TASK_FLOWS and not ctx.task_tokens:
                    continue
                out.flows[flow] = FlowParams.create(
                    store, f"{prefix}.{flow}", d, key_dim=key_dim, n_heads=n_heads
                )
        if ctx.homogeneous:
            out.pgu_cat = MLP.create(
                store, f"{prefix}.pgu_cat", schema.num_cat_proxies * d, d, d, out_bias=PGU_GATE_BIAS
            )
            out.pgu_seq = MLP.create(
                store, f"{prefix}.pgu_seq", schema.num_behaviors * d, d, d, out_bias=PGU_GATE_BIAS
            )
            if ctx.task_tokens:
                out.pgu_task = MLP.create(
                    store, f"{prefix}.pgu_task", schema.num_shared_task_tokens * d, d, d,
                    out_bias=PGU_GATE_BIAS,
                )
        return out


def attend(
    Q: Tensor,
    K: Tensor,
    V: Tensor,
    params: FlowParams,
    key_mask: Optional[np.ndarray] = None,
) -> Tuple[Tensor, np.ndarray]:
    """Cross attention plus its weights (head mean, forward values only)."""
    if K.shape[-2] != V.shape[-2]:
        raise ShapeError(f"cross_attention: keys {K.shape} and values {V.shape} differ in rows")
    mask = None
    if key_mask is not None:
        key_mask = np.asarray(key_mask, dtype=bool)
        if key_mask.shape[-1] != K.shape[-2]:
            raise ShapeError(f"cross_attention: key mask {key_mask.shape} does not match keys {K.shape}")
        mask = key_mask[..., None, :]
    outs = []
    weights = []
    for w_q, w_k, w_v in params.heads:
        q = matmul(Q, w_q)
        k = matmul(K, w_k)
        scores = scale(matmul(q, transpose(k)), 1.0 / math.sqrt(w_q.shape[-1]))
        a = softmax_rows(scores, mask)
        outs.append(matmul(a, matmul(V, w_v)))
        weights.append(a.data)
    out = outs[0] if len(outs) == 1 else concat(outs, axis=-1)
    return out, np.mean(weights, axis=0)


def cross_attention(
    Q: Tensor,
    K: Tensor,
    V: Tensor,
    params: FlowParams,
    key_mask: Optional[np.ndarray] = None,
) -> Tensor:
    """softmax((Q W_Q)(K W_K)ᵀ/√d_k)(V W_V); masked keys get zero weight, all-masked rows give zeros."""
    return attend(Q, K, V, params, key_mask)[0]


def pgu(X: Tensor, X_proxy: Tensor, gate: MLP, ctx: Optional[ForwardContext] = None) -> Tensor:
    """X ⊙ sigmoid(gate(flatten(X_proxy))), the length-d gate broadcast over every row of X."""
    ctx = ctx or ForwardContext()
    flat = flatten(X_proxy)
    if flat.shape[-1] != gate.n_in:
        raise ShapeError(
            f"pgu: proxies {X_proxy.shape} flatten to {flat.shape[-1]}, gate expects {gate.n_in}"
        )
    logits = gate(flat, dropout_rate=ctx.dropout_rate if ctx.training else 0.0, rng=ctx.rng)
    g = sigmoid(reshape(logits, X.shape[:-2] + (1, X.shape[-1])))
    return mul_row(X, g)


def _family(state: BlockState, name: str) -> Tensor:
    return {"C": state.C, "Cp": state.C_proxy, "S": state.S, "Sp": state.S_proxy,
            "T": state.T, "Tp": state.T_proxy}[name]


def _flow(
    state: BlockState,
    params: BlockParams,
    flow: str,
    ctx: ForwardContext,
    attention: Dict[str, np.ndarray],
) -> Optional[Tensor]:
    if not ctx.heterogeneous or flow not in params.flows:
        return None
    q_name, kv_name = FLOWS[flow]
    Q, KV = _family(state, q_name), _family(state, kv_name)
    mask = state.seq_mask if kv_name == "S" else None
    out, weights = attend(Q, KV, KV, params.flows[flow], mask)
    if ctx.record_attention:
        attention[f"block{params.index}.{flow}"] = weights
    if ctx.training:
        out = dropout(out, ctx.dropout_rate, ctx.rng)
    return out


def _residual(base: Tensor, *terms: Optional[Tensor]) -> Tensor:
    out = base
    for t in terms:
        if t is not None:
            out = add(out, t)
    return out


def flow_to_categorical(
    state: BlockState, params: BlockParams, ctx: Optional[ForwardContext] = None,
    attention: Optional[Dict[str, np.ndarray]] = None,
) -> Tensor:
    """C̃' = C̃ + CA(C̃, S, S | mask) + CA(C̃, T, T)."""
    ctx = ctx or ForwardContext()
    attention = {} if attention is None else attention
    return _residual(
        state.C_proxy,
        _flow(state, params, "cp_from_s", ctx, attention),
        _flow(state, params, "cp_from_t", ctx, attention) if ctx.task_tokens else None,
    )


def flow_to_sequence(
    state: BlockState, params: BlockParams, ctx: Optional[ForwardContext] = None,
    attention: Optional[Dict[str, np.ndarray]] = None,
) -> Tensor:
    """S̃' = S̃ + CA(S̃, C, C) + CA(S̃, T, T)."""
    ctx = ctx or ForwardContext()
    attention = {} if attention is None else attention
    return _residual(
        state.S_proxy,
        _flow(state, params, "sp_from_c", ctx, attention),
        _flow(state, params, "sp_from_t", ctx, attention) if ctx.task_tokens else None,
    )


def flow_to_task(
    state: BlockState, params: BlockParams, ctx: Optional[ForwardContext] = None,
    attention: Optional[Dict[str, np.ndarray]] = None,
) -> Tuple[Optional[Tensor], Optional[Tensor]]:
    """(T̃', T̂) with T̃' = T̃ + CA(T̃,C,C) + CA(T̃,S,S|mask) and T̂ = T + CA(T,C,C) + CA(T,S,S|mask)."""
    ctx = ctx or ForwardContext()
    attention = {} if attention is None else attention
    if not ctx.task_tokens or state.T is None:
        return None, None
    T_proxy = _residual(
        state.T_proxy,
        _flow(state, params, "tp_from_c", ctx, attention),
        _flow(state, params, "tp_from_s", ctx, attention),
    )
    T_hat = _residual(
        state.T,
        _flow(state, params, "that_from_c", ctx, attention),
        _flow(state, params, "that_from_s", ctx, attention),
    )
    return T_proxy, T_hat


def block_forward(
    state: BlockState, params: BlockParams, ctx: Optional[ForwardContext] = None
) -> BlockState:
    ctx = ctx or ForwardContext()
    attention: Dict[str, np.ndarray] = {}
    # heterogeneous stage: every flow reads layer-l tensors only
    C_proxy = flow_to_categorical(state, params, ctx, attention)
    S_proxy = flow_to_sequence(state, params, ctx, attention)
    T_proxy, T_hat = flow_to_task(state, params, ctx, attention)

    # homogeneous stage, gated by the layer-l proxies
    if ctx.homogeneous:
        C = pgu(state.C, state.C_proxy, params.pgu_cat, ctx)
        S = pgu(state.S, state.S_proxy, params.pgu_seq, ctx)
        T = pgu(T_hat, state.T_proxy, params.pgu_task, ctx) if T_hat is not None else None
    else:
        C, S, T = state.C, state.S, T_hat
    return BlockState(
        C=C,
        C_proxy=C_proxy,
        S=S,
        S_proxy=S_proxy,
        T=T,
        T_proxy=T_proxy,
        seq_mask=state.seq_mask,
        T_hat=T_hat,
        attention={**state.attention, **attention},
    )


def stack_forward(
    state: BlockState, blocks: List[BlockParams], ctx: Optional[ForwardContext] = None
) -> BlockState:
    """Apply the blocks in order; the returned T feeds the heads."""
    if not blocks:
        raise ConfigError("a block stack needs at least one block (n_blocks >= 1)")
    for params in blocks:
        state = block_forward(state, params, ctx)
    return state
