"""Central finite-difference gradient checks for single ops and for the assembled model."""
from __future__ import annotations

import logging
from typing import Callable, List, Optional, Sequence

import numpy as np

from .errors import NonDeterministicFunctionError
from .tensor import Tensor, backward, constant, mul, sum_all
from .types import GradCheckReport

logger = logging.getLogger(__name__)

TensorFn = Callable[..., Tensor]

# derivatives below this are treated as zero
GRAD_FLOOR = 1e-8


def _evaluate(f: TensorFn, inputs: Sequence[Tensor], cotangent: np.ndarray) -> float:
    return float(np.sum(f(*inputs).data * cotangent))


def grad_check(
    f: TensorFn,
    inputs: Sequence[Tensor],
    eps: float = 1e-4,
    tol: float = 1e-5,
    *,
    name: str = "f",
    seed: int = 0,
    max_entries: Optional[int] = None,
) -> GradCheckReport:
    """Compare backward() against central differences of ``f(*inputs)``.

    A non-scalar output is reduced with a fixed random cotangent. The numeric
    derivative is the Richardson combination of the central differences at ``eps``
    and ``eps/2``, and the error per entry is ``|a - n| / max(|a|, |n|, 1e-8)``.
    Entries whose difference quotient changes between the two steps sit on a kink
    and are skipped, as are entries where both derivatives are below ``1e-8``. A
    report that checked no entry does not pass.
    """
    rng = np.random.default_rng(seed)
    first = f(*inputs)
    second = f(*inputs)
    if not np.array_equal(first.data, second.data):
        raise NonDeterministicFunctionError(f"{name}: two evaluations on identical inputs differ")
    cotangent = np.ones(first.shape) if first.size == 1 else rng.standard_normal(first.shape)

    for x in inputs:
        x.grad = None
    out = f(*inputs)
    backward(sum_all(mul(out, constant(cotangent))))
    analytic = [np.zeros(x.shape) if x.grad is None else x.grad.copy() for x in inputs]

    worst, worst_at, checked, skipped = 0.0, "", 0, 0
    for k, x in enumerate(inputs):
        flat_idx = np.arange(x.size)
        if max_entries is not None and x.size > max_entries:
            flat_idx = np.sort(rng.choice(x.size, size=max_entries, replace=False))
        for flat in flat_idx:
            idx = np.unravel_index(flat, x.shape)
            original = x.data[idx]
            estimates = []
            for h in (eps, eps / 2):
                x.data[idx] = original + h
                up = _evaluate(f, inputs, cotangent)
                x.data[idx] = original - h
                down = _evaluate(f, inputs, cotangent)
                x.data[idx] = original
                estimates.append((up - down) / (2 * h))
            coarse, fine = estimates
            if abs(coarse - fine) > 0.1 * tol * max(1.0, abs(fine)):
                skipped += 1
                continue
            a = float(analytic[k][idx])
            numeric = (4.0 * fine - coarse) / 3.0
            if max(abs(a), abs(numeric)) < GRAD_FLOOR:
                skipped += 1
                continue
            err = abs(a - numeric) / max(abs(a), abs(numeric), GRAD_FLOOR)
            checked += 1
            if err > worst:
                worst = err
                worst_at = f"{x.name or f'input{k}'}{list(int(i) for i in idx)}"
    if checked == 0:
        logger.warning("grad check %s: every entry was skipped", name)
    report = GradCheckReport(
        name=name, max_rel_error=worst, tol=tol, n_checked=checked, worst=worst_at, n_skipped=skipped
    )
    logger.debug("grad check %s: max error %.3e over %d entries", name, worst, checked)
    return report


def _leaf(rng: np.random.Generator, shape, name: str) -> Tensor:
    return Tensor(rng.standard_normal(shape), requires_grad=True, name=name)


def grad_check_suite(
    eps: float = 1e-4, tol: float = 1e-4, *, seed: int = 0, entries_per_tensor: int = 8
) -> List[GradCheckReport]:
    """Every differentiable op, each model component, and the full two-block model on a toy schema."""
    from . import tensor as T
    from .block import BlockParams, FlowParams, ForwardContext, cross_attention, pgu, stack_forward
    from .config import TrainConfig
    from .features import (
        EmbeddingTables,
        build_categorical_proxies,
        build_sequence_proxies,
        embed_sequences,
        tokenize,
    )
    from .heads import HeadParams, multi_task_loss, predict
    from .model import INFNetModel
    from .params import MLP, Linear, ParamStore
    from .prepare import collate
    from .synthetic import random_examples
    from .types import BlockState, FeatureSchema

    rng = np.random.default_rng(seed)
    reports: List[GradCheckReport] = []

    def check(name: str, f: TensorFn, inputs: Sequence[Tensor]) -> None:
        reports.append(grad_check(f, inputs, eps, tol, name=name, seed=seed, max_entries=entries_per_tensor))

    a, b = _leaf(rng, (3, 4), "a"), _leaf(rng, (4, 2), "b")
    check("matmul", T.matmul, [a, b])
    check("softmax_rows∘matmul", lambda x, y: T.softmax_rows(T.matmul(x, y)), [a, b])
    check("sigmoid", T.sigmoid, [_leaf(rng, (2, 5), "x")])
    p, q = _leaf(rng, (3, 4), "p"), _leaf(rng, (3, 4), "q")
    check("elementwise", lambda x, y: T.scale(T.relu(T.add(T.mul(x, y), x)), 2.0), [p, q])
    check(
        "row_broadcast",
        lambda x, r: T.mul_row(T.add_row(x, r), r),
        [_leaf(rng, (2, 3, 4), "x"), _leaf(rng, (4,), "row")],
    )
    check(
        "layout",
        lambda x, y: T.flatten(T.reshape(T.concat_rows([T.slice_rows(x, 1, 3), y]), (2, 3, 4))),
        [_leaf(rng, (3, 4), "x"), _leaf(rng, (4, 4), "y")],
    )
    check("sum_rows", T.sum_rows, [_leaf(rng, (3, 4), "x")])
    check("mean", T.mean, [_leaf(rng, (3, 4), "x")])
    check("transpose∘matmul", lambda x: T.matmul(x, T.transpose(x)), [_leaf(rng, (3, 4), "x")])
    check(
        "log∘sigmoid", lambda x: T.log(T.sigmoid(x)), [_leaf(rng, (2, 3), "x")]
    )
    check(
        "broadcast_batch", lambda x: T.broadcast_batch(x, (2,)), [_leaf(rng, (3, 4), "x")]
    )
    table = _leaf(rng, (5, 3), "table")
    check("embedding", lambda t: T.embedding(t, np.array([[0, 4], [2, -1]])), [table])

    schema = FeatureSchema(
        cardinalities=(4, 5, 3),
        max_lens=(3, 2),
        vocab_sizes=(6, 5),
        num_tasks=2,
        embed_dim=8,
        num_cat_proxies=2,
        num_shared_task_tokens=2,
    )
    store = ParamStore(seed, schema.embed_dim)
    tables = EmbeddingTables.create(schema, store)
    batch = collate(random_examples(schema, 3, seed), schema)

    C = _leaf(rng, (3, schema.num_fields, schema.embed_dim), "C")
    check(
        "categorical_proxies",
        lambda c, *_: build_categorical_proxies(c, tables.phi_cat, schema.num_cat_proxies),
        [C, tables.phi_cat.hidden.w, tables.phi_cat.hidden.b, tables.phi_cat.out.w],
    )
    S, mask = embed_sequences(batch, tables, schema)
    S_leaf = Tensor(S.data, requires_grad=True, name="S")
    check(
        "sequence_proxies",
        lambda s, *_: build_sequence_proxies(s, mask, tables.phi_seq, schema),
        [S_leaf, tables.phi_seq.w, tables.phi_seq.b],
    )

    flow = FlowParams.create(store, "check.flow", schema.embed_dim, n_heads=2)
    Q, K = _leaf(rng, (3, 2, 8), "Q"), _leaf(rng, (3, 5, 8), "K")
    key_mask = np.array([[1, 1, 0, 1, 0], [0, 0, 0, 0, 0], [1, 0, 0, 0, 0]], dtype=bool)
    head_params = [t for triple in flow.heads for t in triple]
    check(
        "cross_attention",
        lambda qq, kk, *_: cross_attention(qq, kk, kk, flow, key_mask),
        [Q, K, *head_params],
    )

    gate = MLP.create(store, "check.gate", 2 * 8, 8, 8)
    X, Xp = _leaf(rng, (3, 4, 8), "X"), _leaf(rng, (3, 2, 8), "X_proxy")
    check(
        "pgu",
        lambda x, xp, *_: pgu(x, xp, gate),
        [X, Xp, gate.hidden.w, gate.hidden.b, gate.out.w, gate.out.b],
    )

    heads = HeadParams.create(store, schema.num_tasks, schema.embed_dim, (1.0, 2.0))
    T_final = _leaf(rng, (3, schema.num_tasks, 8), "T_final")
    head0 = heads.heads[0]
    check(
        "heads+loss",
        lambda t, *_: multi_task_loss(predict(t, heads), batch.labels, batch.label_mask, heads.task_weights),
        [T_final, head0.hidden.w, head0.out.w, head0.out.b],
    )

    blocks = [BlockParams.create(store, l, schema) for l in range(2)]
    ctx = ForwardContext()

    def stack_value(*_):
        tokens = tokenize(batch, tables)
        return stack_forward(BlockState.from_tokens(tokens), blocks, ctx).T

    check("stack(N=2)", stack_value, [t for name, t in store.items() if name.startswith(("block", "tokens"))])

    model = INFNetModel(schema, TrainConfig(n_blocks=2, seed=seed))
    params = [t for _, t in model.parameters()]
    check("model(N=2)", lambda *_: model.loss(batch)[0], params)
    return reports


def format_report(reports: Sequence[GradCheckReport]) -> str:
    lines = [f"{'component':<24} {'max_rel_error':>14} {'tol':>9} {'checked':>8} {'skipped':>8}  status"]
    for r in reports:
        if r.passed:
            status = "ok"
        elif r.n_checked == 0:
            status = "FAIL (no entry checked)"
        else:
            status = f"FAIL at {r.worst}"
        lines.append(
            f"{r.name:<24} {r.max_rel_error:>14.3e} {r.tol:>9.1e} {r.n_checked:>8d} {r.n_skipped:>8d}  {status}"
        )
    n_fail = sum(not r.passed for r in reports)
    lines.append(f"{len(reports) - n_fail}/{len(reports)} components passed")
    return "\n".join(lines)
