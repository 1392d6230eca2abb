"""Named parameter store and the small dense layers built on it."""
from __future__ import annotations

import math
import zlib
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .errors import CheckpointShapeError
from .tensor import Tensor, add_row, dropout, matmul, relu, reshape


class ParamStore:
    """Trainable tensors keyed by dotted name, in creation order.

    Each parameter draws from its own generator seeded by ``(seed, crc32(name))`` so
    a parameter's initial value does not depend on which other components exist.
    """

    def __init__(self, seed: int, embed_dim: int):
        self.seed = int(seed)
        # uniform(-a, a) with a = sqrt(3/d) rather than a = 1/sqrt(d): std is 1/sqrt(d)
        self.bound = math.sqrt(3.0 / embed_dim)
        self._params: Dict[str, Tensor] = {}

    def _rng(self, name: str) -> np.random.Generator:
        return np.random.default_rng([self.seed, zlib.crc32(name.encode("utf-8"))])

    def _add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(data, requires_grad=True, name=name)
        self._params[name] = t
        return t

    def uniform(self, name: str, shape: Sequence[int]) -> Tensor:
        return self._add(name, self._rng(name).uniform(-self.bound, self.bound, size=tuple(shape)))

    def full(self, name: str, shape: Sequence[int], value: float) -> Tensor:
        return self._add(name, np.full(tuple(shape), float(value)))

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self) -> List[Tuple[str, Tensor]]:
        return list(self._params.items())

    def names(self) -> List[str]:
        return list(self._params)

    def count(self) -> int:
        return sum(t.size for t in self._params.values())

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def shapes(self) -> Dict[str, Tuple[int, ...]]:
        return {k: t.shape for k, t in self._params.items()}

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self._params.items()}

    def load_state_dict(self, state: Dict[str, np.ndarray], *, strict: bool = True) -> None:
        missing = [k for k in self._params if k not in state]
        extra = [k for k in state if k not in self._params]
        if strict and (missing or extra):
            raise CheckpointShapeError(
                f"parameter names differ: missing {missing[:5]}, unexpected {extra[:5]}"
            )
        for k, t in self._params.items():
            if k not in state:
                continue
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != t.shape:
                raise CheckpointShapeError(f"{k}: stored shape {arr.shape}, model expects {t.shape}")
            t.data = arr.copy()


def _as_matrix(x: Tensor) -> Tuple[Tensor, bool]:
    if x.ndim == 1:
        return reshape(x, (1, x.shape[0])), True
    return x, False


@dataclass
class Linear:
    w: Tensor
    b: Optional[Tensor]

    @classmethod
    def create(
        cls, store: ParamStore, name: str, n_in: int, n_out: int, *, bias: bool = True, bias_init: float = 0.0
    ) -> "Linear":
        w = store.uniform(f"{name}.w", (n_in, n_out))
        b = store.full(f"{name}.b", (n_out,), bias_init) if bias else None
        return cls(w=w, b=b)

    def __call__(self, x: Tensor) -> Tensor:
        x2, squeezed = _as_matrix(x)
        y = matmul(x2, self.w)
        if self.b is not None:
            y = add_row(y, self.b)
        return reshape(y, (y.shape[-1],)) if squeezed else y


@dataclass
class MLP:
    """One hidden layer with ReLU, no output activation."""

    hidden: Linear
    out: Linear

    @classmethod
    def create(
        cls, store: ParamStore, name: str, n_in: int, n_hidden: int, n_out: int, *, out_bias: float = 0.0
    ) -> "MLP":
        return cls(
            hidden=Linear.create(store, f"{name}.hidden", n_in, n_hidden),
            out=Linear.create(store, f"{name}.out", n_hidden, n_out, bias_init=out_bias),
        )

    @property
    def n_in(self) -> int:
        return self.hidden.w.shape[0]

    def __call__(
        self, x: Tensor, *, dropout_rate: float = 0.0, rng: Optional[np.random.Generator] = None
    ) -> Tensor:
        h = dropout(relu(self.hidden(x)), dropout_rate, rng)
        return self.out(h)
