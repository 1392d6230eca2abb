"""Adam and Adagrad over named parameters, plus global-norm gradient clipping."""
from __future__ import annotations

import math
from typing import Dict, Sequence, Tuple

import numpy as np

from .config import TrainConfig
from .tensor import Tensor

NamedParams = Sequence[Tuple[str, Tensor]]


def adam_step(
    param: np.ndarray,
    grad: np.ndarray,
    m: np.ndarray,
    v: np.ndarray,
    t: int,
    lr: float,
    betas: Tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One bias-corrected Adam update at step ``t`` (1-based). Returns (param, m, v)."""
    b1, b2 = betas
    m = b1 * m + (1.0 - b1) * grad
    v = b2 * v + (1.0 - b2) * grad * grad
    m_hat = m / (1.0 - b1 ** t)
    v_hat = v / (1.0 - b2 ** t)
    return param - lr * m_hat / (np.sqrt(v_hat) + eps), m, v


def adagrad_step(
    param: np.ndarray, grad: np.ndarray, accum: np.ndarray, lr: float, eps: float = 1e-10
) -> Tuple[np.ndarray, np.ndarray]:
    accum = accum + grad * grad
    return param - lr * grad / (np.sqrt(accum) + eps), accum


def _grad(p: Tensor) -> np.ndarray:
    return np.zeros_like(p.data) if p.grad is None else p.grad


class Optimizer:
    name = ""
    # moment buffers, one dict per slot, keyed by parameter name
    slots: Tuple[str, ...] = ()

    def __init__(self, lr: float):
        self.lr = float(lr)
        self.t = 0
        self.buffers: Dict[str, Dict[str, np.ndarray]] = {s: {} for s in self.slots}

    def _buffer(self, slot: str, name: str, like: np.ndarray) -> np.ndarray:
        buf = self.buffers[slot].get(name)
        return np.zeros_like(like) if buf is None else buf

    def step(self, params: NamedParams) -> None:
        raise NotImplementedError

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {f"{slot}/{name}": arr.copy() for slot in self.slots for name, arr in sorted(self.buffers[slot].items())}

    def load_state_dict(self, state: Dict[str, np.ndarray], t: int) -> None:
        self.t = int(t)
        self.buffers = {s: {} for s in self.slots}
        for key, arr in state.items():
            slot, _, name = key.partition("/")
            if slot in self.buffers:
                self.buffers[slot][name] = np.asarray(arr, dtype=np.float64).copy()


class Adam(Optimizer):
    name = "adam"
    slots = ("m", "v")

    def __init__(self, lr: float, betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        super().__init__(lr)
        self.betas = (float(betas[0]), float(betas[1]))
        self.eps = float(eps)

    def step(self, params: NamedParams) -> None:
        self.t += 1
        for name, p in params:
            new, m, v = adam_step(
                p.data,
                _grad(p),
                self._buffer("m", name, p.data),
                self._buffer("v", name, p.data),
                self.t,
                self.lr,
                self.betas,
                self.eps,
            )
            p.data = new
            self.buffers["m"][name] = m
            self.buffers["v"][name] = v


class Adagrad(Optimizer):
    name = "adagrad"
    slots = ("accum",)

    def __init__(self, lr: float, eps: float = 1e-10):
        super().__init__(lr)
        self.eps = float(eps)

    def step(self, params: NamedParams) -> None:
        self.t += 1
        for name, p in params:
            new, accum = adagrad_step(p.data, _grad(p), self._buffer("accum", name, p.data), self.lr, self.eps)
            p.data = new
            self.buffers["accum"][name] = accum


def build_optimizer(config: TrainConfig) -> Optimizer:
    if config.optimizer == "adagrad":
        return Adagrad(config.learning_rate, config.adagrad_eps)
    return Adam(config.learning_rate, config.adam_betas, config.adam_eps)


def global_grad_norm(params: NamedParams) -> float:
    return math.sqrt(sum(float(np.sum(p.grad * p.grad)) for _, p in params if p.grad is not None))


def clip_grad_norm(params: NamedParams, max_norm: float) -> float:
    """Rescale all gradients so their joint L2 norm is at most ``max_norm`` (0 disables). Returns the norm before clipping."""
    norm = global_grad_norm(params)
    if max_norm > 0 and norm > max_norm:
        factor = max_norm / norm
        for _, p in params:
            if p.grad is not None:
                p.grad = p.grad * factor
    return norm
