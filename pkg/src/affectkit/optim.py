"""SGD with momentum, Adam, and the seeded training loop."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .config import TrainConfig
from .nets import Module, Param
from .numcore import Node, NonFiniteError, Tape


class DivergenceError(ArithmeticError):
    def __init__(self, step: int, detail: str = "non-finite loss"):
        super().__init__(f"training diverged at step {step}: {detail}")
        self.step = step


def sgd_momentum_step(param: np.ndarray, grad: np.ndarray, velocity: np.ndarray, lr: float, momentum: float = 0.9):
    """``v <- momentum * v + g``; ``p <- p - lr * v``."""
    velocity = momentum * velocity + grad
    return param - lr * velocity, velocity


def adam_step(param, grad, m, v, t: int, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update at step ``t`` (1-based)."""
    m = beta1 * m + (1.0 - beta1) * grad
    v = beta2 * v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    return param - lr * m_hat / (np.sqrt(v_hat) + eps), m, v


class SGDMomentum:
    def __init__(self, lr: float, momentum: float = 0.9):
        self.lr = lr
        self.momentum = momentum
        self.velocity: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, Param], grads: dict[str, np.ndarray]) -> None:
        for name, p in params.items():
            vel = self.velocity.get(name, np.zeros_like(p.data))
            p.data, self.velocity[name] = sgd_momentum_step(p.data, grads[name], vel, self.lr, self.momentum)


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, Param], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        for name, p in params.items():
            m = self.m.get(name, np.zeros_like(p.data))
            v = self.v.get(name, np.zeros_like(p.data))
            p.data, self.m[name], self.v[name] = adam_step(
                p.data, grads[name], m, v, self.t, self.lr, self.beta1, self.beta2, self.eps
            )


def make_optimizer(cfg: TrainConfig):
    if cfg.optimizer == "adam":
        return Adam(cfg.learning_rate)
    return SGDMomentum(cfg.learning_rate, cfg.momentum)


LossFn = Callable[[Tape, Module, dict, np.random.Generator], Node]


@dataclass
class TrainResult:
    trace: list[float] = field(default_factory=list)
    params: dict[str, np.ndarray] = field(default_factory=dict)


def train(model: Module, data: dict[str, np.ndarray], loss_fn: LossFn, cfg: TrainConfig) -> TrainResult:
    """Minibatch training with one seeded generator for batches and dropout.

    ``data`` maps names to arrays sharing their first dimension;
    ``loss_fn(tape, model, batch, rng)`` returns the 1x1 loss node.
    """
    sizes = {len(v) for v in data.values()}
    if len(sizes) != 1 or 0 in sizes:
        raise ValueError("dataset arrays must be non-empty and share their first dimension")
    n = sizes.pop()
    rng = np.random.default_rng(cfg.seed)
    opt = make_optimizer(cfg)
    params = model.parameters()
    result = TrainResult()
    batch_size = min(cfg.batch_size, n)
    for step in range(cfg.steps):
        idx = np.sort(rng.choice(n, size=batch_size, replace=False))
        batch = {k: v[idx] for k, v in data.items()}
        tape = Tape()
        try:
            loss = loss_fn(tape, model, batch, rng)
        except NonFiniteError as exc:
            raise DivergenceError(step, str(exc)) from exc
        value = loss.item()
        if not np.isfinite(value):
            raise DivergenceError(step)
        tape.backward(loss)
        opt.step(params, {k: tape.param_grad(p) for k, p in params.items()})
        result.trace.append(value)
    result.params = model.state_dict()
    return result
