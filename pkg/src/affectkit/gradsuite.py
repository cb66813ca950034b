"""Finite-difference verification of every loss and network block."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import losses
from .losses import MultiTaskOutputs, MultiTaskTargets
from .nets import ArcFaceNet, AVFusionNet, Dense, GruStack, MultiTaskHead, MultiTaskNet, dense_forward, gru_forward
from .numcore import Tape, grad_check

TOLERANCE = 1e-5
KINK_MARGIN = 1e-3


@dataclass
class CheckResult:
    name: str
    max_error: float
    points: int
    seconds: float

    @property
    def passed(self) -> bool:
        return self.max_error < TOLERANCE


def _near_kink(tape: Tape) -> bool:
    """True when a relu input or clamped log input sits within KINK_MARGIN of its kink."""
    for op, ids, aux in zip(tape._ops, tape._inputs, tape._aux):
        if op == "relu" and np.min(np.abs(tape._values[ids[0]])) < KINK_MARGIN:
            return True
        if op == "log" and np.min(np.abs(tape._values[ids[0]] - aux)) < KINK_MARGIN:
            return True
    return False


def _angles_ok(tape: Tape) -> bool:
    """Target angles away from 0 and pi minus the margin."""
    for op, aux in zip(tape._ops, tape._aux):
        if op == "angular_margin":
            _, _, margin, theta = aux
            if np.min(theta) < 0.05 or np.max(theta + margin) > np.pi - 0.05:
                return False
    return True


def check_function(fn: Callable, make_point: Callable, rng: np.random.Generator, points: int, h: float) -> float:
    worst = 0.0
    for _ in range(points):
        while True:
            point = make_point(rng)
            tape = Tape()
            leaves = {k: tape.leaf(v) for k, v in point.items()}
            fn(tape, leaves)
            if not _near_kink(tape) and _angles_ok(tape):
                break
        worst = max(worst, grad_check(fn, point, h))
    return worst


def check_module(make_module: Callable, loss: Callable, rng: np.random.Generator, points: int, h: float) -> float:
    """Gradient check over all parameters of freshly drawn modules.

    ``make_module(rng)`` returns ``(module, inputs)``;
    ``loss(tape, module, inputs)`` returns a 1x1 node.
    """
    worst = 0.0
    for _ in range(points):
        while True:
            module, inputs = make_module(rng)
            params = module.parameters()
            for p in params.values():
                p.data = p.data + 0.1 * rng.normal(size=p.data.shape)
            tape = Tape()
            loss(tape, module, inputs)
            if not _near_kink(tape) and _angles_ok(tape):
                break

        def fn(tape, leaves, module=module, inputs=inputs, params=params):
            for name, p in params.items():
                tape.bind(p, leaves[name])
            return loss(tape, module, inputs)

        worst = max(worst, grad_check(fn, {k: p.data for k, p in params.items()}, h))
    return worst


def _cce(rng):
    targets = rng.integers(0, 7, size=4)
    return (lambda t, p: losses.cce_loss(t, p["logits"], targets)), (lambda r: {"logits": 2.0 * r.normal(size=(4, 7))})


def _bce(rng):
    targets = rng.integers(0, 2, size=(4, 8)).astype(float)
    return (lambda t, p: losses.bce_loss(t, p["probs"], targets)), (lambda r: {"probs": r.uniform(0.05, 0.95, size=(4, 8))})


def _ccc(rng):
    lv, la = rng.uniform(-1, 1, size=6), rng.uniform(-1, 1, size=6)
    return (
        (lambda t, p: losses.ccc_loss(t, p["v"], p["a"], lv, la)),
        (lambda r: {"v": r.uniform(-1, 1, size=(6, 1)), "a": r.uniform(-1, 1, size=(6, 1))}),
    )


def _mse(rng):
    lab = rng.uniform(-1, 1, size=(5, 2))
    return (lambda t, p: losses.mse_loss(t, p["pred"], lab)), (lambda r: {"pred": r.uniform(-1, 1, size=(5, 2))})


def _multitask(rng):
    n = 6
    targets = MultiTaskTargets(
        va=rng.uniform(-1, 1, size=(n, 2)),
        aus=rng.integers(0, 2, size=(n, 8)).astype(float),
        expr=rng.integers(0, 7, size=n),
    )

    def fn(t, p):
        return losses.multitask_loss(t, MultiTaskOutputs(p["va"], p["au"], p["expr"]), targets)

    def point(r):
        return {"va": r.uniform(-1, 1, size=(n, 2)), "au": r.normal(size=(n, 8)), "expr": r.normal(size=(n, 7))}

    return fn, point


def _arcface(rng):
    targets = rng.integers(0, 7, size=5)

    def fn(t, p):
        return losses.arcface_loss(t, p["emb"], p["weight"], 64.0, 0.5, targets)

    return fn, (lambda r: {"emb": r.normal(size=(5, 8)), "weight": r.normal(size=(8, 7))})


def _arcface_margin_free(rng):
    targets = rng.integers(0, 7, size=5)

    def fn(t, p):
        return losses.arcface_loss(t, p["emb"], p["weight"], 32.0, 0.0, targets)

    return fn, (lambda r: {"emb": r.normal(size=(5, 8)), "weight": r.normal(size=(8, 7))})


def _dense_block(rng):
    def make(r):
        return Dense(5, 4, "relu", r), r.normal(size=(3, 5))

    def loss(t, m, x):
        y = dense_forward(t, m, t.const(x))
        return t.sum(t.mul(y, y))

    return make, loss


def _gru_block(rng):
    def make(r):
        return GruStack(3, 4, 2, r), r.normal(size=(5, 2, 3))

    def loss(t, m, seq):
        hs = gru_forward(t, m, [t.const(x) for x in seq])
        return t.sum(t.mul(hs[-1], hs[-1]))

    return make, loss


def _heads_block(rng):
    n = 6
    targets = MultiTaskTargets(
        va=rng.uniform(-1, 1, size=(n, 2)),
        aus=rng.integers(0, 2, size=(n, 3)).astype(float),
        expr=rng.integers(0, 7, size=n),
    )

    def make(r):
        return MultiTaskHead(4, 3, r), r.normal(size=(n, 4))

    def loss(t, m, feats):
        return losses.multitask_loss(t, m(t, t.const(feats)), targets)

    return make, loss


def _multitask_net(rng):
    n = 6
    targets = MultiTaskTargets(
        va=rng.uniform(-1, 1, size=(n, 2)),
        aus=rng.integers(0, 2, size=(n, 8)).astype(float),
        expr=rng.integers(0, 7, size=n),
    )

    def make(r):
        return MultiTaskNet(4, (5,), 8, dropout=0.0, seed=r), r.normal(size=(n, 4))

    def loss(t, m, x):
        return losses.multitask_loss(t, m(t, x), targets)

    return make, loss


def _arcface_net(rng):
    targets = rng.integers(0, 7, size=6)

    def make(r):
        return ArcFaceNet(2, (5,), 4, scale=16.0, margin=0.5, seed=r), r.normal(size=(6, 2))

    def loss(t, m, x):
        emb = m.embed(t, x)
        return losses.arcface_loss(t, emb, t.param(m.head.weight), m.head.scale, m.head.margin, targets)

    return make, loss


def _av_fusion(rng):
    n, steps = 2, 2
    targets = MultiTaskTargets(
        va=rng.uniform(-1, 1, size=(n * steps, 2)),
        aus=rng.integers(0, 2, size=(n * steps, 2)).astype(float),
        expr=rng.integers(0, 7, size=n * steps),
    )

    def make(r):
        net = AVFusionNet(2, 2, fc_dim=2, stream_hidden=2, fusion_hidden=2, gru_layers=2, n_aus=2, dropout=0.0, seed=r)
        return net, (r.normal(size=(n, steps, 2)), r.normal(size=(n, steps, 2)))

    def loss(t, m, inputs):
        return losses.multitask_loss(t, m(t, *inputs), targets)

    return make, loss


FUNCTION_CHECKS = {
    "cce_loss (categorical cross entropy)": _cce,
    "bce_loss (binary cross entropy)": _bce,
    "ccc_loss (concordance)": _ccc,
    "mse_loss": _mse,
    "multitask_loss (sum of task losses)": _multitask,
    "arcface_loss (additive angular margin)": _arcface,
    "arcface_loss margin-free": _arcface_margin_free,
}

MODULE_CHECKS = {
    "dense block": _dense_block,
    "gru stack (2 layers, length 5)": _gru_block,
    "multi-task heads": _heads_block,
    "multi-task net": _multitask_net,
    "arcface net (normalization and margin)": _arcface_net,
    "audio/visual fusion net": _av_fusion,
}


def run_suite(points: int = 10, seed: int = 0, h: float = 1e-5) -> list[CheckResult]:
    results = []
    for i, (name, build) in enumerate({**FUNCTION_CHECKS, **MODULE_CHECKS}.items()):
        rng = np.random.default_rng([seed, i])
        start = time.perf_counter()
        if name in FUNCTION_CHECKS:
            fn, make_point = build(rng)
            err = check_function(fn, make_point, rng, points, h)
        else:
            make, loss = build(rng)
            err = check_module(make, loss, rng, points, h)
        results.append(CheckResult(name, err, points, time.perf_counter() - start))
    return results


def format_report(results: list[CheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'check':<{width}}  {'max rel err':>12}  status"]
    for r in results:
        lines.append(f"{r.name:<{width}}  {r.max_error:12.3e}  {'ok' if r.passed else 'FAIL'}")
    return "\n".join(lines)
