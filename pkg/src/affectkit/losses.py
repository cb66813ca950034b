"""Task losses for expression, action-unit and valence/arousal heads.

Loss builders take a ``Tape`` and nodes and return a 1x1 node, so the
gradient of any composite comes from a single ``tape.backward``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .config import N_EXPRESSIONS
from .numcore import Node, ShapeError, Tape, as_matrix

CCC_EPS = 1e-12


class DegenerateCCCWarning(RuntimeWarning):
    """CCC denominator vanished; the coefficient was reported as 0."""


def _class_indices(targets, n: int, n_classes: int) -> np.ndarray:
    t = np.asarray(targets)
    if t.shape != (n,):
        raise ShapeError(f"expected {n} class indices, got shape {t.shape}")
    if not np.issubdtype(t.dtype, np.integer):
        if not np.all(t == np.round(t)):
            raise ValueError("class indices must be integers")
        t = t.astype(np.intp)
    if t.size and (t.min() < 0 or t.max() >= n_classes):
        raise IndexError(f"class index out of range 0..{n_classes - 1}")
    return t.astype(np.intp)


def one_hot(targets, n_classes: int = N_EXPRESSIONS) -> np.ndarray:
    t = np.asarray(targets, dtype=np.intp)
    out = np.zeros((t.size, n_classes))
    out[np.arange(t.size), t] = 1.0
    return out


def cce_loss(tape: Tape, logits: Node, targets) -> Node:
    """Mean of ``logsumexp(logits) - logits[target]`` over the batch."""
    n, c = logits.shape
    t = _class_indices(targets, n, c)
    picked = tape.sum(tape.mul(logits, tape.const(one_hot(t, c))), axis=1)
    return tape.mean(tape.sub(tape.logsumexp(logits), picked))


def bce_loss(tape: Tape, probs: Node, targets) -> Node:
    """Binary cross entropy summed over labels, averaged over the batch."""
    t = as_matrix(targets)
    if t.shape != probs.shape:
        raise ShapeError(f"bce_loss: predictions {probs.shape} vs targets {t.shape}")
    if not np.all((t == 0.0) | (t == 1.0)):
        raise ValueError("bce_loss: targets must be 0 or 1")
    tc = tape.const(t)
    pos = tape.mul(tc, tape.log(probs))
    neg = tape.mul(tape.const(1.0 - t), tape.log(tape.sub(tape.const(1.0), probs)))
    return tape.scale(tape.sum(tape.add(pos, neg)), -1.0 / probs.shape[0])


def mse_loss(tape: Tape, pred: Node, labels) -> Node:
    lab = as_matrix(labels)
    if lab.shape != pred.shape:
        raise ShapeError(f"mse_loss: predictions {pred.shape} vs labels {lab.shape}")
    d = tape.sub(pred, tape.const(lab))
    return tape.mean(tape.mul(d, d))


def ccc(x, y) -> float:
    """Concordance correlation coefficient with population moments.

    Returns 0.0 and warns with ``DegenerateCCCWarning`` when the
    denominator is below 1e-12 (both sequences constant and equal).
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ShapeError(f"ccc: lengths {x.size} and {y.size} differ")
    if x.size < 2:
        raise ValueError("ccc needs at least two samples")
    mx, my = x.mean(), y.mean()
    dx, dy = x - mx, y - my
    sxy = (dx * dy).mean()
    den = (dx * dx).mean() + (dy * dy).mean() + (mx - my) ** 2
    if den < CCC_EPS:
        warnings.warn("ccc: degenerate denominator, returning 0", DegenerateCCCWarning, stacklevel=2)
        return 0.0
    return float(2.0 * sxy / den)


def ccc_node(tape: Tape, x: Node, y: Node) -> Node:
    """CCC between two n x 1 columns, recorded on the tape."""
    if x.shape != y.shape or x.shape[1] != 1:
        raise ShapeError(f"ccc_node: expected equal n x 1 columns, got {x.shape} and {y.shape}")
    if x.shape[0] < 2:
        raise ValueError("ccc needs at least two samples")
    mx, my = tape.mean(x), tape.mean(y)
    dx, dy = tape.sub(x, mx), tape.sub(y, my)
    sxy = tape.mean(tape.mul(dx, dy))
    dm = tape.sub(mx, my)
    den = tape.add(tape.add(tape.mean(tape.mul(dx, dx)), tape.mean(tape.mul(dy, dy))), tape.mul(dm, dm))
    if den.item() < CCC_EPS:
        warnings.warn("ccc: degenerate denominator, returning 0", DegenerateCCCWarning, stacklevel=2)
        return tape.const(0.0)
    return tape.div(tape.scale(sxy, 2.0), den)


def ccc_loss(tape: Tape, pred_v: Node, pred_a: Node, label_v, label_a) -> Node:
    """``1 - (ccc_a + ccc_v) / 2``."""
    rho_v = ccc_node(tape, pred_v, tape.const(np.reshape(label_v, (-1, 1))))
    rho_a = ccc_node(tape, pred_a, tape.const(np.reshape(label_a, (-1, 1))))
    return tape.sub(tape.const(1.0), tape.scale(tape.add(rho_a, rho_v), 0.5))


@dataclass
class MultiTaskTargets:
    """Per-batch labels; a task is present when its array is given.

    Masks select the frames that carry a label for that task (all frames
    when the mask is None).
    """

    va: np.ndarray | None = None
    aus: np.ndarray | None = None
    expr: np.ndarray | None = None
    va_mask: np.ndarray | None = None
    au_mask: np.ndarray | None = None
    expr_mask: np.ndarray | None = None

    def __post_init__(self):
        if self.va is not None:
            self.va = as_matrix(self.va)
            if self.va.shape[1] != 2:
                raise ShapeError(f"va targets must be n x 2, got {self.va.shape}")
            if np.any(np.abs(self.va) > 1.0):
                raise ValueError("va targets must lie in [-1, 1]")
        if self.aus is not None:
            self.aus = as_matrix(self.aus)
            if not np.all((self.aus == 0.0) | (self.aus == 1.0)):
                raise ValueError("au targets must be 0 or 1")
        if self.expr is not None:
            self.expr = np.asarray(self.expr)
            _class_indices(self.expr, self.expr.shape[0], N_EXPRESSIONS)
        if not self.present():
            raise ValueError("no task present in targets")

    def present(self) -> list[str]:
        out = []
        for name in ("va", "au", "expr"):
            arr = getattr(self, "aus" if name == "au" else name)
            mask = getattr(self, f"{name}_mask")
            if arr is not None and (mask is None or np.any(mask)):
                out.append(name)
        return out


@dataclass
class MultiTaskOutputs:
    va: Node | None = None
    au: Node | None = None
    expr: Node | None = None


def _rows(tape: Tape, node: Node, mask) -> tuple[Node, np.ndarray | None]:
    if mask is None:
        return node, None
    idx = np.flatnonzero(np.asarray(mask, dtype=bool))
    return tape.take_rows(node, idx), idx


def multitask_terms(
    tape: Tape,
    outputs: MultiTaskOutputs,
    targets: MultiTaskTargets,
    va_mode: str = "ccc",
) -> dict[str, Node]:
    """Per-task loss nodes for the tasks present in ``targets``.

    The AU head is taken to emit logits; a sigmoid is applied before BCE.
    """
    if va_mode not in ("ccc", "mse"):
        raise ValueError(f"va_mode must be 'ccc' or 'mse', got {va_mode!r}")
    present = targets.present()
    terms = {}
    if "va" in present:
        if outputs.va is None:
            raise ValueError("va targets given but model has no va output")
        pred, idx = _rows(tape, outputs.va, targets.va_mask)
        lab = targets.va if idx is None else targets.va[idx]
        if pred.shape != lab.shape:
            raise ShapeError(f"va head {pred.shape} vs targets {lab.shape}")
        if va_mode == "ccc":
            terms["va"] = ccc_loss(
                tape, tape.slice(pred, cols=0), tape.slice(pred, cols=1), lab[:, 0], lab[:, 1]
            )
        else:
            terms["va"] = mse_loss(tape, pred, lab)
    if "au" in present:
        if outputs.au is None:
            raise ValueError("au targets given but model has no au output")
        logits, idx = _rows(tape, outputs.au, targets.au_mask)
        lab = targets.aus if idx is None else targets.aus[idx]
        terms["au"] = bce_loss(tape, tape.sigmoid(logits), lab)
    if "expr" in present:
        if outputs.expr is None:
            raise ValueError("expr targets given but model has no expr output")
        logits, idx = _rows(tape, outputs.expr, targets.expr_mask)
        lab = targets.expr if idx is None else targets.expr[idx]
        terms["expr"] = cce_loss(tape, logits, lab)
    return terms


def multitask_loss(
    tape: Tape,
    outputs: MultiTaskOutputs,
    targets: MultiTaskTargets,
    va_mode: str = "ccc",
    weights: dict[str, float] | None = None,
) -> Node:
    """Sum of the present task losses, summed in the order expr, au, va.

    With a single task present the task's own node is returned unchanged.
    """
    terms = multitask_terms(tape, outputs, targets, va_mode)
    total = None
    for name in ("expr", "au", "va"):
        if name not in terms:
            continue
        term = terms[name]
        w = 1.0 if weights is None else weights.get(name, 1.0)
        if w != 1.0:
            term = tape.scale(term, w)
        total = term if total is None else tape.add(total, term)
    return total


def arcface_logits(
    tape: Tape,
    embeddings: Node,
    weight: Node,
    scale: float,
    margin: float,
    targets=None,
) -> Node:
    """Scaled cosine logits with an additive angular margin on the target.

    Rows of ``embeddings`` and columns of ``weight`` are l2-normalized; with
    ``targets`` the target entry becomes ``cos(theta + margin)``.  Without
    targets no margin is applied (inference).
    """
    n, d = embeddings.shape
    if d < 2:
        raise ShapeError("arcface_logits: embedding dimension must be at least 2")
    if weight.shape[0] != d:
        raise ShapeError(f"arcface_logits: embeddings {embeddings.shape} vs weight {weight.shape}")
    if scale <= 0 or margin < 0:
        raise ValueError("arcface_logits: need scale > 0 and margin >= 0")
    if np.any(np.all(embeddings.value == 0.0, axis=1)):
        raise ValueError("arcface_logits: zero embedding row")
    x = tape.l2_normalize(embeddings)
    w = tape.transpose(tape.l2_normalize(tape.transpose(weight)))
    cos = tape.matmul(x, w)
    if targets is not None:
        t = _class_indices(targets, n, weight.shape[1])
        if margin != 0.0:
            cos = tape.angular_margin(cos, t, margin)
    return tape.scale(cos, scale)


def arcface_loss(tape: Tape, embeddings: Node, weight: Node, scale: float, margin: float, targets) -> Node:
    logits = arcface_logits(tape, embeddings, weight, scale, margin, targets)
    return cce_loss(tape, logits, targets)
