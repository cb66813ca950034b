"""Dense float64 matrices with a reverse-mode differentiation tape.

Every value on a tape is a 2-D ``float64`` array.  Operations append a node
recording the op kind, the input node ids and the cached forward value;
``Tape.backward`` sweeps the nodes in reverse id order, dispatching on the op
kind through ``BACKWARD``.
"""

from __future__ import annotations

import warnings
from typing import Callable, Mapping, Sequence

import numpy as np

LOG_FLOOR = 1e-12


class ShapeError(ValueError):
    pass


class NonFiniteError(ArithmeticError):
    pass


class ZeroRowWarning(RuntimeWarning):
    pass


def as_matrix(value) -> np.ndarray:
    arr = np.array(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise ShapeError(f"expected at most 2 dimensions, got shape {arr.shape}")
    return arr


class Node:
    """Handle to one value recorded on a tape."""

    __slots__ = ("tape", "id")

    def __init__(self, tape: "Tape", id: int):
        self.tape = tape
        self.id = id

    @property
    def value(self) -> np.ndarray:
        return self.tape._values[self.id]

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def item(self) -> float:
        return float(self.value[0, 0])

    def __repr__(self):
        return f"Node({self.id}, {self.tape._ops[self.id]}, shape={self.shape})"

    def _lift(self, other) -> "Node":
        if isinstance(other, Node):
            return other
        return self.tape.const(other)

    def __add__(self, other):
        return self.tape.add(self, self._lift(other))

    __radd__ = __add__

    def __sub__(self, other):
        return self.tape.sub(self, self._lift(other))

    def __rsub__(self, other):
        return self.tape.sub(self._lift(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return self.tape.scale(self, other)
        return self.tape.mul(self, self._lift(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return self.tape.scale(self, 1.0 / other)
        return self.tape.div(self, self._lift(other))

    def __matmul__(self, other):
        return self.tape.matmul(self, self._lift(other))

    def __neg__(self):
        return self.tape.scale(self, -1.0)

    @property
    def T(self):
        return self.tape.transpose(self)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    for axis in (0, 1):
        if shape[axis] == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: tuple, b: tuple) -> tuple[int, int]:
    out = []
    for da, db in zip(a, b):
        if da == db or db == 1:
            out.append(da)
        elif da == 1:
            out.append(db)
        else:
            raise ShapeError(f"{op}: cannot broadcast shapes {a} and {b}")
    return tuple(out)


def _softmax(x: np.ndarray) -> np.ndarray:
    z = np.exp(x - x.max(axis=1, keepdims=True))
    return z / z.sum(axis=1, keepdims=True)


def _row_norms(x: np.ndarray) -> np.ndarray:
    # rescale by the row maximum so tiny or huge rows do not under/overflow when squared
    m = np.abs(x).max(axis=1, keepdims=True)
    safe = np.where(m > 0.0, m, 1.0)
    return m * np.sqrt(((x / safe) ** 2).sum(axis=1, keepdims=True))


# Backward rules: (upstream grad, input values, output value, aux) -> input grads.
# Entries may be None for inputs that receive no gradient.


def _bw_matmul(g, ins, out, aux):
    a, b = ins
    return g @ b.T, a.T @ g


def _bw_add(g, ins, out, aux):
    return _unbroadcast(g, ins[0].shape), _unbroadcast(g, ins[1].shape)


def _bw_sub(g, ins, out, aux):
    return _unbroadcast(g, ins[0].shape), _unbroadcast(-g, ins[1].shape)


def _bw_mul(g, ins, out, aux):
    a, b = ins
    return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)


def _bw_div(g, ins, out, aux):
    a, b = ins
    return _unbroadcast(g / b, a.shape), _unbroadcast(-g * a / (b * b), b.shape)


def _bw_scale(g, ins, out, aux):
    return (g * aux,)


def _bw_tanh(g, ins, out, aux):
    return (g * (1.0 - out * out),)


def _bw_sigmoid(g, ins, out, aux):
    return (g * out * (1.0 - out),)


def _bw_relu(g, ins, out, aux):
    return (g * (ins[0] > 0.0),)


def _bw_exp(g, ins, out, aux):
    return (g * out,)


def _bw_log(g, ins, out, aux):
    x = ins[0]
    active = x > aux
    return (np.where(active, g / np.where(active, x, 1.0), 0.0),)


def _bw_cos(g, ins, out, aux):
    return (-g * np.sin(ins[0]),)


def _bw_softmax(g, ins, out, aux):
    return (out * (g - (g * out).sum(axis=1, keepdims=True)),)


def _bw_logsumexp(g, ins, out, aux):
    return (g * _softmax(ins[0]),)


def _bw_l2_normalize(g, ins, out, aux):
    norms = aux
    safe = np.where(norms > 0.0, norms, 1.0)
    grad = (g - out * (g * out).sum(axis=1, keepdims=True)) / safe
    return (np.where(norms > 0.0, grad, 0.0),)


def _bw_hconcat(g, ins, out, aux):
    return tuple(np.split(g, aux, axis=1))


def _bw_vconcat(g, ins, out, aux):
    return tuple(np.split(g, aux, axis=0))


def _bw_sum(g, ins, out, aux):
    return (np.broadcast_to(g, ins[0].shape).copy(),)


def _bw_mean(g, ins, out, aux):
    shape = ins[0].shape
    count = shape[0] * shape[1] if aux is None else shape[aux]
    return (np.broadcast_to(g / count, shape).copy(),)


def _bw_slice(g, ins, out, aux):
    grad = np.zeros_like(ins[0])
    grad[aux] = g
    return (grad,)


def _bw_take_rows(g, ins, out, aux):
    grad = np.zeros_like(ins[0])
    np.add.at(grad, aux, g)
    return (grad,)


def _bw_transpose(g, ins, out, aux):
    return (g.T,)


def _bw_angular_margin(g, ins, out, aux):
    rows, cols, margin, theta = aux
    grad = g.copy()
    sin_t = np.maximum(np.sin(theta), 1e-12)
    grad[rows, cols] = g[rows, cols] * np.sin(theta + margin) / sin_t
    return (grad,)


BACKWARD: dict[str, Callable] = {
    "matmul": _bw_matmul,
    "add": _bw_add,
    "sub": _bw_sub,
    "mul": _bw_mul,
    "div": _bw_div,
    "scale": _bw_scale,
    "tanh": _bw_tanh,
    "sigmoid": _bw_sigmoid,
    "relu": _bw_relu,
    "exp": _bw_exp,
    "log": _bw_log,
    "cos": _bw_cos,
    "softmax": _bw_softmax,
    "logsumexp": _bw_logsumexp,
    "l2_normalize": _bw_l2_normalize,
    "hconcat": _bw_hconcat,
    "vconcat": _bw_vconcat,
    "sum": _bw_sum,
    "mean": _bw_mean,
    "slice": _bw_slice,
    "take_rows": _bw_take_rows,
    "transpose": _bw_transpose,
    "angular_margin": _bw_angular_margin,
}


class Tape:
    """Append-only record of matrix operations.

    A tape is owned by one thread of control.  Values are stored read-only,
    so a recorded node never changes after it is pushed.
    """

    def __init__(self):
        self._ops: list[str] = []
        self._inputs: list[tuple[int, ...]] = []
        self._values: list[np.ndarray] = []
        self._aux: list[object] = []
        self._params: dict[int, Node] = {}
        self._grads: list[np.ndarray | None] | None = None

    def __len__(self):
        return len(self._ops)

    def _push(self, op: str, inputs: Sequence[Node], value: np.ndarray, aux=None) -> Node:
        for node in inputs:
            if node.tape is not self:
                raise ValueError(f"{op}: input node belongs to a different tape")
        if not np.all(np.isfinite(value)):
            raise NonFiniteError(f"{op} produced a non-finite value")
        value.flags.writeable = False
        self._ops.append(op)
        self._inputs.append(tuple(n.id for n in inputs))
        self._values.append(value)
        self._aux.append(aux)
        return Node(self, len(self._ops) - 1)

    # leaves

    def leaf(self, value) -> Node:
        return self._push("leaf", (), as_matrix(value).copy())

    def const(self, value) -> Node:
        return self._push("const", (), as_matrix(value).copy())

    def param(self, p) -> Node:
        """Leaf node for a ``Param``; created once per tape."""
        node = self._params.get(id(p))
        if node is None:
            node = self.leaf(p.data)
            self._params[id(p)] = node
        return node

    def bind(self, p, node: Node) -> None:
        """Use an existing node as the leaf for ``p`` on this tape."""
        if node.tape is not self or node.shape != p.data.shape:
            raise ShapeError(f"bind: node {node.shape} does not match parameter {p.data.shape}")
        self._params[id(p)] = node

    # binary ops

    def matmul(self, a: Node, b: Node) -> Node:
        if a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
        return self._push("matmul", (a, b), a.value @ b.value)

    def add(self, a: Node, b: Node) -> Node:
        _broadcast_shape("add", a.shape, b.shape)
        return self._push("add", (a, b), a.value + b.value)

    def sub(self, a: Node, b: Node) -> Node:
        _broadcast_shape("sub", a.shape, b.shape)
        return self._push("sub", (a, b), a.value - b.value)

    def mul(self, a: Node, b: Node) -> Node:
        _broadcast_shape("mul", a.shape, b.shape)
        return self._push("mul", (a, b), a.value * b.value)

    def div(self, a: Node, b: Node) -> Node:
        _broadcast_shape("div", a.shape, b.shape)
        return self._push("div", (a, b), a.value / b.value)

    def scale(self, a: Node, c: float) -> Node:
        return self._push("scale", (a,), a.value * float(c), float(c))

    # element-wise

    def tanh(self, a: Node) -> Node:
        return self._push("tanh", (a,), np.tanh(a.value))

    def sigmoid(self, a: Node) -> Node:
        x = a.value
        # split form avoids overflow of exp(-x) for large negative x
        e = np.exp(-np.abs(x))
        out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
        return self._push("sigmoid", (a,), out)

    def relu(self, a: Node) -> Node:
        return self._push("relu", (a,), np.maximum(a.value, 0.0))

    def exp(self, a: Node) -> Node:
        return self._push("exp", (a,), np.exp(a.value))

    def log(self, a: Node, floor: float = LOG_FLOOR) -> Node:
        return self._push("log", (a,), np.log(np.maximum(a.value, floor)), floor)

    def cos(self, a: Node) -> Node:
        return self._push("cos", (a,), np.cos(a.value))

    # row-wise

    def softmax(self, a: Node) -> Node:
        return self._push("softmax", (a,), _softmax(a.value))

    def logsumexp(self, a: Node) -> Node:
        x = a.value
        mx = x.max(axis=1, keepdims=True)
        out = mx + np.log(np.exp(x - mx).sum(axis=1, keepdims=True))
        return self._push("logsumexp", (a,), out)

    def l2_normalize(self, a: Node) -> Node:
        """Scale each row to unit norm; zero rows stay zero."""
        norms = _row_norms(a.value)
        if np.any(norms == 0.0):
            warnings.warn("l2_normalize: zero row left unnormalized", ZeroRowWarning, stacklevel=2)
        out = a.value / np.where(norms > 0.0, norms, 1.0)
        return self._push("l2_normalize", (a,), out, norms)

    # structure

    def hconcat(self, nodes: Sequence[Node]) -> Node:
        rows = {n.shape[0] for n in nodes}
        if len(rows) != 1:
            raise ShapeError(f"hconcat: row counts differ: {[n.shape for n in nodes]}")
        splits = np.cumsum([n.shape[1] for n in nodes])[:-1]
        return self._push("hconcat", nodes, np.hstack([n.value for n in nodes]), splits)

    def vconcat(self, nodes: Sequence[Node]) -> Node:
        cols = {n.shape[1] for n in nodes}
        if len(cols) != 1:
            raise ShapeError(f"vconcat: column counts differ: {[n.shape for n in nodes]}")
        splits = np.cumsum([n.shape[0] for n in nodes])[:-1]
        return self._push("vconcat", nodes, np.vstack([n.value for n in nodes]), splits)

    def sum(self, a: Node, axis: int | None = None) -> Node:
        if axis is None:
            out = np.array([[a.value.sum()]])
        else:
            out = a.value.sum(axis=axis, keepdims=True)
        return self._push("sum", (a,), out, axis)

    def mean(self, a: Node, axis: int | None = None) -> Node:
        """Mean over everything (1x1), columns (axis=0, 1xm) or rows (axis=1, nx1)."""
        if axis is None:
            out = np.array([[a.value.mean()]])
        else:
            out = a.value.mean(axis=axis, keepdims=True)
        return self._push("mean", (a,), out, axis)

    def slice(self, a: Node, rows=slice(None), cols=slice(None)) -> Node:
        if isinstance(rows, int):
            rows = slice(rows, rows + 1)
        if isinstance(cols, int):
            cols = slice(cols, cols + 1)
        key = (rows, cols)
        return self._push("slice", (a,), a.value[key].copy(), key)

    def take_rows(self, a: Node, index) -> Node:
        index = np.asarray(index, dtype=np.intp)
        if index.size and (index.min() < 0 or index.max() >= a.shape[0]):
            raise IndexError(f"take_rows: index out of range for {a.shape[0]} rows")
        return self._push("take_rows", (a,), a.value[index].copy(), index)

    def transpose(self, a: Node) -> Node:
        return self._push("transpose", (a,), a.value.T.copy())

    def angular_margin(self, cosines: Node, targets, margin: float) -> Node:
        """Replace cos(theta) by cos(theta + margin) at (row, target) entries."""
        targets = np.asarray(targets, dtype=np.intp)
        n = cosines.shape[0]
        if targets.shape != (n,):
            raise ShapeError(f"angular_margin: {targets.shape} targets for {n} rows")
        rows = np.arange(n)
        theta = np.arccos(np.clip(cosines.value[rows, targets], -1.0, 1.0))
        out = cosines.value.copy()
        out[rows, targets] = np.cos(theta + margin)
        return self._push("angular_margin", (cosines,), out, (rows, targets, float(margin), theta))

    # differentiation

    def backward(self, loss: Node) -> None:
        if loss.shape != (1, 1):
            raise ShapeError(f"backward: loss node must be 1x1, got {loss.shape}")
        grads: list[np.ndarray | None] = [None] * len(self._ops)
        grads[loss.id] = np.ones((1, 1))
        for i in range(loss.id, -1, -1):
            g = grads[i]
            op = self._ops[i]
            if g is None or op in ("leaf", "const"):
                continue
            ids = self._inputs[i]
            ins = [self._values[j] for j in ids]
            for j, gj in zip(ids, BACKWARD[op](g, ins, self._values[i], self._aux[i])):
                if gj is None:
                    continue
                grads[j] = gj if grads[j] is None else grads[j] + gj
        self._grads = grads

    def grad(self, node: Node) -> np.ndarray:
        if self._grads is None:
            raise RuntimeError("backward has not been run on this tape")
        g = self._grads[node.id] if node.id < len(self._grads) else None
        return np.zeros(node.shape) if g is None else g

    def param_grad(self, p) -> np.ndarray:
        node = self._params.get(id(p))
        if node is None:
            return np.zeros_like(p.data)
        return self.grad(node)


def grad_check(
    fn: Callable,
    point,
    h: float = 1e-5,
) -> float:
    """Largest relative gap between tape gradients and central differences.

    ``fn(tape, x)`` must return a 1x1 node.  ``point`` is either one array
    (``x`` is then a single leaf) or a mapping of names to arrays (``x`` is
    then a dict of leaves).  The gap per coordinate is
    ``|a - n| / max(1, |a|, |n|)``.
    """
    if isinstance(point, Mapping):
        base = {k: as_matrix(v) for k, v in point.items()}
    else:
        base = {None: as_matrix(point)}

    def evaluate(values):
        tape = Tape()
        leaves = {k: tape.leaf(v) for k, v in values.items()}
        arg = leaves[None] if None in leaves else leaves
        return tape, leaves, fn(tape, arg)

    tape, leaves, loss = evaluate(base)
    tape.backward(loss)
    worst = 0.0
    for key, arr in base.items():
        analytic = tape.grad(leaves[key])
        for idx in np.ndindex(arr.shape):
            vals = []
            for sign in (1.0, -1.0):
                shifted = dict(base)
                shifted[key] = arr.copy()
                shifted[key][idx] += sign * h
                try:
                    v = evaluate(shifted)[2].item()
                except NonFiniteError as exc:
                    raise NonFiniteError(f"non-finite function value at {key}{idx}") from exc
                if not np.isfinite(v):
                    raise NonFiniteError(f"non-finite function value at {key}{idx}")
                vals.append(v)
            numeric = (vals[0] - vals[1]) / (2.0 * h)
            a = analytic[idx]
            err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            worst = max(worst, err)
    return worst
