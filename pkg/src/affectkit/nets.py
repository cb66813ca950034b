"""Toy-scale network blocks on the tape.

Topologies follow the multi-task models: a dense backbone stands in for the
convolutional feature extractor, a stacked GRU sits on the first fc layer
for sequences, and the audio/visual model concatenates two stream features
per time step before a fusion GRU.  All heads read one shared feature.
"""

from __future__ import annotations

from typing import Iterator, Sequence

import numpy as np

from .config import N_AUS, N_EXPRESSIONS
from .losses import MultiTaskOutputs, arcface_logits, arcface_loss
from .numcore import Node, ShapeError, Tape


class Param:
    """Trainable array; ``tape.param(p)`` makes it a leaf."""

    __slots__ = ("data",)

    def __init__(self, data):
        self.data = np.array(data, dtype=np.float64)

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Param(shape={self.data.shape})"


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


class Module:
    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Param]]:
        for name, val in vars(self).items():
            if isinstance(val, Param):
                yield prefix + name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(f"{prefix}{name}.")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")

    def parameters(self) -> dict[str, Param]:
        return dict(self.named_parameters())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)}")
        for k, p in params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise ShapeError(f"{k}: expected shape {p.data.shape}, got {arr.shape}")
            p.data = arr.copy()


def _activate(tape: Tape, x: Node, kind: str) -> Node:
    if kind == "linear":
        return x
    if kind == "relu":
        return tape.relu(x)
    if kind == "tanh":
        return tape.tanh(x)
    if kind == "sigmoid":
        return tape.sigmoid(x)
    raise ValueError(f"unknown activation {kind!r}")


class Dense(Module):
    def __init__(self, in_dim: int, out_dim: int, activation: str = "linear", rng=None):
        rng = _rng(rng)
        self.weight = Param(glorot(rng, in_dim, out_dim))
        self.bias = Param(np.zeros((1, out_dim)))
        self.activation = activation

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]

    def __call__(self, tape: Tape, x: Node) -> Node:
        return dense_forward(tape, self, x)


def dense_forward(tape: Tape, layer: Dense, x: Node) -> Node:
    if x.shape[1] != layer.in_dim:
        raise ShapeError(f"dense: input width {x.shape[1]} vs layer input {layer.in_dim}")
    pre = tape.add(tape.matmul(x, tape.param(layer.weight)), tape.param(layer.bias))
    return _activate(tape, pre, layer.activation)


class GruCell(Module):
    """Update gate z, reset gate r, candidate from the reset-gated state."""

    def __init__(self, in_dim: int, hidden: int, rng=None):
        rng = _rng(rng)
        for gate in ("z", "r", "h"):
            setattr(self, f"w_{gate}", Param(glorot(rng, in_dim, hidden)))
            setattr(self, f"u_{gate}", Param(glorot(rng, hidden, hidden)))
            setattr(self, f"b_{gate}", Param(np.zeros((1, hidden))))

    @property
    def in_dim(self) -> int:
        return self.w_z.shape[0]

    @property
    def hidden(self) -> int:
        return self.u_z.shape[0]

    def gates(self, tape: Tape, x: Node, h: Node) -> tuple[Node, Node, Node]:
        p = tape.param

        def affine(gate, state):
            return tape.add(
                tape.add(tape.matmul(x, p(getattr(self, f"w_{gate}"))), tape.matmul(state, p(getattr(self, f"u_{gate}")))),
                p(getattr(self, f"b_{gate}")),
            )

        z = tape.sigmoid(affine("z", h))
        r = tape.sigmoid(affine("r", h))
        cand = tape.tanh(affine("h", tape.mul(r, h)))
        return z, r, cand

    def __call__(self, tape: Tape, x: Node, h: Node) -> Node:
        if x.shape[1] != self.in_dim:
            raise ShapeError(f"gru: input width {x.shape[1]} vs cell input {self.in_dim}")
        if h.shape != (x.shape[0], self.hidden):
            raise ShapeError(f"gru: state shape {h.shape} vs expected {(x.shape[0], self.hidden)}")
        z, _, cand = self.gates(tape, x, h)
        keep = tape.sub(tape.const(1.0), z)
        return tape.add(tape.mul(keep, h), tape.mul(z, cand))


class GruStack(Module):
    def __init__(self, in_dim: int, hidden: int = 128, layers: int = 2, rng=None):
        rng = _rng(rng)
        self.cells = [GruCell(in_dim if i == 0 else hidden, hidden, rng) for i in range(layers)]

    @property
    def hidden(self) -> int:
        return self.cells[0].hidden

    def __call__(self, tape: Tape, seq: Sequence[Node], h0: Sequence[Node] | None = None) -> list[Node]:
        return gru_forward(tape, self, seq, h0)


def gru_forward(tape: Tape, stack: GruStack, seq: Sequence[Node], h0: Sequence[Node] | None = None) -> list[Node]:
    """Run every layer over the sequence; returns the top layer's states."""
    if len(seq) < 1:
        raise ValueError("gru_forward needs a sequence of length >= 1")
    batch = seq[0].shape[0]
    outputs = list(seq)
    for i, cell in enumerate(stack.cells):
        h = tape.const(np.zeros((batch, cell.hidden))) if h0 is None else h0[i]
        states = []
        for x in outputs:
            h = cell(tape, x, h)
            states.append(h)
        outputs = states
    return outputs


def dropout_apply(tape: Tape, x: Node, rate: float, rng=None, training: bool = True) -> Node:
    """Inverted dropout: keep with probability 1 - rate, scale kept by 1 / (1 - rate)."""
    if not 0.0 <= rate < 1.0:
        raise ValueError("dropout rate must lie in [0, 1)")
    if not training or rate == 0.0:
        return x
    keep = _rng(rng).random(x.shape) >= rate
    return tape.mul(x, tape.const(keep / (1.0 - rate)))


class MultiTaskHead(Module):
    def __init__(self, features: int, n_aus: int = N_AUS, rng=None):
        rng = _rng(rng)
        self.va = Dense(features, 2, rng=rng)
        self.au = Dense(features, n_aus, rng=rng)
        self.expr = Dense(features, N_EXPRESSIONS, rng=rng)

    def __call__(self, tape: Tape, feats: Node) -> MultiTaskOutputs:
        return multitask_forward(tape, self, feats)


def multitask_forward(tape: Tape, head: MultiTaskHead, feats: Node) -> MultiTaskOutputs:
    return MultiTaskOutputs(va=head.va(tape, feats), au=head.au(tape, feats), expr=head.expr(tape, feats))


def _as_node(tape: Tape, x) -> Node:
    return x if isinstance(x, Node) else tape.const(x)


class MultiTaskNet(Module):
    """Dense backbone, dropout, then the three task heads."""

    def __init__(self, in_dim: int, hidden: Sequence[int] = (64,), n_aus: int = N_AUS, dropout: float = 0.4, seed=0):
        rng = _rng(seed)
        dims = [in_dim, *hidden]
        self.backbone = [Dense(a, b, "relu", rng) for a, b in zip(dims[:-1], dims[1:])]
        self.head = MultiTaskHead(dims[-1], n_aus, rng)
        self.dropout = dropout

    def features(self, tape: Tape, x, training: bool = False, rng=None) -> Node:
        h = _as_node(tape, x)
        for layer in self.backbone:
            h = layer(tape, h)
        return dropout_apply(tape, h, self.dropout, rng, training)

    def __call__(self, tape: Tape, x, training: bool = False, rng=None) -> MultiTaskOutputs:
        return self.head(tape, self.features(tape, x, training, rng))


def time_major(arr: np.ndarray) -> np.ndarray:
    """(batch, time, ...) -> (time * batch, ...) in the row order of sequence outputs."""
    arr = np.asarray(arr)
    return np.swapaxes(arr, 0, 1).reshape((arr.shape[0] * arr.shape[1],) + arr.shape[2:])


def _steps(tape: Tape, x: np.ndarray) -> list[Node]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ShapeError(f"sequence input must be (batch, time, features), got {x.shape}")
    return [tape.const(x[:, t, :]) for t in range(x.shape[1])]


class SequenceStream(Module):
    """fc layer followed by a GRU stack; per-step features of width ``gru_hidden``."""

    def __init__(self, in_dim: int, fc_dim: int, gru_hidden: int = 128, gru_layers: int = 2, rng=None):
        rng = _rng(rng)
        self.fc = Dense(in_dim, fc_dim, "relu", rng)
        self.gru = GruStack(fc_dim, gru_hidden, gru_layers, rng)

    def __call__(self, tape: Tape, steps: Sequence[Node]) -> list[Node]:
        return self.gru(tape, [self.fc(tape, x) for x in steps])


class MultiTaskGRUNet(Module):
    """fc -> stacked GRU -> heads at every time step.

    Outputs are stacked time-major: row ``t * batch + b``.
    """

    def __init__(self, in_dim: int, fc_dim: int = 64, gru_hidden: int = 128, gru_layers: int = 2,
                 n_aus: int = N_AUS, dropout: float = 0.4, seed=0):
        rng = _rng(seed)
        self.stream = SequenceStream(in_dim, fc_dim, gru_hidden, gru_layers, rng)
        self.head = MultiTaskHead(gru_hidden, n_aus, rng)
        self.dropout = dropout

    def __call__(self, tape: Tape, x, training: bool = False, rng=None) -> MultiTaskOutputs:
        states = self.stream(tape, _steps(tape, x))
        feats = dropout_apply(tape, tape.vconcat(states), self.dropout, rng, training)
        return self.head(tape, feats)


def av_fusion_forward(tape: Tape, visual: Sequence[Node], audio: Sequence[Node], fusion: GruStack) -> list[Node]:
    """Concatenate visual and audio features per step (visual first) and run the fusion GRU."""
    if len(visual) != len(audio):
        raise ValueError(f"stream lengths differ: {len(visual)} visual vs {len(audio)} audio steps")
    return fusion(tape, [tape.hconcat([v, a]) for v, a in zip(visual, audio)])


class AVFusionNet(Module):
    def __init__(self, visual_dim: int, audio_dim: int, fc_dim: int = 64, stream_hidden: int = 128,
                 fusion_hidden: int = 128, gru_layers: int = 2, n_aus: int = N_AUS, dropout: float = 0.4, seed=0):
        rng = _rng(seed)
        self.visual = SequenceStream(visual_dim, fc_dim, stream_hidden, gru_layers, rng)
        self.audio = SequenceStream(audio_dim, fc_dim, stream_hidden, gru_layers, rng)
        self.fusion = GruStack(2 * stream_hidden, fusion_hidden, gru_layers, rng)
        self.head = MultiTaskHead(fusion_hidden, n_aus, rng)
        self.dropout = dropout

    def __call__(self, tape: Tape, visual, audio, training: bool = False, rng=None) -> MultiTaskOutputs:
        v = self.visual(tape, _steps(tape, visual))
        a = self.audio(tape, _steps(tape, audio))
        fused = av_fusion_forward(tape, v, a, self.fusion)
        feats = dropout_apply(tape, tape.vconcat(fused), self.dropout, rng, training)
        return self.head(tape, feats)


class ArcFaceHead(Module):
    """Class-weight matrix of shape (dim, 7) with scale and angular margin."""

    def __init__(self, dim: int, n_classes: int = N_EXPRESSIONS, scale: float = 64.0, margin: float = 0.1, rng=None):
        rng = _rng(rng)
        self.weight = Param(glorot(rng, dim, n_classes))
        self.scale = float(scale)
        self.margin = float(margin)
        self.renormalize()

    def renormalize(self) -> None:
        norms = np.linalg.norm(self.weight.data, axis=0, keepdims=True)
        self.weight.data = self.weight.data / norms

    def logits(self, tape: Tape, emb: Node, targets=None) -> Node:
        self.renormalize()
        return arcface_logits(tape, emb, tape.param(self.weight), self.scale, self.margin, targets)

    def loss(self, tape: Tape, emb: Node, targets) -> Node:
        self.renormalize()
        return arcface_loss(tape, emb, tape.param(self.weight), self.scale, self.margin, targets)


class ArcFaceNet(Module):
    """Dense backbone ending in a linear embedding layer, plus an ArcFace head."""

    def __init__(self, in_dim: int, hidden: Sequence[int] = (32,), dim: int = 32, scale: float = 64.0,
                 margin: float = 0.1, dropout: float = 0.0, seed=0):
        rng = _rng(seed)
        dims = [in_dim, *hidden]
        self.backbone = [Dense(a, b, "relu", rng) for a, b in zip(dims[:-1], dims[1:])]
        self.embedding = Dense(dims[-1], dim, "linear", rng)
        self.head = ArcFaceHead(dim, N_EXPRESSIONS, scale, margin, rng)
        self.dropout = dropout

    def embed(self, tape: Tape, x, training: bool = False, rng=None) -> Node:
        h = _as_node(tape, x)
        for layer in self.backbone:
            h = layer(tape, h)
        h = dropout_apply(tape, h, self.dropout, rng, training)
        return self.embedding(tape, h)

    def embeddings(self, x) -> np.ndarray:
        return self.embed(Tape(), x).value.copy()
