"""Synthetic datasets and the desk-scale experiments built on them."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import metrics
from .config import N_AUS, N_EXPRESSIONS, TABLE2, TrainConfig
from .embedspace import classify_batch, fit_centroids
from .losses import MultiTaskTargets, multitask_loss
from .nets import ArcFaceNet, MultiTaskGRUNet, MultiTaskNet, time_major
from .numcore import Tape
from .optim import train


def _label_maps(in_dim: int, n_aus: int, task_seed: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    fr = np.random.default_rng(task_seed)
    a = fr.normal(size=(in_dim, 2)) / np.sqrt(in_dim)
    b = fr.normal(size=(in_dim, n_aus)) / np.sqrt(in_dim)
    c = fr.normal(size=(in_dim, N_EXPRESSIONS)) / np.sqrt(in_dim)
    return a, b, c


def _label(x: np.ndarray, maps) -> dict[str, np.ndarray]:
    a, b, c = maps
    return {
        "x": x,
        "va": 0.9 * np.tanh(x @ a),
        "aus": (x @ b > 0).astype(np.float64),
        "expr": np.argmax(x @ c, axis=-1),
    }


def synthetic_multitask(n: int, in_dim: int = 16, n_aus: int = N_AUS, seed: int = 0, task_seed: int = 1234) -> dict[str, np.ndarray]:
    """Inputs x ~ N(0, I) with labels that are fixed functions of x.

    ``task_seed`` fixes the functions, ``seed`` the samples, so sets drawn
    with different ``seed`` share one labelling rule.
    """
    x = np.random.default_rng(seed).normal(size=(n, in_dim))
    return _label(x, _label_maps(in_dim, n_aus, task_seed))


def synthetic_sequences(n: int, seq_len: int, in_dim: int = 16, n_aus: int = N_AUS, seed: int = 0,
                        task_seed: int = 1234) -> dict[str, np.ndarray]:
    """Sequences of slowly drifting inputs, labelled frame by frame by the same rule."""
    rng = np.random.default_rng(seed)
    drift = np.cumsum(rng.normal(size=(n, seq_len, in_dim)) * 0.3, axis=1)
    x = rng.normal(size=(n, 1, in_dim)) + drift / np.sqrt(seq_len)
    return _label(x, _label_maps(in_dim, n_aus, task_seed))


def multitask_targets(batch: dict, tasks=("va", "au", "expr"), sequence: bool = False) -> MultiTaskTargets:
    conv = time_major if sequence else np.asarray
    return MultiTaskTargets(
        va=conv(batch["va"]) if "va" in tasks else None,
        aus=conv(batch["aus"]) if "au" in tasks else None,
        expr=conv(batch["expr"]) if "expr" in tasks else None,
    )


def multitask_loss_fn(tasks=("va", "au", "expr"), va_mode: str = "ccc", sequence: bool = False):
    def loss_fn(tape, model, batch, rng):
        out = model(tape, batch["x"], training=True, rng=rng)
        return multitask_loss(tape, out, multitask_targets(batch, tasks, sequence), va_mode)

    return loss_fn


@dataclass
class MultiTaskScores:
    ccc_v: float
    ccc_a: float
    au_f1: float
    expr_acc: float
    expr_f1: float


def predict_multitask(model, x) -> dict[str, np.ndarray]:
    out = model(Tape(), x, training=False)
    return {
        "va": out.va.value.copy(),
        "aus": (out.au.value > 0.0).astype(np.int64),
        "expr": np.argmax(out.expr.value, axis=1),
    }


def score_multitask(pred: dict[str, np.ndarray], labels: dict[str, np.ndarray]) -> MultiTaskScores:
    return MultiTaskScores(
        ccc_v=metrics.ccc_metric(pred["va"][:, 0], labels["va"][:, 0]),
        ccc_a=metrics.ccc_metric(pred["va"][:, 1], labels["va"][:, 1]),
        au_f1=metrics.f1(pred["aus"], labels["aus"].astype(np.int64), average="macro"),
        expr_acc=metrics.accuracy(pred["expr"], labels["expr"]),
        expr_f1=metrics.f1_multiclass(pred["expr"], labels["expr"]),
    )


@dataclass
class MultiTaskRun:
    scores: MultiTaskScores
    trace: list[float]
    model: MultiTaskNet
    initial: dict[str, np.ndarray]


def run_multitask_toy(
    seed: int = 0,
    steps: int = 3000,
    cfg: TrainConfig | None = None,
    tasks=("va", "au", "expr"),
    hidden=(512,),
    n_train: int = 4000,
    n_test: int = 2000,
) -> MultiTaskRun:
    """Train the dense multi-task net on synthetic data and score held-out samples."""
    cfg = cfg or dataclasses.replace(TABLE2["mt_cnn"], steps=steps, seed=seed)
    data = synthetic_multitask(n_train, seed=seed)
    test = synthetic_multitask(n_test, seed=seed + 10_000)
    model = MultiTaskNet(16, hidden, N_AUS, cfg.dropout, seed=seed)
    initial = model.state_dict()
    result = train(model, data, multitask_loss_fn(tasks), cfg)
    scores = score_multitask(predict_multitask(model, test["x"]), test)
    return MultiTaskRun(scores, result.trace, model, initial)


def synthetic_clusters(n_per_class: int, seed: int = 0, radius: float = 3.0, spread: float = 0.5) -> tuple[np.ndarray, np.ndarray]:
    """Seven isotropic 2-D Gaussian blobs with means evenly spaced on a circle."""
    rng = np.random.default_rng(seed)
    angles = 2.0 * np.pi * np.arange(N_EXPRESSIONS) / N_EXPRESSIONS
    means = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    labels = np.repeat(np.arange(N_EXPRESSIONS), n_per_class)
    x = means[labels] + spread * rng.normal(size=(len(labels), 2))
    perm = rng.permutation(len(labels))
    return x[perm], labels[perm]


@dataclass
class GeometryScores:
    intra_cos: float
    min_center_angle: float
    accuracy: float


def embedding_geometry(train_emb, train_lab, test_emb, test_lab) -> GeometryScores:
    """Compactness and separation of embeddings around label centroids."""
    model = fit_centroids(train_emb, train_lab)
    unit = test_emb / np.linalg.norm(test_emb, axis=1, keepdims=True)
    intra = float(np.mean(np.sum(unit * model.centers[test_lab], axis=1)))
    gram = np.clip(model.centers @ model.centers.T, -1.0, 1.0)
    iu = np.triu_indices(len(gram), 1)
    min_angle = float(np.min(np.arccos(gram[iu])))
    acc = metrics.accuracy(classify_batch(model, test_emb), test_lab)
    return GeometryScores(intra, min_angle, acc)


def arcface_loss_fn(tape, model, batch, rng):
    emb = model.embed(tape, batch["x"], training=True, rng=rng)
    return model.head.loss(tape, emb, batch["y"])


def run_arcface_geometry(
    seed: int,
    margin: float,
    scale: float = 64.0,
    steps: int = 2000,
    dim: int = 8,
    hidden=(32,),
    cfg: TrainConfig | None = None,
    n_train: int = 100,
    n_test: int = 100,
) -> GeometryScores:
    """Train backbone + ArcFace head on 2-D blobs and measure embedding geometry."""
    cfg = cfg or TrainConfig(optimizer="sgd_momentum", learning_rate=1e-3, batch_size=128, dropout=0.0, seed=seed, steps=steps)
    x, y = synthetic_clusters(n_train, seed=seed)
    xt, yt = synthetic_clusters(n_test, seed=seed + 10_000)
    model = ArcFaceNet(2, hidden, dim, scale, margin, dropout=cfg.dropout, seed=seed)
    train(model, {"x": x, "y": y}, arcface_loss_fn, cfg)
    return embedding_geometry(model.embeddings(x), y, model.embeddings(xt), yt)


def random_video_table(rng: np.random.Generator, max_subjects: int = 50, max_videos: int = 200,
                       min_subjects: int = 10) -> dict[str, tuple[str, int]]:
    """Random subject/video/frame-count layout for split testing."""
    n_subj = int(rng.integers(min_subjects, max_subjects + 1))
    n_vid = int(rng.integers(n_subj, max_videos + 1))
    owners = np.concatenate([np.arange(n_subj), rng.integers(0, n_subj, size=n_vid - n_subj)])
    rng.shuffle(owners)
    lengths = rng.integers(100, 5000, size=n_vid)
    return {f"v{i:03d}": (f"s{owners[i]:02d}", int(lengths[i])) for i in range(n_vid)}
