"""Nearest-centroid classification of embeddings by cosine similarity."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import N_EXPRESSIONS


@dataclass(frozen=True)
class CentroidModel:
    centers: np.ndarray  # (n_classes, d), unit rows
    labels: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        norms = np.linalg.norm(self.centers, axis=1)
        if not np.allclose(norms, 1.0, rtol=0, atol=1e-12):
            raise ValueError("centroid rows must have unit norm")

    def to_arrays(self) -> dict[str, np.ndarray]:
        return {
            "centers": self.centers,
            "labels": self.labels.astype(np.float64),
            "counts": self.counts.astype(np.float64),
        }

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray]) -> "CentroidModel":
        return cls(
            arrays["centers"],
            arrays["labels"].astype(np.intp),
            arrays["counts"].astype(np.int64),
        )


def _unit_rows(x: np.ndarray) -> np.ndarray:
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def fit_centroids(embeddings, labels, n_classes: int = N_EXPRESSIONS, method: str = "labels", seed: int = 0) -> CentroidModel:
    """One unit-norm center per class.

    ``labels`` groups samples by their ground-truth class and normalizes each
    group mean.  ``kmeans`` clusters the unit embeddings into ``n_classes``
    groups (spherical k-means) and names each cluster after its majority label.
    """
    emb = np.asarray(embeddings, dtype=np.float64)
    lab = np.asarray(labels, dtype=np.intp)
    if emb.ndim != 2 or lab.shape != (emb.shape[0],):
        raise ValueError(f"expected (n, d) embeddings with n labels, got {emb.shape} and {lab.shape}")
    if method == "kmeans":
        return _fit_kmeans(emb, lab, n_classes, seed)
    if method != "labels":
        raise ValueError(f"method must be 'labels' or 'kmeans', got {method!r}")
    counts = np.bincount(lab, minlength=n_classes)
    missing = np.flatnonzero(counts == 0)
    if missing.size:
        raise ValueError(f"classes without samples: {missing.tolist()}")
    means = np.zeros((n_classes, emb.shape[1]))
    np.add.at(means, lab, emb)
    means /= counts[:, None]
    zero = np.flatnonzero(np.linalg.norm(means, axis=1) == 0.0)
    if zero.size:
        raise ValueError(f"zero mean embedding for classes {zero.tolist()}")
    return CentroidModel(_unit_rows(means), np.arange(n_classes), counts)


def _fit_kmeans(emb, lab, k, seed, iters: int = 100) -> CentroidModel:
    rng = np.random.default_rng(seed)
    x = _unit_rows(emb)
    # k-means++ seeding on cosine distance
    centers = [x[rng.integers(len(x))]]
    for _ in range(1, k):
        d = 1.0 - np.max(x @ np.array(centers).T, axis=1)
        d = np.maximum(d, 0.0)
        probs = d / d.sum() if d.sum() > 0 else np.full(len(x), 1.0 / len(x))
        centers.append(x[rng.choice(len(x), p=probs)])
    c = np.array(centers)
    assign = np.full(len(x), -1)
    for _ in range(iters):
        new = np.argmax(x @ c.T, axis=1)
        if np.array_equal(new, assign):
            break
        assign = new
        for j in range(k):
            members = x[assign == j]
            if len(members):
                s = members.sum(axis=0)
                if np.linalg.norm(s) > 0:
                    c[j] = s / np.linalg.norm(s)
    names = np.array([np.bincount(lab[assign == j], minlength=k).argmax() if np.any(assign == j) else j for j in range(k)])
    counts = np.bincount(assign, minlength=k)
    return CentroidModel(_unit_rows(c), names, counts)


def similarities(model: CentroidModel, embeddings) -> np.ndarray:
    q = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    norms = np.linalg.norm(q, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise ValueError("cannot classify a zero embedding")
    return (q / norms) @ model.centers.T


def classify(model: CentroidModel, embedding) -> tuple[int, np.ndarray]:
    """Class of the most cosine-similar center (lowest index on ties) and all similarities."""
    sims = similarities(model, embedding)[0]
    return int(model.labels[np.argmax(sims)]), sims


def classify_batch(model: CentroidModel, embeddings) -> np.ndarray:
    return model.labels[np.argmax(similarities(model, embeddings), axis=1)]
