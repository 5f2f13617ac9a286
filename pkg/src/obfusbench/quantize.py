"""K-means action quantization over latent action vectors.

Seeding is k-means++; refinement is plain Lloyd iteration until the
assignment stops changing. A cluster that loses all its members is moved
onto the point currently farthest from its own centroid, which can only
lower the inertia.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .chainworld import read_trajectories
from .errors import FormatError, ShapeMismatch, TooFewPoints, UnsupportedVersion

CENTROID_FORMAT_VERSION = 1
DATASET_FORMAT_VERSION = 1


def squared_distances(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    diff = X[:, None, :] - C[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


@dataclass
class CentroidSet:
    centroids: np.ndarray
    inertia: float
    seed: int
    inertia_history: list[float] = field(default_factory=list)

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    @property
    def dimension(self) -> int:
        return self.centroids.shape[1]

    def to_document(self) -> dict:
        return {
            "version": CENTROID_FORMAT_VERSION,
            "k": self.k,
            "dimension": self.dimension,
            "seed": self.seed,
            "inertia": self.inertia,
            "centroids": self.centroids.tolist(),
        }

    @classmethod
    def from_document(cls, doc: dict) -> "CentroidSet":
        if not isinstance(doc, dict) or "version" not in doc:
            raise FormatError("centroid document lacks a version tag")
        if doc["version"] != CENTROID_FORMAT_VERSION:
            raise UnsupportedVersion(f"centroid document version {doc['version']!r}")
        try:
            c = np.array(doc["centroids"], dtype=float).reshape(int(doc["k"]), int(doc["dimension"]))
            if not np.all(np.isfinite(c)):
                raise ValueError("non-finite centroid")
            return cls(c, float(doc["inertia"]), int(doc["seed"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed centroid document: {exc}") from exc


def save_centroids(cs: CentroidSet, path) -> None:
    Path(path).write_text(json.dumps(cs.to_document()) + "\n")


def load_centroids(path) -> CentroidSet:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    return CentroidSet.from_document(doc)


def kmeans_plus_plus(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    chosen = [int(rng.integers(n))]
    closest = squared_distances(X, X[chosen])[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = int(rng.choice(n, p=closest / total))
        else:
            # every point coincides with a chosen centre (duplicates)
            idx = int(rng.integers(n))
        chosen.append(idx)
        closest = np.minimum(closest, squared_distances(X, X[idx : idx + 1])[:, 0])
    return X[chosen].copy()


def kmeans(vectors, k: int, seed: int = 0, max_iter: int = 300) -> CentroidSet:
    X = np.asarray(vectors, dtype=float)
    if X.ndim != 2:
        raise ShapeMismatch("vectors must form a 2-D array")
    if k < 1:
        raise ValueError("k must be >= 1")
    if X.shape[0] < k:
        raise TooFewPoints(f"{X.shape[0]} points cannot form {k} clusters")
    rng = np.random.default_rng(seed)
    C = kmeans_plus_plus(X, k, rng)
    d = squared_distances(X, C)
    labels = np.argmin(d, axis=1)
    history = [float(d[np.arange(len(X)), labels].sum())]
    for _ in range(max_iter):
        for j in range(k):
            members = labels == j
            if members.any():
                # shifted mean: exact when every member is the same point
                pts = X[members]
                C[j] = pts[0] + (pts - pts[0]).mean(axis=0)
        own = squared_distances(X, C)[np.arange(len(X)), labels]
        for j in range(k):
            if not (labels == j).any():
                far = int(np.argmax(own))
                C[j] = X[far]
                own[far] = 0.0
        d = squared_distances(X, C)
        new_labels = np.argmin(d, axis=1)
        history.append(float(d[np.arange(len(X)), new_labels].sum()))
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return CentroidSet(C, history[-1], seed, history)


def nearest_centroid(cs: CentroidSet, vector) -> int:
    v = np.asarray(vector, dtype=float).reshape(1, -1)
    if v.shape[1] != cs.dimension:
        raise ShapeMismatch(f"vector has {v.shape[1]} dims, centroids have {cs.dimension}")
    return int(np.argmin(squared_distances(v, cs.centroids)[0]))


class KMeansQuantizer(ClusterMixin, BaseEstimator):
    """Estimator wrapper around :func:`kmeans`."""

    def __init__(self, n_clusters: int = 16, max_iter: int = 300, random_state: int = 0):
        self.n_clusters = n_clusters
        self.max_iter = max_iter
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_array(X)
        cs = kmeans(X, self.n_clusters, self.random_state, self.max_iter)
        self.centroid_set_ = cs
        self.cluster_centers_ = cs.centroids
        self.inertia_ = cs.inertia
        self.inertia_history_ = cs.inertia_history
        self.n_iter_ = len(cs.inertia_history) - 1
        self.n_features_in_ = X.shape[1]
        self.labels_ = self.predict(X)
        return self

    def predict(self, X):
        check_is_fitted(self, "cluster_centers_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ShapeMismatch(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return np.argmin(squared_distances(X, self.cluster_centers_), axis=1)

    def transform(self, X):
        check_is_fitted(self, "cluster_centers_")
        return np.sqrt(squared_distances(check_array(X), self.cluster_centers_))


@dataclass
class LabeledDataset:
    """Latent observations paired with centroid labels, grouped by episode."""

    observations: np.ndarray
    labels: np.ndarray
    episode_seeds: list[int]
    episode_scores: list[float]
    episode_bounds: list[tuple[int, int]]
    k: int

    def __len__(self):
        return len(self.labels)

    def filter_by_score(self, min_score: float) -> "LabeledDataset":
        keep = [i for i, s in enumerate(self.episode_scores) if s >= min_score]
        rows, bounds, start = [], [], 0
        for i in keep:
            a, b = self.episode_bounds[i]
            rows.append(np.arange(a, b))
            bounds.append((start, start + b - a))
            start += b - a
        idx = np.concatenate(rows) if rows else np.zeros(0, dtype=int)
        return LabeledDataset(
            self.observations[idx], self.labels[idx],
            [self.episode_seeds[i] for i in keep], [self.episode_scores[i] for i in keep], bounds, self.k,
        )

    def to_document(self) -> dict:
        return {
            "version": DATASET_FORMAT_VERSION,
            "k": self.k,
            "episodes": [
                {"seed": s, "score": sc, "start": a, "stop": b}
                for s, sc, (a, b) in zip(self.episode_seeds, self.episode_scores, self.episode_bounds)
            ],
            "observations": self.observations.tolist(),
            "labels": self.labels.tolist(),
        }

    @classmethod
    def from_document(cls, doc: dict) -> "LabeledDataset":
        if not isinstance(doc, dict) or "version" not in doc:
            raise FormatError("dataset document lacks a version tag")
        if doc["version"] != DATASET_FORMAT_VERSION:
            raise UnsupportedVersion(f"dataset document version {doc['version']!r}")
        try:
            eps = doc["episodes"]
            return cls(
                np.array(doc["observations"], dtype=float),
                np.array(doc["labels"], dtype=int),
                [int(e["seed"]) for e in eps],
                [float(e["score"]) for e in eps],
                [(int(e["start"]), int(e["stop"])) for e in eps],
                int(doc["k"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed dataset document: {exc}") from exc


def save_dataset(ds: LabeledDataset, path) -> None:
    Path(path).write_text(json.dumps(ds.to_document()) + "\n")


def load_dataset(path) -> LabeledDataset:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    return LabeledDataset.from_document(doc)


def quantize_demo_actions(trajectory_path, act_model, k: int, seed: int, obs_model):
    """Cluster encoded demo actions; label every transition with its centroid.

    Returns ``(CentroidSet, LabeledDataset)`` with one row per transition.
    """
    episodes = read_trajectories(trajectory_path)
    actions = np.concatenate([np.stack([ep.moves, ep.acts], axis=1) for ep in episodes]).astype(float)
    observations = np.concatenate([ep.observations for ep in episodes])
    z_actions = act_model.transform(actions)
    cs = kmeans(z_actions, k, seed)
    labels = np.argmin(squared_distances(z_actions, cs.centroids), axis=1)
    bounds, start = [], 0
    for ep in episodes:
        bounds.append((start, start + len(ep)))
        start += len(ep)
    ds = LabeledDataset(
        obs_model.transform(observations), labels,
        [ep.seed for ep in episodes], [ep.score for ep in episodes], bounds, k,
    )
    return cs, ds
