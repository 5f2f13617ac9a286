"""Baseline policies over latent observation/action boxes.

Both agents only ever see latent vectors. A policy is any callable
``policy(observation, rng) -> action``.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .dense import DenseNetwork, OptimizerState, backward, forward, init_network, optimizer_step
from .errors import EmptyDataset, FormatError, ShapeMismatch, TrainingDiverged, UnsupportedVersion
from .quantize import CentroidSet, LabeledDataset, load_centroids

POLICY_FORMAT_VERSION = 1
# episodes that never reach "stick" (1 + 2 + 4) are dropped from BC data
DEFAULT_MIN_EPISODE_SCORE = 7.0


def softmax(logits: np.ndarray) -> np.ndarray:
    e = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy_and_grads(net: DenseNetwork, X: np.ndarray, y: np.ndarray):
    """Mean cross-entropy of ``net`` logits against integer labels, with gradients."""
    logits, cache = forward(net, X)
    p = softmax(logits)
    rows = np.arange(len(y))
    loss = float(-np.mean(np.log(np.maximum(p[rows, y], 1e-300))))
    g = p.copy()
    g[rows, y] -= 1.0
    grads, _ = backward(net, cache, g / len(y))
    return loss, grads


class BCPolicy(ClassifierMixin, BaseEstimator):
    """Behavioral cloning as classification over action centroids.

    ``act`` samples a centroid index from the softmax of the logits and
    returns that centroid, so emitted actions always lie in the latent box.
    """

    def __init__(self, centroids: CentroidSet | None = None, hidden_sizes=(64, 64), steps: int = 20000,
                 batch_size: int = 64, learning_rate: float = 1e-3, random_state: int = 0):
        self.centroids = centroids
        self.hidden_sizes = hidden_sizes
        self.steps = steps
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.random_state = random_state

    def _n_classes(self, y) -> int:
        if self.centroids is not None:
            return self.centroids.k
        return int(y.max()) + 1

    def fit(self, X, y):
        if len(X) == 0:
            raise EmptyDataset("behavioral cloning needs at least one transition")
        X = check_array(X)
        y = np.asarray(y, dtype=int)
        k = self._n_classes(y)
        if y.shape != (len(X),) or y.min() < 0 or y.max() >= k:
            raise ValueError(f"labels must be integers in [0, {k})")
        net = init_network([X.shape[1], *self.hidden_sizes, k], self.random_state)
        state = OptimizerState.for_network(net, lr=self.learning_rate)
        rng = np.random.default_rng([self.random_state, 7])
        history = np.empty(self.steps)
        for t in range(self.steps):
            idx = rng.integers(len(X), size=min(self.batch_size, len(X)))
            loss, grads = cross_entropy_and_grads(net, X[idx], y[idx])
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at step {t}")
            optimizer_step(net, grads, state)
            history[t] = loss
            if t % 100 == 0 and not all(np.all(np.isfinite(p)) for p in net.parameters()):
                raise TrainingDiverged(f"non-finite parameters at step {t}")
        self.network_ = net
        self.classes_ = np.arange(k)
        self.n_features_in_ = X.shape[1]
        self.loss_history_ = history
        self.train_accuracy_ = float(np.mean(self.predict(X) == y))
        return self

    def decision_function(self, X):
        check_is_fitted(self, "network_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ShapeMismatch(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return forward(self.network_, X)[0]

    def predict_proba(self, X):
        return softmax(self.decision_function(X))

    def predict(self, X):
        return np.argmax(self.decision_function(X), axis=1)

    def sample_label(self, observation, rng: np.random.Generator) -> int:
        p = self.predict_proba(np.asarray(observation, dtype=float)[None, :])[0]
        return int(rng.choice(len(p), p=p))

    def act(self, observation, rng: np.random.Generator) -> np.ndarray:
        if self.centroids is None:
            raise ValueError("policy has no centroid set to act with")
        return self.centroids.centroids[self.sample_label(observation, rng)].copy()

    __call__ = act


@dataclass
class BCTrainConfig:
    steps: int = 20000
    batch_size: int = 64
    learning_rate: float = 1e-3
    min_episode_score: float = DEFAULT_MIN_EPISODE_SCORE


def bc_train(dataset: LabeledDataset, centroids: CentroidSet, config: BCTrainConfig | None = None,
             seed: int = 0) -> BCPolicy:
    """Filter unsuccessful episodes, then fit a :class:`BCPolicy`."""
    config = config or BCTrainConfig()
    data = dataset.filter_by_score(config.min_episode_score)
    if len(data) == 0:
        raise EmptyDataset("no transitions left after filtering unsuccessful episodes")
    policy = BCPolicy(centroids, steps=config.steps, batch_size=config.batch_size,
                      learning_rate=config.learning_rate, random_state=seed)
    policy.train_config_ = config
    return policy.fit(data.observations, data.labels)


class RandomAgent:
    """Uniform sampler over ``[-1, 1]^z_dim``."""

    def __init__(self, z_dim: int):
        self.z_dim = int(z_dim)

    def __call__(self, observation, rng: np.random.Generator) -> np.ndarray:
        return random_agent(self.z_dim, rng)


def random_agent(z_dim: int, rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(-1.0, 1.0, size=z_dim)


def policy_act(policy: BCPolicy, observation, rng: np.random.Generator) -> np.ndarray:
    return policy.act(observation, rng)


# -- policy files -----------------------------------------------------------

def save_policy(policy: BCPolicy, path, centroids_path, obs_model_path=None, act_model_path=None) -> None:
    """Write a policy document; referenced files are stored relative to ``path``."""
    check_is_fitted(policy, "network_")
    base = Path(path).resolve().parent

    def ref(p):
        if p is None:
            return None
        p = Path(p).resolve()
        try:
            return str(p.relative_to(base))
        except ValueError:
            return str(p)

    cfg = getattr(policy, "train_config_", None)
    doc = {
        "version": POLICY_FORMAT_VERSION,
        "kind": "bc",
        "seed": policy.random_state,
        "train_config": asdict(cfg) if cfg is not None else None,
        "train_accuracy": policy.train_accuracy_,
        "centroids": ref(centroids_path),
        "obs_model": ref(obs_model_path),
        "act_model": ref(act_model_path),
        "network": policy.network_.to_document(),
    }
    Path(path).write_text(json.dumps(doc) + "\n")


def load_policy(path):
    """Load a policy document. Returns ``(policy, references)``.

    ``references`` maps ``obs_model``/``act_model``/``centroids`` to absolute
    paths (or ``None``).
    """
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if not isinstance(doc, dict) or "version" not in doc:
        raise FormatError("policy document lacks a version tag")
    if doc["version"] != POLICY_FORMAT_VERSION:
        raise UnsupportedVersion(f"policy document version {doc['version']!r}")
    base = Path(path).resolve().parent
    refs = {key: (str(base / doc[key]) if doc.get(key) else None) for key in ("centroids", "obs_model", "act_model")}
    try:
        net = DenseNetwork.from_document(doc["network"])
        centroids = load_centroids(refs["centroids"]) if refs["centroids"] else None
        cfg = doc.get("train_config") or {}
        policy = BCPolicy(centroids, hidden_sizes=tuple(net.layer_sizes[1:-1]),
                          steps=cfg.get("steps", 20000), batch_size=cfg.get("batch_size", 64),
                          learning_rate=cfg.get("learning_rate", 1e-3), random_state=doc["seed"])
    except KeyError as exc:
        raise FormatError(f"malformed policy document: missing {exc}") from exc
    policy.network_ = net
    policy.classes_ = np.arange(net.n_outputs)
    policy.n_features_in_ = net.n_inputs
    policy.train_accuracy_ = doc.get("train_accuracy")
    return policy, refs
