import numpy as np
import pytest
from scipy import stats

from obfusbench.agents import (
    BCPolicy,
    BCTrainConfig,
    RandomAgent,
    bc_train,
    cross_entropy_and_grads,
    load_policy,
    policy_act,
    random_agent,
    save_policy,
)
from obfusbench.dense import DenseNetwork, finite_diff_check, init_network
from obfusbench.errors import EmptyDataset
from obfusbench.quantize import CentroidSet, LabeledDataset, save_centroids


def centroid_set(k, dim=3, seed=0):
    return CentroidSet(np.random.default_rng(seed).uniform(-1, 1, size=(k, dim)), 0.0, seed)


def peaked_policy(logit_rows, centroids):
    """BCPolicy whose network outputs fixed logits (zero weights, bias = logits)."""
    logits = np.asarray(logit_rows, dtype=float)
    net = DenseNetwork((2, len(logits)), [np.zeros((2, len(logits)))], [logits])
    policy = BCPolicy(centroids)
    policy.network_, policy.classes_, policy.n_features_in_ = net, np.arange(len(logits)), 2
    return policy


class TestTraining:
    def test_separable(self):
        rng = np.random.default_rng(0)
        X = np.vstack([rng.normal(-1, 0.3, size=(200, 2)), rng.normal(1, 0.3, size=(200, 2))])
        y = np.repeat([0, 1], 200)
        policy = BCPolicy(steps=2000, random_state=0).fit(X, y)
        assert policy.train_accuracy_ >= 0.99
        h = policy.loss_history_
        assert h[-200:].mean() < h[:200].mean()

    def test_single_pair(self):
        cs = centroid_set(4)
        policy = BCPolicy(cs, steps=300).fit(np.array([[0.2, -0.1]]), np.array([2]))
        assert policy.train_accuracy_ == 1.0
        rng = np.random.default_rng(0)
        assert all(policy.sample_label([0.2, -0.1], rng) == 2 for _ in range(100))

    def test_deterministic(self):
        X = np.random.default_rng(1).normal(size=(50, 3))
        y = (X[:, 0] > 0).astype(int)
        a = BCPolicy(steps=200, random_state=4).fit(X, y)
        b = BCPolicy(steps=200, random_state=4).fit(X, y)
        assert all(np.array_equal(p, q) for p, q in zip(a.network_.parameters(), b.network_.parameters()))

    def test_empty(self):
        with pytest.raises(EmptyDataset):
            BCPolicy().fit(np.zeros((0, 2)), np.zeros(0, dtype=int))

    def test_bad_labels(self):
        with pytest.raises(ValueError):
            BCPolicy(centroid_set(2)).fit(np.zeros((3, 2)), np.array([0, 1, 2]))

    def test_cross_entropy_gradient(self):
        rng = np.random.default_rng(2)
        for k in range(20):
            net = init_network([4, 6, 5], [k, 1])
            X, y = rng.normal(size=(8, 4)), rng.integers(5, size=8)
            assert finite_diff_check(net, lambda n: cross_entropy_and_grads(n, X, y)) < 1e-4

    def test_sklearn_params(self):
        params = BCPolicy(steps=5).get_params()
        assert params["steps"] == 5 and "learning_rate" in params


class TestFiltering:
    def dataset(self):
        obs = np.arange(10, dtype=float).reshape(5, 2)
        return LabeledDataset(obs, np.array([0, 1, 0, 1, 1]), [10, 11, 12], [3.0, 7.0, 1571.0],
                              [(0, 2), (2, 3), (3, 5)], 2)

    def test_drops_unsuccessful(self):
        kept = self.dataset().filter_by_score(7.0)
        assert kept.episode_seeds == [11, 12] and len(kept) == 3
        assert kept.episode_bounds == [(0, 1), (1, 3)]
        assert kept.observations[:, 0].tolist() == [4.0, 6.0, 8.0]

    def test_bc_train_filters(self):
        ds = self.dataset()
        policy = bc_train(ds, centroid_set(2), BCTrainConfig(steps=50), seed=0)
        assert policy.network_.n_outputs == 2
        with pytest.raises(EmptyDataset):
            bc_train(ds, centroid_set(2), BCTrainConfig(steps=5, min_episode_score=2000), seed=0)


class TestActing:
    def test_peaked(self):
        cs = centroid_set(4)
        policy = peaked_policy([0.0, 0.0, 25.0, 0.0], cs)
        rng = np.random.default_rng(0)
        hits = sum(np.array_equal(policy_act(policy, [0.0, 0.0], rng), cs.centroids[2]) for _ in range(1000))
        assert hits >= 999

    def test_uniform_frequencies(self):
        policy = peaked_policy([1.0, 1.0, 1.0, 1.0], centroid_set(4))
        rng = np.random.default_rng(1)
        counts = np.bincount([policy.sample_label([0.0, 0.0], rng) for _ in range(10_000)], minlength=4)
        assert np.all(np.abs(counts / 10_000 - 0.25) <= 0.03)

    def test_matches_softmax_chi_square(self):
        rng = np.random.default_rng(2)
        for probe in range(5):
            logits = rng.normal(0, 1.5, size=6)
            policy = peaked_policy(logits, centroid_set(6))
            counts = np.bincount([policy.sample_label([0.0, 0.0], rng) for _ in range(10_000)], minlength=6)
            expected = 10_000 * policy.predict_proba(np.zeros((1, 2)))[0]
            assert stats.chisquare(counts, expected).pvalue > 0.001

    def test_actions_in_box(self):
        cs = centroid_set(5)
        policy = peaked_policy(np.zeros(5), cs)
        rng = np.random.default_rng(3)
        for _ in range(200):
            assert np.all(np.abs(policy.act([0.0, 0.0], rng)) <= 1)

    def test_random_agent(self):
        a = random_agent(16, np.random.default_rng(5))
        b = RandomAgent(16)(None, np.random.default_rng(5))
        assert a.shape == (16,) and np.all(np.abs(a) <= 1) and np.array_equal(a, b)


class TestPolicyFile:
    def test_round_trip(self, tmp_path):
        cs = centroid_set(3, dim=2)
        save_centroids(cs, tmp_path / "c.json")
        X = np.random.default_rng(0).normal(size=(30, 2))
        policy = BCPolicy(cs, steps=50).fit(X, np.arange(30) % 3)
        save_policy(policy, tmp_path / "p.json", tmp_path / "c.json")
        back, refs = load_policy(tmp_path / "p.json")
        assert refs["obs_model"] is None and refs["centroids"].endswith("c.json")
        assert np.array_equal(back.decision_function(X), policy.decision_function(X))
        assert np.array_equal(back.centroids.centroids, cs.centroids)
