import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from obfusbench.errors import FormatError, InvalidPoint, InvalidSpace, InvalidVector, UnsupportedVersion
from obfusbench.spaces import (
    MixedSpace,
    SpacePoint,
    check_packed,
    flatten,
    flatten_packed,
    hinge_box_packed,
    hinge_to_box,
    hinge_to_space,
    load_space,
    pack,
    recon_loss_packed,
    recon_metric,
    sample,
    sample_packed,
    save_space,
    unflatten,
    unflatten_packed,
    unpack,
)

TOY = MixedSpace(continuous=((-1, 1), (-1, 1)), discrete=(3,))


# a space strategy: 0-3 intervals and 0-3 categorical parts, never empty
@st.composite
def spaces(draw):
    n_cont = draw(st.integers(0, 3))
    bounds = []
    for _ in range(n_cont):
        lo = draw(st.floats(-10, 10, allow_nan=False))
        width = draw(st.floats(0.01, 10))
        bounds.append((lo, lo + width))
    disc = draw(st.lists(st.integers(2, 6), min_size=0 if n_cont else 1, max_size=3))
    return MixedSpace(tuple(bounds), tuple(disc))


def scalar_recon(space, predicted, target):
    total = 0.0
    for i, v in enumerate(target.continuous):
        total += (predicted[i] - v) ** 2
    off = space.n_continuous
    for c, cat in zip(space.discrete, target.discrete):
        block = predicted[off:off + c]
        m = max(block)
        logz = m + math.log(sum(math.exp(b - m) for b in block))
        total += logz - block[cat]
        off += c
    return total


class TestConstruction:
    def test_flat_dim(self):
        assert TOY.flat_dim == 5
        assert TOY.packed_dim == 3
        assert MixedSpace(discrete=(5, 13)).flat_dim == 18

    @pytest.mark.parametrize("kwargs", [
        {},
        {"continuous": ((0, 0),)},
        {"continuous": ((1, 0),)},
        {"continuous": ((0, math.inf),)},
        {"discrete": (1,)},
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(InvalidSpace):
            MixedSpace(**kwargs)

    def test_document_round_trip(self, tmp_path):
        path = tmp_path / "s.json"
        save_space(TOY, path)
        doc = json.loads(path.read_text())
        assert set(doc) == {"version", "continuous", "discrete"}
        assert load_space(path) == TOY

    def test_bad_documents(self, tmp_path):
        path = tmp_path / "s.json"
        path.write_text('{"version": 999, "continuous": [], "discrete": [2]}')
        with pytest.raises(UnsupportedVersion):
            load_space(path)
        path.write_text('{"continuous": []')
        with pytest.raises(FormatError):
            load_space(path)
        path.write_text('{"version": 1}')
        with pytest.raises(FormatError):
            load_space(path)


class TestSampling:
    def test_sample_in_space(self):
        space = MixedSpace(((-1, 1),), (3,))
        p = sample(space, np.random.default_rng(0))
        assert -1 <= p.continuous[0] <= 1 and p.discrete[0] in (0, 1, 2)

    def test_bounds_respected(self):
        space = MixedSpace(((-1, 1), (0, 8), (2.5, 2.6)), (3, 5))
        X = sample_packed(space, np.random.default_rng(1), 100_000)
        check_packed(space, X)

    def test_category_frequencies(self):
        # binomial sd per category is sqrt(.25*.75/1e4) ~ 0.43%, so +-2% is a >4 sigma band
        X = sample_packed(MixedSpace(discrete=(4,)), np.random.default_rng(2), 10_000)
        freqs = np.bincount(X[:, 0].astype(int), minlength=4) / 10_000
        assert np.all(np.abs(freqs - 0.25) <= 0.02)

    def test_deterministic(self):
        a = sample_packed(TOY, np.random.default_rng(5), 10)
        b = sample_packed(TOY, np.random.default_rng(5), 10)
        assert np.array_equal(a, b)


class TestFlatten:
    def test_one_hot_example(self):
        v = flatten(TOY, SpacePoint((0.2, -0.5), (1,)))
        assert v.tolist() == [0.2, -0.5, 0, 1, 0]

    def test_pure_continuous_identity(self):
        space = MixedSpace.box(-1, 1, 3)
        assert flatten(space, SpacePoint((0.1, 0.2, -0.3))).tolist() == [0.1, 0.2, -0.3]

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidPoint):
            flatten(TOY, SpacePoint((0.2,), (1,)))
        with pytest.raises(InvalidPoint):
            flatten(TOY, SpacePoint((0.2, 0.1), (3,)))

    def test_round_trip_random(self):
        rng = np.random.default_rng(3)
        space = MixedSpace(((-1, 1), (0, 8)), (3, 4, 2))
        for _ in range(1000):
            p = sample(space, rng)
            assert unflatten(space, flatten(space, p)) == p

    @settings(max_examples=60, deadline=None)
    @given(spaces(), st.integers(0, 2**32 - 1))
    def test_round_trip_property(self, space, seed):
        X = sample_packed(space, np.random.default_rng(seed), 20)
        assert np.array_equal(unflatten_packed(space, flatten_packed(space, X)), X)
        assert unpack(space, X) == unpack(space, pack(space, unpack(space, X)))

    def test_clamp(self):
        assert unflatten(MixedSpace.box(-1, 1, 1), [1.7]).continuous == (1.0,)

    def test_argmax_and_ties(self):
        d3 = MixedSpace(discrete=(3,))
        assert unflatten(d3, [0.1, 0.7, 0.2]).discrete == (1,)
        assert unflatten(d3, [0.5, 0.5, 0.0]).discrete == (0,)

    def test_length_mismatch(self):
        with pytest.raises(InvalidVector):
            unflatten(TOY, [0.0] * 4)

    @settings(max_examples=60, deadline=None)
    @given(spaces(), st.integers(0, 2**32 - 1))
    def test_unflatten_always_valid(self, space, seed):
        rng = np.random.default_rng(seed)
        flat = rng.normal(0, 20, size=(10, space.flat_dim))
        for p in unpack(space, unflatten_packed(space, flat)):
            assert space.contains(p)


class TestReconMetric:
    def test_exact_continuous(self):
        space = MixedSpace.box(-1, 1, 1)
        assert recon_metric(space, [0.3], SpacePoint((0.3,))) == 0.0

    def test_uniform_logits(self):
        space = MixedSpace(discrete=(3,))
        assert recon_metric(space, [0.4, 0.4, 0.4], SpacePoint((), (1,))) == pytest.approx(math.log(3), abs=1e-12)

    def test_against_scalar_oracle(self):
        rng = np.random.default_rng(4)
        space = MixedSpace(((-1, 1), (0, 8), (-3, 2)), (3, 2, 5))
        for _ in range(100):
            target = sample(space, rng)
            predicted = rng.normal(0, 3, size=space.flat_dim)
            assert recon_metric(space, predicted, target) == pytest.approx(
                scalar_recon(space, list(predicted), target), rel=1e-12, abs=1e-12)

    def test_target_logit_monotone(self):
        space = MixedSpace(((0, 1),), (4,))
        p = SpacePoint((0.5,), (2,))
        values = []
        for t in np.linspace(0, 30, 20):
            v = np.array([0.5, 0.0, 0.0, t, 0.0])
            values.append(recon_metric(space, v, p))
        assert all(b <= a for a, b in zip(values, values[1:]))
        assert values[-1] < 1e-12

    def test_gradient(self):
        rng = np.random.default_rng(6)
        space = MixedSpace(((-1, 1), (0, 8)), (3, 2))
        target = sample_packed(space, rng, 4)
        pred = rng.normal(size=(4, space.flat_dim))
        _, grad = recon_loss_packed(space, pred, target)
        h = 1e-6
        for i in range(4):
            for j in range(space.flat_dim):
                up, dn = pred.copy(), pred.copy()
                up[i, j] += h
                dn[i, j] -= h
                num = (recon_loss_packed(space, up, target)[0][i] - recon_loss_packed(space, dn, target)[0][i]) / (2 * h)
                assert grad[i, j] == pytest.approx(num, rel=1e-6, abs=1e-8)


class TestHinge:
    @pytest.mark.parametrize("z,expected", [([0.3, -0.9], 0.0), ([1.5, -2.0], 1.5), ([1.0, -1.0], 0.0)])
    def test_box(self, z, expected):
        assert hinge_to_box(z, 2) == pytest.approx(expected)

    def test_box_length(self):
        with pytest.raises(InvalidVector):
            hinge_to_box([0.0, 0.0, 0.0], 2)

    def test_space(self):
        assert hinge_to_space(MixedSpace.box(-1, 1, 1), [0.5]) == 0.0
        assert hinge_to_space(MixedSpace.box(0, 2, 1), [2.5]) == pytest.approx(0.5)
        assert hinge_to_space(MixedSpace.box(0, 2, 1), [-0.25]) == pytest.approx(0.25)
        assert hinge_to_space(MixedSpace(discrete=(4,)), [9.0, -40.0, 3.0, 1e6]) == 0.0

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(-5, 5), min_size=1, max_size=8))
    def test_zero_iff_clamp_noop(self, z):
        z = np.array(z)
        space = MixedSpace.box(-1, 1, len(z))
        clamped = unflatten_packed(space, z[None, :])[0]
        assert (hinge_to_box(z) == 0) == bool(np.array_equal(clamped, z))

    def test_box_packed_grad_sign(self):
        loss, grad = hinge_box_packed(np.array([[2.0, -3.0, 0.5]]))
        assert loss.tolist() == [3.0]
        assert grad.tolist() == [[1.0, -1.0, 0.0]]
