import threading

import numpy as np
import pytest

from obfusbench.chainworld import (
    ACTION_SPACE,
    OBSERVATION_SPACE,
    ChainWorld,
    WorldConfig,
    env_reset,
    env_step,
    scripted_expert,
)
from obfusbench.errors import BudgetExhausted, SpaceMismatch
from obfusbench.obfuscator import ObfuscationModel
from obfusbench.spaces import MixedSpace
from obfusbench.wrappers import (
    COMPETITION_FRAME_BUDGET,
    BudgetMeter,
    budget_remaining,
    meter_budget,
    wrap_obfuscated,
)


@pytest.fixture(scope="module")
def untrained_pair():
    return ObfuscationModel.untrained(OBSERVATION_SPACE, 32, 3), ObfuscationModel.untrained(ACTION_SPACE, 16, 4)


class TestObfuscatedEnv:
    def test_space_mismatch(self, untrained_pair):
        obs_model, act_model = untrained_pair
        with pytest.raises(SpaceMismatch):
            wrap_obfuscated(ChainWorld(), act_model, act_model)
        other = ObfuscationModel.untrained(MixedSpace(discrete=(5, 12)), 16, 0)
        with pytest.raises(SpaceMismatch):
            wrap_obfuscated(ChainWorld(), obs_model, other)

    def test_only_latent_vectors_escape(self, untrained_pair):
        env = wrap_obfuscated(ChainWorld(), *untrained_pair)
        rng = np.random.default_rng(0)
        steps = 0
        seed = 0
        while steps < 10_000:
            obs = env.reset(seed)
            assert obs.shape == (32,) and np.all(np.abs(obs) <= 1)
            done = False
            while not done and steps < 10_000:
                obs, reward, done, info = env.step(rng.uniform(-1, 1, 16))
                assert obs.shape == (32,) and np.all(np.abs(obs) <= 1)
                assert isinstance(reward, float)
                steps += 1
            seed += 1

    def test_transparency(self, untrained_pair):
        obs_model, act_model = untrained_pair
        config = WorldConfig()
        wrapped = wrap_obfuscated(ChainWorld(config), obs_model, act_model)
        raw = ChainWorld(config)

        # a deterministic latent policy pi
        weights = np.random.default_rng(1).normal(size=(32, 16))

        def pi(z):
            return np.tanh(z @ weights)

        for seed in range(5):
            zo = wrapped.reset(seed)
            ro = raw.reset(seed)
            total_w = total_r = 0.0
            done = False
            while not done:
                zo, rw, done, _ = wrapped.step(pi(zo))
                latent_obs = obs_model.transform(ro[None, :])[0]
                a = act_model.inverse_transform(pi(latent_obs)[None, :])[0]
                ro, rr, done_r, _ = raw.step(a)
                total_w += rw
                total_r += rr
                assert done == done_r
            assert total_w == total_r

    def test_expert_round_trip_through_wrapper(self, act_model, untrained_pair):
        config = WorldConfig()
        obs_model = untrained_pair[0]
        env = wrap_obfuscated(ChainWorld(config), obs_model, act_model)
        agree = total = 0
        seed = 0
        while total < 1000:
            env.reset(seed)
            ref_state, _ = env_reset(config, seed)
            done = False
            while not done and total < 1000:
                a = scripted_expert(env.env.state, config)
                z = act_model.transform(np.array([[a.move, a.act]]))[0]
                _, reward, done, _ = env.step(z)
                ref_state, _, ref_reward, _, _ = env_step(config, ref_state, a)
                agree += reward == ref_reward
                total += 1
            seed += 1
        assert agree / total >= 0.99


class TestBudget:
    def test_competition_default(self):
        assert COMPETITION_FRAME_BUDGET == 8_000_000
        assert BudgetMeter().max_frames == 8_000_000

    @pytest.mark.parametrize("budget", [1, 5, 1000])
    def test_exact(self, budget):
        env = meter_budget(ChainWorld(WorldConfig(max_episode_steps=7)), budget)
        ok = 0
        seed = 0
        env.reset(seed)
        with pytest.raises(BudgetExhausted):
            while True:
                _, _, done, _ = env.step((0, 0))
                ok += 1
                if done:
                    seed += 1
                    env.reset(seed)
        assert ok == budget
        assert budget_remaining(env) == 0
        with pytest.raises(BudgetExhausted):
            env.step((0, 0))
        assert budget_remaining(env) == 0

    def test_remaining(self):
        env = meter_budget(ChainWorld(), 100)
        assert budget_remaining(env) == 100
        env.reset(0)
        for _ in range(30):
            env.step((0, 0))
        assert budget_remaining(env) == 70
        env.reset(1)  # reset does not refund
        assert budget_remaining(env) == 70

    def test_invalid(self):
        with pytest.raises(ValueError):
            BudgetMeter(0)

    def test_shared_meter_threads(self):
        meter = BudgetMeter(1000)
        successes = []

        def worker(k):
            env = meter_budget(ChainWorld(WorldConfig(max_episode_steps=50)), meter)
            env.reset(k)
            n = 0
            try:
                while True:
                    _, _, done, _ = env.step((k % 5, 0))
                    n += 1
                    if done:
                        env.reset(k + 100)
            except BudgetExhausted:
                successes.append(n)

        threads = [threading.Thread(target=worker, args=(k,)) for k in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert sum(successes) == 1000 and meter.frames_used == 1000
