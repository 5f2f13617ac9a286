"""Environment wrappers: latent-space obfuscation and sample-budget metering.

Environments here follow a minimal protocol: ``reset(seed) -> observation``
and ``step(action) -> (observation, reward, done, info)``, plus
``observation_space`` / ``action_space`` attributes holding a
:class:`~obfusbench.spaces.MixedSpace`.
"""
from __future__ import annotations

import threading

import numpy as np

from .errors import BudgetExhausted, SpaceMismatch

COMPETITION_FRAME_BUDGET = 8_000_000


class ObfuscatedEnv:
    """Expose an environment only through latent boxes ``[-1, 1]^n``.

    Observations are encoded with ``obs_model`` and latent actions decoded
    with ``act_model`` before reaching the inner environment. The info dict
    is passed through unchanged.
    """

    def __init__(self, env, obs_model, act_model):
        if obs_model.space != env.observation_space:
            raise SpaceMismatch("observation model was trained on a different space")
        if act_model.space != env.action_space:
            raise SpaceMismatch("action model was trained on a different space")
        self.env = env
        self.obs_model = obs_model
        self.act_model = act_model

    @property
    def observation_dim(self) -> int:
        return self.obs_model.z_dim

    @property
    def action_dim(self) -> int:
        return self.act_model.z_dim

    def reset(self, seed: int) -> np.ndarray:
        return self.obs_model.transform(np.asarray(self.env.reset(seed))[None, :])[0]

    def step(self, z):
        action = self.act_model.inverse_transform(np.asarray(z, dtype=float)[None, :])[0]
        obs, reward, done, info = self.env.step(action)
        return self.obs_model.transform(np.asarray(obs)[None, :])[0], reward, done, info


def wrap_obfuscated(env, obs_model, act_model) -> ObfuscatedEnv:
    return ObfuscatedEnv(env, obs_model, act_model)


class BudgetMeter:
    """Thread-safe frame counter with a hard cap."""

    def __init__(self, max_frames: int = COMPETITION_FRAME_BUDGET):
        if max_frames < 1:
            raise ValueError("max_frames must be >= 1")
        self.max_frames = int(max_frames)
        self._used = 0
        self._lock = threading.Lock()

    @property
    def frames_used(self) -> int:
        return self._used

    def remaining(self) -> int:
        return self.max_frames - self._used

    def consume(self, frames: int = 1) -> None:
        with self._lock:
            if self._used + frames > self.max_frames:
                raise BudgetExhausted(f"frame budget of {self.max_frames} exhausted")
            self._used += frames


class MeteredEnv:
    """Charge one frame per ``step``; ``reset`` is free."""

    def __init__(self, env, meter: BudgetMeter):
        self.env = env
        self.meter = meter

    def __getattr__(self, name):
        return getattr(self.env, name)

    def reset(self, seed: int):
        return self.env.reset(seed)

    def step(self, action):
        self.meter.consume(1)
        return self.env.step(action)


def meter_budget(env, max_frames: int | BudgetMeter = COMPETITION_FRAME_BUDGET) -> MeteredEnv:
    """Wrap ``env`` with a new meter, or with a shared :class:`BudgetMeter`."""
    meter = max_frames if isinstance(max_frames, BudgetMeter) else BudgetMeter(max_frames)
    return MeteredEnv(env, meter)


def budget_remaining(env: MeteredEnv) -> int:
    return env.meter.remaining()
