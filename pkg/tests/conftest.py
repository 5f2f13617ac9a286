"""Shared trained models. Training is the slow part of the suite, so each
model is built once per session and reused by every test that needs it."""
import time

import pytest

from obfusbench.chainworld import ACTION_SPACE
from obfusbench.obfuscator import ObfuscationTrainConfig, train_obfuscation
from obfusbench.spaces import MixedSpace

TOY_SPACE = MixedSpace(continuous=((-1, 1), (-1, 1)), discrete=(3,))
TOY_COVERAGE_SPACE = MixedSpace(continuous=((-1, 1),), discrete=(3, 4))


def _timed_train(space, z_dim, steps, seed):
    t0 = time.perf_counter()
    model = train_obfuscation(space, z_dim, ObfuscationTrainConfig(steps=steps), seed)
    return model, time.perf_counter() - t0


@pytest.fixture(scope="session")
def toy_trained():
    """(model, seconds) for Box[-1,1]^2 x Discrete(3), z_dim 8."""
    return _timed_train(TOY_SPACE, 8, 20_000, 0)


@pytest.fixture(scope="session")
def toy_model(toy_trained):
    return toy_trained[0]


@pytest.fixture(scope="session")
def act_trained():
    """(model, seconds) for the chainworld action space, z_dim 16."""
    return _timed_train(ACTION_SPACE, 16, 20_000, 1)


@pytest.fixture(scope="session")
def act_model(act_trained):
    return act_trained[0]


_ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record_acceptance(number: int, ok: bool, detail: str) -> None:
    _ACCEPTANCE[number] = (ok, detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
