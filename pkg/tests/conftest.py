"""Shared fixtures and the soft-failure exit code for stochastic criteria.

Tests marked ``stochastic`` check trends of trained runs rather than exact
math. If the only failures in a session come from such tests, the session
exit code becomes 7 so callers can tell a stochastic miss apart from a real
regression.
"""

import numpy as np
import pytest

STOCHASTIC_EXIT_CODE = 7

_failed_stochastic = []
_failed_other = []


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "stochastic: trend criterion on trained runs; soft-fails with exit code 7"
    )
    config.addinivalue_line("markers", "slow: trained-run acceptance criteria")


def pytest_runtest_logreport(report):
    if report.when == "call" and report.failed:
        if "stochastic" in report.keywords:
            _failed_stochastic.append(report.nodeid)
        else:
            _failed_other.append(report.nodeid)
    elif report.when in ("setup", "teardown") and report.failed:
        _failed_other.append(report.nodeid)


def pytest_sessionfinish(session, exitstatus):
    if exitstatus == 1 and _failed_stochastic and not _failed_other:
        session.exitstatus = STOCHASTIC_EXIT_CODE


def random_finite_mdp(rng, n_states, n_actions, gamma=0.9):
    """Random stochastic finite MDP with rewards in [-1, 1]."""
    from pbo_lab.environments.base import FiniteModel

    rewards = rng.uniform(-1.0, 1.0, n_states * n_actions)
    raw = rng.uniform(0.0, 1.0, (n_states * n_actions, n_states)) + 1e-3
    transitions = raw / raw.sum(axis=1, keepdims=True)
    return FiniteModel(rewards, transitions, gamma)


def deterministic_mdp(rng, n_states, n_actions, gamma=0.9):
    """Finite MDP whose every (s, a) moves to a single next state."""
    from pbo_lab.environments.base import FiniteModel

    rewards = rng.uniform(-1.0, 1.0, n_states * n_actions)
    transitions = np.zeros((n_states * n_actions, n_states))
    for row in range(n_states * n_actions):
        transitions[row, rng.integers(n_states)] = 1.0
    return FiniteModel(rewards, transitions, gamma)


def brute_force_bellman_sweep(model, q_flat):
    """Direct triple-loop evaluation of one optimal Bellman sweep.

    Independent oracle for the closed-form finite operator: walks every
    (state, action, next state) explicitly.
    """
    n, m = model.n_states, model.n_actions
    out = np.zeros(n * m)
    for s in range(n):
        for a in range(m):
            row = s * m + a
            acc = 0.0
            for s2 in range(n):
                best = -np.inf
                for a2 in range(m):
                    best = max(best, q_flat[s2 * m + a2])
                acc += model.transitions[row, s2] * best
            out[row] = model.rewards[row] + model.gamma * acc
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
