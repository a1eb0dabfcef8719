"""Dataset collection recipes for each benchmark environment.

Each environment has a fixed recipe and a canonical size; requesting a size
the recipe cannot honor raises ``ValueError``. All collection is reproducible
from the supplied generator.
"""

from __future__ import annotations

import numpy as np

from .base import TransitionBatch
from .bicycle import Bicycle
from .car_on_hill import CarOnHill
from .chain_walk import ChainWalk
from .lqr import LqrEnv


def collect_chain_walk(env: ChainWalk, rng: np.random.Generator, size: int = 400) -> TransitionBatch:
    """Every (state, action) pair sampled ``size / (N*M)`` times."""
    if size == 0:
        return TransitionBatch.empty(env.state_dim)
    pairs = env.n_states * env.n_actions
    if size < 0 or size % pairs != 0:
        raise ValueError(f"chain-walk dataset size must be a positive multiple of {pairs}")
    repeats = size // pairs
    states, actions, rewards, next_states = [], [], [], []
    for _ in range(repeats):
        for s in range(env.n_states):
            for a in range(env.n_actions):
                nxt, r, _ = env.step(np.array([float(s)]), a, rng)
                states.append([float(s)])
                actions.append(a)
                rewards.append(r)
                next_states.append(nxt)
    return TransitionBatch(states, actions, rewards, next_states, [False] * size)


def collect_lqr(env: LqrEnv, rng=None, size: int = 121, half_range: float = 4.0) -> TransitionBatch:
    """Deterministic mesh over the state-action square [-4, 4]^2."""
    mesh = int(round(np.sqrt(size)))
    if mesh * mesh != size or mesh < 2:
        raise ValueError("LQR dataset size must be a perfect square >= 4")
    grid = np.linspace(-half_range, half_range, mesh)
    states, actions, rewards, next_states = [], [], [], []
    for s in grid:
        for a in grid:
            nxt, r, _ = env.transition(s, a)
            states.append([s])
            actions.append(a)
            rewards.append(r)
            next_states.append([nxt])
    return TransitionBatch(states, actions, rewards, next_states, [False] * size)


def _uniform_policy_episodes(env, rng, start_fn, needed, horizon):
    collected = []
    while len(collected) < needed:
        state = start_fn()
        for _ in range(horizon):
            action = int(rng.integers(env.n_actions))
            nxt, r, term = env.step(state, action, rng)
            collected.append((state.copy(), action, r, nxt.copy(), term))
            state = nxt
            if term or len(collected) >= needed:
                break
    return collected[:needed]


def collect_car_on_hill(env: CarOnHill, rng: np.random.Generator, size: int = 5500) -> TransitionBatch:
    """Uniform-policy episodes: 9/11 from the valley floor, 2/11 from uphill.

    The canonical 5500-sample dataset splits 4500/1000; scaled sizes keep the
    same proportions. Uphill starts are uniform over position [0.1, 0.5] and
    velocity [0.38, 1.3], which covers states likely to reach the goal.
    """
    if size == 0:
        return TransitionBatch.empty(env.state_dim)
    if size < 11 or size % 11 != 0:
        raise ValueError("car-on-hill dataset size must be a positive multiple of 11")
    n_valley = size * 9 // 11
    n_uphill = size - n_valley

    valley = _uniform_policy_episodes(
        env, rng, lambda: np.array([-0.5, 0.0]), n_valley, env.horizon
    )
    uphill = _uniform_policy_episodes(
        env,
        rng,
        lambda: np.array([rng.uniform(0.1, 0.5), rng.uniform(0.38, 1.3)]),
        n_uphill,
        env.horizon,
    )
    rows = valley + uphill
    return TransitionBatch(
        [r[0] for r in rows],
        [r[1] for r in rows],
        [r[2] for r in rows],
        [r[3] for r in rows],
        [r[4] for r in rows],
    )


def collect_bicycle(
    env: Bicycle, rng: np.random.Generator, size: int = 70_000, episode_steps: int = 20
) -> TransitionBatch:
    """Short uniform-policy episodes from near-upright starts, cut at 20 steps."""
    if size == 0:
        return TransitionBatch.empty(env.state_dim)
    if size < 0:
        raise ValueError("bicycle dataset size must be nonnegative")
    rows = _uniform_policy_episodes(
        env, rng, lambda: env.initial_state(rng), size, episode_steps
    )
    return TransitionBatch(
        [r[0] for r in rows],
        [r[1] for r in rows],
        [r[2] for r in rows],
        [r[3] for r in rows],
        [r[4] for r in rows],
    )


def default_dataset(env, rng: np.random.Generator, size: int | None = None) -> TransitionBatch:
    """Collect the environment's canonical dataset (or a scaled one)."""
    if isinstance(env, ChainWalk):
        return collect_chain_walk(env, rng, 400 if size is None else size)
    if isinstance(env, LqrEnv):
        return collect_lqr(env, rng, 121 if size is None else size)
    if isinstance(env, CarOnHill):
        return collect_car_on_hill(env, rng, 5500 if size is None else size)
    if isinstance(env, Bicycle):
        return collect_bicycle(env, rng, 70_000 if size is None else size)
    raise ValueError(f"no dataset recipe for environment {type(env).__name__}")
