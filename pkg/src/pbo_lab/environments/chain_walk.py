"""Chain-walk: a line of states with noisy left/right moves.

Reward is 1 in the designated reward states (for either action) and 0
elsewhere. The chosen move succeeds with ``success_prob``, otherwise the
state is unchanged; moves off either end of the chain leave the state
unchanged as well. Episodes never terminate.
"""

from __future__ import annotations

import numpy as np

from .base import FiniteModel


class ChainWalk:
    state_dim = 1

    def __init__(
        self,
        n_states: int = 20,
        gamma: float = 0.9,
        success_prob: float = 0.9,
        reward_states: tuple[int, ...] = (9, 10),
    ):
        if not 0.0 < success_prob <= 1.0:
            raise ValueError("success_prob must be in (0, 1]")
        if any(s < 0 or s >= n_states for s in reward_states):
            raise ValueError("reward_states outside the chain")
        self.n_states = n_states
        self.n_actions = 2
        self.gamma = gamma
        self.success_prob = success_prob
        self.reward_states = tuple(sorted(reward_states))

    def _move_target(self, state: int, action: int) -> int:
        step = -1 if action == 0 else 1
        return min(max(state + step, 0), self.n_states - 1)

    def reward(self, state: int) -> float:
        return 1.0 if state in self.reward_states else 0.0

    def step(self, state, action: int, rng: np.random.Generator):
        state = int(np.asarray(state).ravel()[0])
        if action not in (0, 1):
            raise ValueError(f"invalid action {action} for chain-walk")
        target = self._move_target(state, action)
        nxt = target if rng.random() < self.success_prob else state
        return np.array([float(nxt)]), self.reward(state), False

    def initial_state(self, rng: np.random.Generator) -> np.ndarray:
        return np.array([float(rng.integers(self.n_states))])

    def model(self) -> FiniteModel:
        """Exact (rewards, transition matrix) of the chain, flat (s*M + a) order."""
        n, m = self.n_states, self.n_actions
        rewards = np.zeros(n * m)
        transitions = np.zeros((n * m, n))
        for s in range(n):
            for a in range(m):
                row = s * m + a
                rewards[row] = self.reward(s)
                target = self._move_target(s, a)
                transitions[row, target] += self.success_prob
                transitions[row, s] += 1.0 - self.success_prob
        return FiniteModel(rewards, transitions, self.gamma)
