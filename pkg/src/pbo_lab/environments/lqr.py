"""Scalar linear-quadratic regulator.

Deterministic dynamics s' = dyn_s*s + dyn_a*a with quadratic reward
rew_ss*s^2 + 2*rew_sa*s*a + rew_aa*a^2. The action space handed to the
algorithms is a fixed grid of 200 values in [-8, 8]; the underlying problem
is continuous and infinite-horizon (never terminal).
"""

from __future__ import annotations

import numpy as np


class LqrEnv:
    state_dim = 1

    def __init__(
        self,
        dyn_s: float = -0.46,
        dyn_a: float = 0.54,
        rew_ss: float = -0.73,
        rew_sa: float = -0.315,
        rew_aa: float = -0.93,
        gamma: float = 1.0,
        n_grid_actions: int = 200,
        action_range: float = 8.0,
    ):
        self.dyn_s = dyn_s
        self.dyn_a = dyn_a
        self.rew_ss = rew_ss
        self.rew_sa = rew_sa
        self.rew_aa = rew_aa
        self.gamma = gamma
        self.action_values = np.linspace(-action_range, action_range, n_grid_actions)
        self.n_actions = n_grid_actions

    def reward(self, state: float, action: float) -> float:
        return (
            self.rew_ss * state**2
            + 2.0 * self.rew_sa * state * action
            + self.rew_aa * action**2
        )

    def dynamics(self, state: float, action: float) -> float:
        return self.dyn_s * state + self.dyn_a * action

    def transition(self, state: float, action_value: float):
        """One deterministic step with a continuous action value."""
        return self.dynamics(state, action_value), self.reward(state, action_value), False

    def step(self, state, action: int, rng=None):
        state = float(np.asarray(state).ravel()[0])
        if not 0 <= action < self.n_actions:
            raise ValueError(f"invalid action index {action} for the LQR grid")
        a = self.action_values[action]
        nxt, r, term = self.transition(state, a)
        return np.array([nxt]), r, term

    def initial_state(self, rng: np.random.Generator) -> np.ndarray:
        return np.array([rng.uniform(-4.0, 4.0)])
