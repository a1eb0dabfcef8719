"""Car-on-hill: drive an underpowered car out of a valley.

State is (position, velocity) with position in [-1, 1] and velocity in
[-3, 3]; the two actions are full thrust left or right (labels -1 and +1,
thrust magnitude 4). Reaching position > 1 with |velocity| <= 3 pays +1,
leaving the state bounds anywhere else pays -1, and both end the episode.

Dynamics follow the classic batch-RL benchmark: unit mass on the hill
profile H(p) = p^2 + p for p < 0 and p / sqrt(1 + 5 p^2) for p >= 0, with
gravity 9.81. Each control step integrates 0.1 s of continuous time with
RK4 at a 1e-3 s internal step; the dynamics are fully deterministic.
"""

from __future__ import annotations

import numpy as np


def _hill_slope(p):
    return np.where(p < 0.0, 2.0 * p + 1.0, (1.0 + 5.0 * p**2) ** -1.5)


def _hill_curvature(p):
    return np.where(p < 0.0, 2.0, -15.0 * p * (1.0 + 5.0 * p**2) ** -2.5)


class CarOnHill:
    state_dim = 1 + 1
    n_actions = 2
    action_labels = (-1.0, 1.0)

    def __init__(
        self,
        gamma: float = 0.95,
        horizon: int = 100,
        thrust: float = 4.0,
        mass: float = 1.0,
        gravity: float = 9.81,
        control_dt: float = 0.1,
        internal_dt: float = 1e-3,
    ):
        self.gamma = gamma
        self.horizon = horizon
        self.thrust = thrust
        self.mass = mass
        self.gravity = gravity
        self.control_dt = control_dt
        self.internal_dt = internal_dt
        self._substeps = int(round(control_dt / internal_dt))

    def _acceleration(self, p, v, force):
        slope = _hill_slope(p)
        curve = _hill_curvature(p)
        return (force / self.mass - self.gravity * slope - v**2 * slope * curve) / (
            1.0 + slope**2
        )

    def integrate(self, positions, velocities, forces):
        """RK4 over one control interval; vectorized over a state batch."""
        dt = self.internal_dt
        p, v = positions.copy(), velocities.copy()
        for _ in range(self._substeps):
            k1v = self._acceleration(p, v, forces)
            k1p = v
            k2v = self._acceleration(p + 0.5 * dt * k1p, v + 0.5 * dt * k1v, forces)
            k2p = v + 0.5 * dt * k1v
            k3v = self._acceleration(p + 0.5 * dt * k2p, v + 0.5 * dt * k2v, forces)
            k3p = v + 0.5 * dt * k2v
            k4v = self._acceleration(p + dt * k3p, v + dt * k3v, forces)
            k4p = v + dt * k3v
            p = p + dt / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p)
            v = v + dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
        return p, v

    def step_batch(self, states, actions):
        """Deterministic batched step: (n, 2) states, (n,) action indices."""
        states = np.atleast_2d(np.asarray(states, dtype=np.float64))
        actions = np.asarray(actions, dtype=int)
        if np.any((actions < 0) | (actions >= self.n_actions)):
            raise ValueError("invalid action index for car-on-hill")
        forces = np.where(actions == 0, -self.thrust, self.thrust)
        p, v = self.integrate(states[:, 0], states[:, 1], forces)
        out_of_bounds = (p < -1.0) | (np.abs(v) > 3.0)
        succeeded = (p > 1.0) & (np.abs(v) <= 3.0)
        rewards = np.where(out_of_bounds, -1.0, np.where(succeeded, 1.0, 0.0))
        terminals = rewards != 0.0
        return np.stack([p, v], axis=1), rewards, terminals

    def step(self, state, action: int, rng=None):
        nxt, r, term = self.step_batch(np.asarray(state)[None, :], [action])
        return nxt[0], float(r[0]), bool(term[0])

    def initial_state(self, rng=None) -> np.ndarray:
        return np.array([-0.5, 0.0])


def start_state_grid(resolution: int = 17) -> np.ndarray:
    """Evenly spaced (position, velocity) grid over [-1,1] x [-3,3], row-major."""
    if resolution < 2:
        raise ValueError("resolution must be >= 2")
    positions = np.linspace(-1.0, 1.0, resolution)
    velocities = np.linspace(-3.0, 3.0, resolution)
    grid = [(p, v) for p in positions for v in velocities]
    return np.array(grid)
