"""Bicycle balancing with lean/handlebar dynamics.

State is (lean angle, lean rate, handlebar angle, handlebar rate). The five
actions either apply a handlebar torque in {-2, 0, 2} or displace the rider's
center of mass by {-0.02, 0, 0.02} m (never both). Uniform noise is added to
the displacement; its magnitude here is a tenth of the customary 0.02 m.

Falling (|lean| > 12 degrees) pays -1 and terminates; otherwise the reward is
the shaped term 1e4 * (|lean_t| - |lean_{t+1}|), which telescopes over any
non-falling trajectory. Physical constants are the standard ones for this
benchmark (15 kg bicycle, 60 kg rider, constant 10 km/h forward speed);
integration is explicit Euler at 0.01 s steps.
"""

from __future__ import annotations

import numpy as np

FALL_ANGLE = np.radians(12.0)
HANDLEBAR_LIMIT = np.radians(80.0)


class Bicycle:
    state_dim = 4
    n_actions = 5
    # (handlebar torque, rider displacement); torque and displacement are exclusive
    actions = ((-2.0, 0.0), (0.0, 0.0), (2.0, 0.0), (0.0, -0.02), (0.0, 0.02))

    def __init__(
        self,
        gamma: float = 0.99,
        horizon: int = 50_000,
        noise_magnitude: float = 0.002,
        dt: float = 0.01,
    ):
        self.gamma = gamma
        self.horizon = horizon
        self.noise_magnitude = noise_magnitude
        self.dt = dt

        # rider/frame geometry and masses
        self.cm_front = 0.66
        self.cm_drop = 0.30
        self.cm_height = 0.94
        self.wheelbase = 1.11
        self.mass_frame = 15.0
        self.mass_tire = 1.7
        self.mass_rider = 60.0
        self.tire_radius = 0.34
        self.speed = 10.0 / 3.6
        self.gravity = 9.82

        m_total = self.mass_frame + self.mass_rider
        h, r = self.cm_height, self.tire_radius
        self.mass_total = m_total
        self.inertia_lean = (13.0 / 3.0) * self.mass_frame * h**2 + self.mass_rider * (
            h + self.cm_drop
        ) ** 2
        self.inertia_tire = self.mass_tire * r**2
        self.inertia_gyro = 1.5 * self.mass_tire * r**2
        self.inertia_handlebar = 0.5 * self.mass_tire * r**2
        self.tire_spin = self.speed / r

    def step(self, state, action: int, rng: np.random.Generator):
        if not 0 <= action < self.n_actions:
            raise ValueError(f"invalid action index {action} for bicycle")
        lean, lean_rate, bar, bar_rate = np.asarray(state, dtype=np.float64)
        torque, displacement = self.actions[action]
        displacement = displacement + rng.uniform(-self.noise_magnitude, self.noise_magnitude)

        total_lean = lean + np.arctan(displacement / self.cm_height)
        if bar == 0.0:
            inv_rf = inv_rb = inv_rcm = 0.0
        else:
            inv_rf = np.abs(np.sin(bar)) / self.wheelbase
            inv_rb = np.abs(np.tan(bar)) / self.wheelbase
            inv_rcm = 1.0 / np.sqrt(
                (self.wheelbase - self.cm_front) ** 2 + self.wheelbase**2 / np.tan(bar) ** 2
            )
        lean_acc = (
            self.mass_total * self.cm_height * self.gravity * np.sin(total_lean)
            - np.cos(total_lean)
            * (
                self.inertia_tire * self.tire_spin * bar_rate
                + np.sign(bar)
                * self.speed**2
                * (
                    self.mass_tire * self.tire_radius * (inv_rf + inv_rb)
                    + self.mass_total * self.cm_height * inv_rcm
                )
            )
        ) / self.inertia_lean
        bar_acc = (torque - self.inertia_gyro * self.tire_spin * lean_rate) / self.inertia_handlebar

        dt = self.dt
        new_lean = lean + dt * lean_rate
        new_lean_rate = lean_rate + dt * lean_acc
        new_bar = bar + dt * bar_rate
        new_bar_rate = bar_rate + dt * bar_acc
        if abs(new_bar) > HANDLEBAR_LIMIT:
            new_bar = np.sign(new_bar) * HANDLEBAR_LIMIT
            new_bar_rate = 0.0

        next_state = np.array([new_lean, new_lean_rate, new_bar, new_bar_rate])
        if abs(new_lean) > FALL_ANGLE:
            return next_state, -1.0, True
        return next_state, 1.0e4 * (abs(lean) - abs(new_lean)), False

    def initial_state(self, rng: np.random.Generator | None = None, jitter: float = 0.01):
        """Upright start; with an rng, the two angles get small uniform jitter."""
        state = np.zeros(4)
        if rng is not None and jitter > 0:
            state[0] = rng.uniform(-jitter, jitter)
            state[2] = rng.uniform(-jitter, jitter)
        return state
