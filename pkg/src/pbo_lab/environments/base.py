"""Transitions, dataset containers, and their CSV wire format."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FLOAT_FMT = "%.17g"


@dataclass(frozen=True)
class Transition:
    """One sampled step: (state, action, reward, next_state, terminal)."""

    state: np.ndarray
    action: float
    reward: float
    next_state: np.ndarray
    terminal: bool


@dataclass
class TransitionBatch:
    """Column-oriented set of transitions; states are always (n, state_dim)."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminals: np.ndarray

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, dtype=np.float64))
        self.next_states = np.atleast_2d(np.asarray(self.next_states, dtype=np.float64))
        self.actions = np.asarray(self.actions, dtype=np.float64).ravel()
        self.rewards = np.asarray(self.rewards, dtype=np.float64).ravel()
        self.terminals = np.asarray(self.terminals, dtype=bool).ravel()
        n = len(self.actions)
        if not (
            self.states.shape[0] == n
            and self.next_states.shape[0] == n
            and len(self.rewards) == n
            and len(self.terminals) == n
        ):
            raise ValueError("transition columns have inconsistent lengths")

    def __len__(self) -> int:
        return len(self.actions)

    @staticmethod
    def empty(state_dim: int) -> "TransitionBatch":
        return TransitionBatch(
            np.zeros((0, state_dim)), np.zeros(0), np.zeros(0),
            np.zeros((0, state_dim)), np.zeros(0, dtype=bool),
        )

    @property
    def state_dim(self) -> int:
        return self.states.shape[1]

    def subset(self, idx) -> "TransitionBatch":
        return TransitionBatch(
            self.states[idx],
            self.actions[idx],
            self.rewards[idx],
            self.next_states[idx],
            self.terminals[idx],
        )

    @staticmethod
    def from_transitions(transitions) -> "TransitionBatch":
        return TransitionBatch(
            np.stack([np.atleast_1d(t.state) for t in transitions]),
            [t.action for t in transitions],
            [t.reward for t in transitions],
            np.stack([np.atleast_1d(t.next_state) for t in transitions]),
            [t.terminal for t in transitions],
        )


def save_transitions(path, batch: TransitionBatch) -> None:
    """Columnar CSV: s_0..s_{d-1}, a, r, sp_0..sp_{d-1}, terminal."""
    d = batch.state_dim
    header = (
        [f"s_{i}" for i in range(d)]
        + ["a", "r"]
        + [f"sp_{i}" for i in range(d)]
        + ["terminal"]
    )
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for i in range(len(batch)):
            row = (
                [FLOAT_FMT % v for v in batch.states[i]]
                + [FLOAT_FMT % batch.actions[i], FLOAT_FMT % batch.rewards[i]]
                + [FLOAT_FMT % v for v in batch.next_states[i]]
                + [str(int(batch.terminals[i]))]
            )
            fh.write(",".join(row) + "\n")


def load_transitions(path) -> TransitionBatch:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    d = sum(1 for name in header if name.startswith("s_"))
    data = np.array([[float(v) for v in row] for row in rows])
    return TransitionBatch(
        data[:, :d],
        data[:, d],
        data[:, d + 1],
        data[:, d + 2 : 2 * d + 2],
        data[:, 2 * d + 2].astype(bool),
    )


@dataclass(frozen=True)
class FiniteModel:
    """Known finite MDP: rewards (N*M,), row-stochastic transitions (N*M, N)."""

    rewards: np.ndarray
    transitions: np.ndarray
    gamma: float

    def __post_init__(self):
        object.__setattr__(self, "rewards", np.asarray(self.rewards, dtype=np.float64))
        object.__setattr__(self, "transitions", np.asarray(self.transitions, dtype=np.float64))
        if self.transitions.shape[0] != self.rewards.shape[0]:
            raise ValueError("rewards and transition rows disagree on N*M")

    @property
    def n_states(self) -> int:
        return self.transitions.shape[1]

    @property
    def n_actions(self) -> int:
        return self.transitions.shape[0] // self.transitions.shape[1]

    def validate(self, atol=1e-12) -> None:
        sums = self.transitions.sum(axis=1)
        if np.max(np.abs(sums - 1.0)) > atol:
            raise ValueError("transition matrix rows must sum to 1")
