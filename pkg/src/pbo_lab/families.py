"""Value-function families over a flat parameter space.

A family is an immutable descriptor: it knows its parameter count, how to
evaluate action values for one or many parameter vectors, how to maximize
over actions, and how to draw random parameter sets. Parameter vectors are
plain float64 arrays (or engine Tensors inside losses); the family validates
their length on entry.

Discrete-action families index actions 0..n_actions-1. The quadratic family
lives on a scalar state/action space: its "actions" are the values of a
fixed discretization grid, while the exact continuous maximizer is exposed
separately for closed-form work.
"""

from __future__ import annotations

import numpy as np

from .autodiff import (
    ParamLayout,
    Tensor,
    matmul,
    relu,
    reshape,
    square,
    take,
    tmax,
    truncated_normal,
    tsum,
    value_of,
)

__all__ = [
    "TabularQ",
    "QuadraticQ",
    "MlpQ",
    "LowRankQ",
    "sample_param_set",
    "evaluate",
    "max_over_actions",
]


class QFamily:
    """Shared checks and derived helpers; subclasses fill in the math."""

    dim: int
    n_actions: int
    linear_in_params = False

    def check_params(self, params):
        got = value_of(params).shape[-1]
        if got != self.dim:
            raise ValueError(
                f"{type(self).__name__} expects parameter vectors of length "
                f"{self.dim}, got {got}"
            )

    def _as_batch(self, params):
        self.check_params(params)
        if isinstance(params, Tensor):
            return params if params.value.ndim == 2 else reshape(params, (1, self.dim))
        arr = np.asarray(params, dtype=np.float64)
        return arr if arr.ndim == 2 else arr.reshape(1, self.dim)

    # subclasses: qvalues_batch(params (n,dim), states) -> (n, n_states, n_actions)
    #             q_at(params (n,dim), states, actions) -> (n, n_states)

    def qvalues(self, params, states):
        """Per-action values for a single parameter vector: (n_states, n_actions)."""
        out = self.qvalues_batch(self._as_batch(params), states)
        return take(out, 0, axis=0) if isinstance(out, Tensor) else out[0]

    def max_values(self, params, states):
        """max_a Q(s, a) over the family's action set, per parameter vector."""
        return tmax(self.qvalues_batch(self._as_batch(params), states), axis=-1)

    def greedy_actions(self, params, states) -> np.ndarray:
        """Argmax action indices, ties resolved to the lowest index."""
        vals = value_of(self.qvalues(params, states))
        return np.argmax(vals, axis=-1)

    def zero_params(self) -> np.ndarray:
        return np.zeros(self.dim)

    def sample_params(self, count: int, std: float, rng: np.random.Generator) -> np.ndarray:
        if count < 0:
            raise ValueError("count must be >= 0")
        if std <= 0:
            raise ValueError("std must be positive")
        return truncated_normal(rng, (count, self.dim), std)


class TabularQ(QFamily):
    """One parameter per (state, action) table entry; entry (s, a) <-> index s*M + a."""

    linear_in_params = True

    def __init__(self, n_states: int, n_actions: int):
        self.n_states = n_states
        self.n_actions = n_actions
        self.dim = n_states * n_actions

    def qvalues_batch(self, params, states):
        states = np.asarray(states, dtype=int).ravel()
        batch = value_of(params).shape[0]
        table = reshape(params, (batch, self.n_states, self.n_actions))
        return take(table, states, axis=1)

    def q_at(self, params, states, actions):
        flat = (
            np.asarray(states, dtype=int).ravel() * self.n_actions
            + np.asarray(actions, dtype=int).ravel()
        )
        return take(self._as_batch(params), flat, axis=1)


class QuadraticQ(QFamily):
    """Q(s, a) = w_ss*s^2 + 2*w_sa*s*a + fixed_aa*a^2 on scalar states/actions.

    ``fixed_aa`` must be negative so the continuous maximizer over actions is
    the vertex of a downward parabola. ``action_values`` is the discretized
    action grid used whenever the family is asked for a grid max or greedy
    action; the analytic maximizer is available via ``max_over_actions``.
    """

    linear_in_params = True
    dim = 2

    def __init__(self, fixed_aa: float = -1.20, action_values=None):
        if fixed_aa >= 0:
            raise ValueError("fixed_aa must be negative")
        self.fixed_aa = float(fixed_aa)
        if action_values is None:
            action_values = np.linspace(-8.0, 8.0, 200)
        self.action_values = np.asarray(action_values, dtype=np.float64)
        self.n_actions = len(self.action_values)

    def qvalues_batch(self, params, states):
        states = np.asarray(states, dtype=np.float64).ravel()
        acts = self.action_values
        w_ss = reshape(take(params, [0], axis=1), (-1, 1, 1))
        w_sa = reshape(take(params, [1], axis=1), (-1, 1, 1))
        s2 = (states**2)[None, :, None]
        sa2 = 2.0 * states[None, :, None] * acts[None, None, :]
        aa = (self.fixed_aa * acts**2)[None, None, :]
        return w_ss * s2 + w_sa * sa2 + aa

    def q_at(self, params, states, actions):
        states = np.asarray(states, dtype=np.float64).ravel()
        actions = np.asarray(actions, dtype=np.float64).ravel()
        params = self._as_batch(params)
        w_ss = take(params, [0], axis=1)
        w_sa = take(params, [1], axis=1)
        return (
            w_ss * (states**2)[None, :]
            + w_sa * (2.0 * states * actions)[None, :]
            + (self.fixed_aa * actions**2)[None, :]
        )

    def max_values_analytic(self, params, states):
        """(w_ss - w_sa^2 / fixed_aa) * s^2, the exact continuous action max."""
        states = np.asarray(states, dtype=np.float64).ravel()
        params = self._as_batch(params)
        w_ss = take(params, [0], axis=1)
        w_sa = take(params, [1], axis=1)
        coef = w_ss + square(w_sa) * (-1.0 / self.fixed_aa)
        return coef * (states**2)[None, :]

    def argmax_action(self, params, state: float) -> float:
        """Continuous maximizer -w_sa/fixed_aa * s of the action parabola."""
        vec = value_of(params).reshape(-1)
        return float(-vec[1] / self.fixed_aa * state)


class MlpQ(QFamily):
    """ReLU network from state to one value per discrete action.

    The output layer has a weight matrix plus a single scalar bias shared by
    all action heads, so a (2-d state, 30 hidden, 2 actions) network has
    exactly 151 parameters.
    """

    def __init__(self, state_dim: int, hidden: tuple[int, ...], n_actions: int):
        if not hidden:
            raise ValueError("at least one hidden layer is required")
        self.state_dim = state_dim
        self.hidden = tuple(int(h) for h in hidden)
        self.n_actions = n_actions
        segments = []
        fan_in = state_dim
        for i, width in enumerate(self.hidden):
            segments.append((f"w{i}", (fan_in, width)))
            segments.append((f"b{i}", (width,)))
            fan_in = width
        segments.append(("w_out", (fan_in, n_actions)))
        segments.append(("b_out", (1,)))
        self.layout = ParamLayout(tuple(segments))
        self.dim = self.layout.size

    def qvalues_batch(self, params, states):
        states = np.atleast_2d(np.asarray(states, dtype=np.float64))
        pieces = self.layout.unflatten_batch(self._as_batch(params))
        batch = value_of(params).shape[0]
        h = states[None, :, :]
        for i in range(len(self.hidden)):
            pre = matmul(h, pieces[f"w{i}"]) + reshape(pieces[f"b{i}"], (batch, 1, self.hidden[i]))
            h = relu(pre)
        out = matmul(h, pieces["w_out"]) + reshape(pieces["b_out"], (batch, 1, 1))
        return out

    def q_at(self, params, states, actions):
        vals = self.qvalues_batch(self._as_batch(params), states)
        onehot = np.zeros((value_of(vals).shape[1], self.n_actions))
        onehot[np.arange(len(onehot)), np.asarray(actions, dtype=int).ravel()] = 1.0
        return tsum(vals * onehot[None, :, :], axis=-1)

    def sample_params(self, count, std, rng):
        params = super().sample_params(count, std, rng)
        if len(self.hidden) > 1:
            # deeper nets start with an all-zero output layer, so every
            # sampled network evaluates to 0 everywhere
            offsets = self.layout.offsets()
            for name in ("w_out", "b_out"):
                lo, hi = offsets[name]
                params[:, lo:hi] = 0.0
        return params


class LowRankQ(QFamily):
    """Q(s, a) = <features(s, a), params> with tabulated features.

    ``features`` has shape (n_states, n_actions, d) and every feature vector
    must satisfy ||features(s, a)||_1 <= 1.
    """

    linear_in_params = True

    def __init__(self, features):
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 3:
            raise ValueError("features must have shape (n_states, n_actions, d)")
        norms = np.abs(features).sum(axis=-1)
        if np.any(norms > 1.0 + 1e-12):
            raise ValueError("feature rows must have L1 norm <= 1")
        self.features = features
        self.n_states, self.n_actions, self.dim = features.shape

    def qvalues_batch(self, params, states):
        states = np.asarray(states, dtype=int).ravel()
        feats = self.features[states]  # (m, A, d)
        flat = feats.reshape(-1, self.dim).T  # (d, m*A)
        vals = matmul(self._as_batch(params), flat)
        return reshape(vals, (-1, len(states), self.n_actions))

    def q_at(self, params, states, actions):
        feats = self.features[
            np.asarray(states, dtype=int).ravel(), np.asarray(actions, dtype=int).ravel()
        ]
        return matmul(self._as_batch(params), feats.T)


def sample_param_set(family: QFamily, count: int, std: float, rng: np.random.Generator):
    """Draw ``count`` i.i.d. truncated-normal parameter vectors for a family."""
    return family.sample_params(count, std, rng)


def evaluate(family: QFamily, params, state, action) -> float:
    """Q value at a single (state, action); mostly a readable test surface."""
    states = np.asarray([state]) if np.ndim(state) == 0 else np.asarray(state)[None, :]
    out = family.q_at(family._as_batch(params), states, np.asarray([action]))
    return float(value_of(out)[0, 0])


def max_over_actions(family: QFamily, params, state):
    """(max value, maximizing action) at one state.

    Discrete families maximize over their action set with lowest-index tie
    breaking; the quadratic family returns its exact continuous maximizer.
    """
    if isinstance(family, QuadraticQ):
        val = value_of(family.max_values_analytic(params, [state]))[0, 0]
        return float(val), family.argmax_action(params, state)
    states = np.asarray([state]) if np.ndim(state) == 0 else np.asarray(state)[None, :]
    vals = value_of(family.qvalues(params, states))[0]
    idx = int(np.argmax(vals))
    return float(vals[idx]), idx
