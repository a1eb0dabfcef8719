"""Ground-truth solvers and the evaluation protocols used by the harness.

``value_iteration`` and ``lqr_optimal_params`` are the oracles everything
else is measured against; they are deliberately written against the known
model only, independent of the operator implementations they are used to
check. Metrics: Euclidean distance to the optimum, discounted rollout
return, the weighted start-grid protocol for car-on-hill, and greedy policy
maps.
"""

from __future__ import annotations

import numpy as np

from .autodiff import value_of
from .environments.base import FiniteModel
from .environments.car_on_hill import CarOnHill, start_state_grid
from .operators import LqrPbo

__all__ = [
    "value_iteration",
    "lqr_optimal_params",
    "l2_error",
    "rollout_return",
    "rollout_returns_batch",
    "grid_weights",
    "car_on_hill_weighted_eval",
    "policy_map",
    "mean_ci",
]


def value_iteration(
    model: FiniteModel,
    tol: float = 1e-10,
    q0: np.ndarray | None = None,
    bitwise: bool = False,
    max_iters: int = 200_000,
) -> np.ndarray:
    """Dynamic programming on a known finite MDP; returns the flat Q table.

    Sweeps q <- R + gamma * P @ max_a q until the sup-norm change drops below
    tol * (1 - gamma) / gamma, which bounds the distance to the fixed point
    by ``tol``. With ``bitwise=True`` it instead runs until the table stops
    changing at all (useful when an exactly-self-consistent table is needed).
    """
    gamma = model.gamma
    if gamma >= 1.0:
        raise ValueError("value iteration requires gamma < 1")
    n, m = model.n_states, model.n_actions
    q = np.zeros(n * m) if q0 is None else np.asarray(q0, dtype=np.float64).copy()
    threshold = 0.0 if bitwise else (np.inf if gamma == 0.0 else tol * (1.0 - gamma) / gamma)
    for _ in range(max_iters):
        max_q = q.reshape(n, m).max(axis=1)
        q_next = model.rewards + gamma * model.transitions @ max_q
        gap = np.max(np.abs(q_next - q))
        if bitwise and np.array_equal(q_next, q):
            return q_next
        q = q_next
        if not bitwise and gap < threshold:
            return q
    if bitwise:
        raise RuntimeError("value iteration did not reach a bitwise fixed point")
    return q


def lqr_optimal_params(
    env,
    fixed_aa: float = -1.20,
    tol: float = 1e-10,
    max_iters: int = 100_000,
) -> np.ndarray:
    """Optimal quadratic value-function parameters of a scalar LQR.

    Found as the fixed point of the exact parameter-space operator, iterated
    from zero until the residual drops below ``tol``.
    """
    pbo = LqrPbo.from_env(env, fixed_aa)
    omega = np.zeros(2)
    for _ in range(max_iters):
        nxt = pbo.apply(omega)
        if np.max(np.abs(nxt - omega)) < tol:
            return nxt
        omega = nxt
    raise RuntimeError(f"LQR fixed-point iteration did not converge in {max_iters} steps")


def l2_error(params, reference) -> float:
    """Euclidean distance between a parameter vector and a reference vector."""
    a = np.asarray(params, dtype=np.float64).ravel()
    b = np.asarray(reference, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b))


def rollout_return(env, family, params, start_state, horizon: int, rng, gamma=None) -> float:
    """Discounted return of the greedy policy from one start state."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    gamma = env.gamma if gamma is None else gamma
    state = np.atleast_1d(np.asarray(start_state, dtype=np.float64))
    total, discount = 0.0, 1.0
    for _ in range(horizon):
        action = int(family.greedy_actions(params, state[None, :])[0])
        state, reward, terminal = env.step(state, action, rng)
        total += discount * reward
        discount *= gamma
        if terminal:
            break
    return total


def rollout_returns_batch(env: CarOnHill, family, params, start_states, horizon: int) -> np.ndarray:
    """Greedy discounted returns from many start states at once.

    Only available for deterministic batch-steppable environments
    (car-on-hill); all rollouts advance in lockstep.
    """
    states = np.atleast_2d(np.asarray(start_states, dtype=np.float64)).copy()
    n = states.shape[0]
    returns = np.zeros(n)
    active = np.ones(n, dtype=bool)
    discount = 1.0
    for _ in range(horizon):
        if not active.any():
            break
        vals = value_of(family.qvalues_batch(family._as_batch(params), states[active]))[0]
        actions = np.argmax(vals, axis=-1)
        nxt, rewards, terminals = env.step_batch(states[active], actions)
        returns[active] += discount * rewards
        states[active] = nxt
        act_idx = np.flatnonzero(active)
        active[act_idx[terminals]] = False
        discount *= env.gamma
    return returns


def grid_weights(dataset_states, grid_resolution: int = 17) -> np.ndarray:
    """Count of dataset states nearest to each start-grid point (row-major)."""
    states = np.atleast_2d(np.asarray(dataset_states, dtype=np.float64))
    res = grid_resolution
    # nearest grid index in coordinates normalized to the state bounds
    pi = np.clip(np.rint((states[:, 0] + 1.0) / 2.0 * (res - 1)), 0, res - 1).astype(int)
    vi = np.clip(np.rint((states[:, 1] + 3.0) / 6.0 * (res - 1)), 0, res - 1).astype(int)
    weights = np.zeros(res * res)
    np.add.at(weights, pi * res + vi, 1.0)
    return weights


def car_on_hill_weighted_eval(
    dataset_states,
    env: CarOnHill,
    family,
    params,
    grid_resolution: int = 17,
    horizon: int | None = None,
) -> float:
    """Dataset-weighted mean greedy return over the start-state grid.

    Each grid state's return is weighted by how many dataset states fall
    nearest to it; grid states never visited in the dataset contribute
    nothing.
    """
    grid = start_state_grid(grid_resolution)
    weights = grid_weights(dataset_states, grid_resolution)
    if not np.any(weights > 0):
        raise ValueError("every grid cell has zero dataset weight")
    horizon = env.horizon if horizon is None else horizon
    occupied = weights > 0
    returns = rollout_returns_batch(env, family, params, grid[occupied], horizon)
    return float(np.sum(weights[occupied] * returns) / np.sum(weights[occupied]))


def policy_map(family, params, grid) -> np.ndarray:
    """Greedy action index at each grid state, in the grid's row order."""
    grid = np.atleast_2d(np.asarray(grid, dtype=np.float64))
    return family.greedy_actions(params, grid)


def mean_ci(values: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Mean and normal-approximation 95% interval over the seed axis.

    ``values`` has shape (n_seeds, n_points). With a single seed the
    interval collapses to the mean.
    """
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    mean = values.mean(axis=0)
    if values.shape[0] < 2:
        return mean, mean.copy(), mean.copy()
    half = 1.96 * values.std(axis=0, ddof=1) / np.sqrt(values.shape[0])
    return mean, mean - half, mean + half
