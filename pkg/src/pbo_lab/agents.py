"""The four agents: offline FQI / ProFQI and online DQN / ProDQN.

All agents are sklearn-style estimators: hyperparameters in ``__init__``
(introspectable via ``get_params``), learned state on ``fit`` in trailing-
underscore attributes, greedy actions via ``predict``. Offline agents fit a
fixed transition dataset and never touch an environment; online agents fit
an environment handle and maintain a replay buffer.

The two projected agents learn a parameter-space operator by descending the
unrolled consistency loss; their baselines (FQI, DQN) apply the sample-based
Bellman operator directly. Every agent draws a shared parameter set whose
designated first element is the common starting point, so runs with the same
random state are directly comparable.
"""

from __future__ import annotations

import time

import numpy as np
from sklearn.base import BaseEstimator

from .autodiff import Tensor, backward, square, tmean, value_of
from .environments.base import TransitionBatch
from .families import QFamily
from .operators import (
    BellmanOperator,
    DivergenceError,
    NonContractiveError,
    ParameterOperator,
    iterate,
)
from .training import Adam, LinearSchedule, consistency_loss, fit_q_params, sync_target

__all__ = [
    "ReplayBuffer",
    "epsilon_greedy",
    "make_param_set",
    "as_transition_batch",
    "FittedQIteration",
    "ProjectedFittedQIteration",
    "DeepQNetwork",
    "ProjectedDQN",
]


def as_transition_batch(data, state_dim: int | None = None) -> TransitionBatch:
    """Validate and coerce input into a TransitionBatch.

    Accepts a TransitionBatch or a 2-d array in the dataset column order
    (s_0..s_{d-1}, a, r, sp_0..sp_{d-1}, terminal).
    """
    if isinstance(data, TransitionBatch):
        return data
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] < 5 or (arr.shape[1] - 3) % 2 != 0:
        raise ValueError(
            "expected a TransitionBatch or a 2-d array with columns "
            "s_0..s_{d-1}, a, r, sp_0..sp_{d-1}, terminal"
        )
    d = (arr.shape[1] - 3) // 2 if state_dim is None else state_dim
    if not np.all(np.isfinite(arr)):
        raise ValueError("transition array contains non-finite values")
    return TransitionBatch(
        arr[:, :d], arr[:, d], arr[:, d + 1], arr[:, d + 2 : 2 * d + 2],
        arr[:, 2 * d + 2].astype(bool),
    )


class ReplayBuffer:
    """Fixed-capacity FIFO transition store with uniform sampling."""

    def __init__(self, capacity: int, state_dim: int):
        self.capacity = capacity
        self.states = np.zeros((capacity, state_dim))
        self.actions = np.zeros(capacity)
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, state_dim))
        self.terminals = np.zeros(capacity, dtype=bool)
        self._size = 0
        self._pos = 0

    def __len__(self) -> int:
        return self._size

    def add(self, state, action, reward, next_state, terminal) -> None:
        i = self._pos
        self.states[i] = state
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_states[i] = next_state
        self.terminals[i] = terminal
        self._pos = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def extend(self, batch: TransitionBatch) -> None:
        for i in range(len(batch)):
            self.add(
                batch.states[i], batch.actions[i], batch.rewards[i],
                batch.next_states[i], batch.terminals[i],
            )

    def sample(self, batch_size: int, rng: np.random.Generator) -> TransitionBatch:
        if self._size == 0:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.integers(self._size, size=batch_size)
        return TransitionBatch(
            self.states[idx], self.actions[idx], self.rewards[idx],
            self.next_states[idx], self.terminals[idx],
        )


def epsilon_greedy(family: QFamily, params, state, epsilon: float, rng: np.random.Generator) -> int:
    """Uniform action with probability epsilon, else greedy (ties: lowest index)."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must be in [0, 1]")
    if rng.random() < epsilon:
        return int(rng.integers(family.n_actions))
    return int(family.greedy_actions(params, np.atleast_1d(state)[None, :])[0])


def make_param_set(family: QFamily, count: int, std: float, rng: np.random.Generator) -> np.ndarray:
    """Sampled parameter set; the designated starting element sits at index 0.

    For families linear in their parameters the designated element is the
    zero vector (a zero value function); networks keep their random draw
    since an all-zero network has no gradient signal.
    """
    params = family.sample_params(count, std, rng)
    if family.linear_in_params and count > 0:
        params[0] = 0.0
    return params


class _BatchCycler:
    """Without-replacement minibatch indices, reshuffled when exhausted."""

    def __init__(self, n: int, batch_size: int, rng: np.random.Generator):
        self.n = n
        self.batch_size = min(batch_size, n)
        self.rng = rng
        self._order = rng.permutation(n) if self.batch_size < n else np.arange(n)
        self._pos = 0

    def next(self) -> np.ndarray:
        if self.batch_size == self.n:
            return self._order
        if self._pos + self.batch_size > self.n:
            self._order = self.rng.permutation(self.n)
            self._pos = 0
        out = self._order[self._pos : self._pos + self.batch_size]
        self._pos += self.batch_size
        return out


class FittedQIteration(BaseEstimator):
    """Offline fitted Q-iteration: per-iteration regression onto Bellman targets.

    Each iteration recomputes targets from the previous parameters and fits
    fresh parameters with a newly initialized Adam run (early-stopped on the
    training loss). ``omegas_`` holds the n_iterations+1 parameter vectors.
    """

    def __init__(
        self,
        family: QFamily = None,
        gamma: float = 0.95,
        n_iterations: int = 5,
        fit_steps: int = 400,
        patience: int = 100,
        lr_start: float = 1e-2,
        lr_end: float = 1e-5,
        batch_size: int = 32,
        param_count: int = 100,
        param_std: float = 1.0,
        random_state: int = 0,
    ):
        self.family = family
        self.gamma = gamma
        self.n_iterations = n_iterations
        self.fit_steps = fit_steps
        self.patience = patience
        self.lr_start = lr_start
        self.lr_end = lr_end
        self.batch_size = batch_size
        self.param_count = param_count
        self.param_std = param_std
        self.random_state = random_state

    def fit(self, transitions):
        batch = as_transition_batch(transitions)
        rng = np.random.default_rng(self.random_state)
        param_set = make_param_set(self.family, self.param_count, self.param_std, rng)
        bellman = BellmanOperator(self.family, self.gamma)
        omegas = [param_set[0].copy()]
        schedule = LinearSchedule(self.lr_start, self.lr_end, self.fit_steps)
        log: list[tuple] = []
        for iteration in range(self.n_iterations):
            targets = value_of(bellman.targets(omegas[-1], batch))[0]
            fitted, _ = fit_q_params(
                self.family, batch, targets, omegas[-1], schedule,
                self.fit_steps, self.patience, self.batch_size, rng,
                log_rows=log, log_epoch=iteration,
            )
            omegas.append(fitted)
        self.param_set_ = param_set
        self.omegas_ = np.stack(omegas)
        self.loss_log_ = log
        return self

    def predict(self, states) -> np.ndarray:
        return self.family.greedy_actions(self.omegas_[-1], np.atleast_2d(states))


class ProjectedFittedQIteration(BaseEstimator):
    """Offline learning of a parameter-space operator (the projected variant).

    Minimizes the K-step consistency loss over a fixed dataset and a sampled
    parameter set with Adam; the frozen target copy of the operator refreshes
    at every epoch. After fitting, the operator can be applied any number of
    times from any starting parameters via :meth:`iterate`.
    """

    def __init__(
        self,
        pbo: ParameterOperator = None,
        family: QFamily = None,
        gamma: float = 0.95,
        bellman_iterations: int = 5,
        epochs: int = 1000,
        steps_per_epoch: int = 5,
        batch_size: int = 20,
        param_batch_size: int = 100,
        param_count: int = 100,
        param_std: float = 1.0,
        operator_std: float = 5e-6,
        lr_start: float = 1e-2,
        lr_end: float = 1e-7,
        use_fixed_point: bool = False,
        random_state: int = 0,
    ):
        self.pbo = pbo
        self.family = family
        self.gamma = gamma
        self.bellman_iterations = bellman_iterations
        self.epochs = epochs
        self.steps_per_epoch = steps_per_epoch
        self.batch_size = batch_size
        self.param_batch_size = param_batch_size
        self.param_count = param_count
        self.param_std = param_std
        self.operator_std = operator_std
        self.lr_start = lr_start
        self.lr_end = lr_end
        self.use_fixed_point = use_fixed_point
        self.random_state = random_state

    def fit(self, transitions):
        batch = as_transition_batch(transitions)
        rng = np.random.default_rng(self.random_state)
        param_set = make_param_set(self.family, self.param_count, self.param_std, rng)
        bellman = BellmanOperator(self.family, self.gamma)

        live = self.pbo.init_params(rng, self.operator_std)
        frozen = live.copy()
        total_steps = self.epochs * self.steps_per_epoch
        adam = Adam(len(live), LinearSchedule(self.lr_start, self.lr_end, total_steps))
        d_cycler = _BatchCycler(len(batch), self.batch_size, rng)
        w_cycler = _BatchCycler(len(param_set), self.param_batch_size, rng)

        log: list[tuple] = []
        fixed_point_skips = 0
        step = 0
        for epoch in range(self.epochs):
            frozen = sync_target(live, frozen)
            for _ in range(self.steps_per_epoch):
                tick = time.perf_counter()
                d_batch = batch.subset(d_cycler.next())
                w_batch = param_set[w_cycler.next()]
                try:
                    loss, grad = consistency_loss(
                        self.pbo, bellman, d_batch, w_batch, live, frozen,
                        self.bellman_iterations, self.use_fixed_point,
                    )
                except NonContractiveError:
                    # fixed-point term unavailable this step: fall back and record
                    fixed_point_skips += 1
                    loss, grad = consistency_loss(
                        self.pbo, bellman, d_batch, w_batch, live, frozen,
                        self.bellman_iterations, False,
                    )
                if grad.size:
                    live = adam.update(live, grad)
                log.append(
                    (
                        epoch, step, loss, adam.schedule(step),
                        float(np.linalg.norm(grad)),
                        (time.perf_counter() - tick) * 1e3,
                    )
                )
                step += 1

        self.pbo.params = live
        self.operator_params_ = live
        self.param_set_ = param_set
        self.omega0_ = param_set[0].copy()
        self.loss_log_ = log
        self.fixed_point_skips_ = fixed_point_skips
        return self

    def iterate(self, omega0=None, n_steps: int | None = None) -> np.ndarray:
        """Apply the learned operator n_steps times (default: training depth)."""
        omega0 = self.omega0_ if omega0 is None else omega0
        n_steps = self.bellman_iterations if n_steps is None else n_steps
        return iterate(self.pbo, omega0, n_steps, self.operator_params_)

    def predict(self, states, n_steps: int | None = None) -> np.ndarray:
        chain = self.iterate(n_steps=n_steps)
        return self.family.greedy_actions(chain[-1], np.atleast_2d(states))


def _regression_step(family, bellman, buffer_batch, params, frozen_params, adam):
    targets = value_of(bellman.targets(frozen_params, buffer_batch))[0]
    live = Tensor(params)
    preds = family.q_at(live, buffer_batch.states, buffer_batch.actions)
    loss = tmean(square(targets[None, :] - preds))
    backward(loss)
    value = float(value_of(loss))
    if not np.isfinite(value):
        raise DivergenceError("online regression loss is not finite")
    return adam.update(params, live.grad), value, float(np.linalg.norm(live.grad))


class DeepQNetwork(BaseEstimator):
    """Online Q-learning with replay and periodic hard target syncs.

    Collects one environment step every ``grad_steps_per_env_step`` gradient
    steps under an epsilon-greedy policy with linearly annealed epsilon.
    ``snapshots_`` holds the parameters at initialization and at each of the
    ``target_updates`` syncs.
    """

    def __init__(
        self,
        family: QFamily = None,
        gamma: float = 0.99,
        target_updates: int = 8,
        fit_steps: int = 6000,
        lr_start: float = 1e-4,
        lr_end: float = 1e-6,
        eps_start: float = 1.0,
        eps_end: float = 0.01,
        buffer_capacity: int = 10_000,
        initial_samples: int = 10_000,
        batch_size: int = 500,
        grad_steps_per_env_step: int = 2,
        episode_steps: int = 20,
        param_count: int = 30,
        param_std: float = 0.2,
        random_state: int = 0,
    ):
        self.family = family
        self.gamma = gamma
        self.target_updates = target_updates
        self.fit_steps = fit_steps
        self.lr_start = lr_start
        self.lr_end = lr_end
        self.eps_start = eps_start
        self.eps_end = eps_end
        self.buffer_capacity = buffer_capacity
        self.initial_samples = initial_samples
        self.batch_size = batch_size
        self.grad_steps_per_env_step = grad_steps_per_env_step
        self.episode_steps = episode_steps
        self.param_count = param_count
        self.param_std = param_std
        self.random_state = random_state

    def _fill_buffer(self, env, buffer, rng, acting=None):
        """Random-policy episodes (cut at episode_steps) until the buffer target."""
        state = env.initial_state(rng)
        steps_in_episode = 0
        added = 0
        while added < self.initial_samples:
            action = int(rng.integers(env.n_actions))
            nxt, reward, terminal = env.step(state, action, rng)
            buffer.add(state, action, reward, nxt, terminal)
            added += 1
            steps_in_episode += 1
            if terminal or steps_in_episode >= self.episode_steps:
                state = env.initial_state(rng)
                steps_in_episode = 0
            else:
                state = nxt
        return added

    def fit(self, env):
        rng = np.random.default_rng(self.random_state)
        param_set = make_param_set(self.family, self.param_count, self.param_std, rng)
        params = param_set[0].copy()
        frozen = params.copy()
        bellman = BellmanOperator(self.family, self.gamma)

        buffer = ReplayBuffer(self.buffer_capacity, env.state_dim)
        interactions = self._fill_buffer(env, buffer, rng)
        sync_points = {
            round((i + 1) * self.fit_steps / self.target_updates)
            for i in range(self.target_updates)
        }

        adam = Adam(len(params), LinearSchedule(self.lr_start, self.lr_end, self.fit_steps))
        eps = LinearSchedule(self.eps_start, self.eps_end, self.fit_steps)
        snapshots = [params.copy()]
        max_fill = len(buffer)
        state = env.initial_state(rng)
        steps_in_episode = 0
        log = []
        for step in range(self.fit_steps):
            tick = time.perf_counter()
            if step % self.grad_steps_per_env_step == 0:
                action = epsilon_greedy(self.family, params, state, eps(step), rng)
                nxt, reward, terminal = env.step(state, action, rng)
                buffer.add(state, action, reward, nxt, terminal)
                interactions += 1
                steps_in_episode += 1
                if terminal or steps_in_episode >= self.episode_steps:
                    state = env.initial_state(rng)
                    steps_in_episode = 0
                else:
                    state = nxt
            params, loss, grad_norm = _regression_step(
                self.family, bellman, buffer.sample(self.batch_size, rng),
                params, frozen, adam,
            )
            max_fill = max(max_fill, len(buffer))
            log.append(
                (0, step, loss, adam.schedule(step), grad_norm,
                 (time.perf_counter() - tick) * 1e3)
            )
            if (step + 1) in sync_points:
                frozen = params.copy()
                snapshots.append(params.copy())

        self.param_set_ = param_set
        self.snapshots_ = np.stack(snapshots)
        self.final_epsilon_ = eps(self.fit_steps)
        self.env_interactions_ = interactions
        self.max_buffer_fill_ = max_fill
        self.loss_log_ = log
        return self

    def predict(self, states) -> np.ndarray:
        return self.family.greedy_actions(self.snapshots_[-1], np.atleast_2d(states))


class ProjectedDQN(BaseEstimator):
    """Online operator learning: collect with the K-fold applied operator.

    Alternates environment steps (epsilon-greedy on the value function given
    by applying the current operator K times to the designated starting
    parameters) with gradient steps on the consistency loss over replay
    minibatches; the frozen operator copy refreshes every epoch.
    ``snapshots_`` is the final operator chain from the starting parameters.
    """

    def __init__(
        self,
        pbo: ParameterOperator = None,
        family: QFamily = None,
        gamma: float = 0.99,
        bellman_iterations: int = 8,
        epochs: int = 4000,
        steps_per_epoch: int = 25,
        batch_size: int = 500,
        param_batch_size: int = 30,
        param_count: int = 30,
        param_std: float = 0.2,
        operator_std: float = 5e-7,
        lr_start: float = 1e-5,
        lr_end: float = 1e-7,
        eps_start: float = 1.0,
        eps_end: float = 0.01,
        buffer_capacity: int = 10_000,
        initial_samples: int = 10_000,
        grad_steps_per_env_step: int = 2,
        episode_steps: int = 20,
        snapshot_steps: int | None = None,
        random_state: int = 0,
    ):
        self.pbo = pbo
        self.family = family
        self.gamma = gamma
        self.bellman_iterations = bellman_iterations
        self.epochs = epochs
        self.steps_per_epoch = steps_per_epoch
        self.batch_size = batch_size
        self.param_batch_size = param_batch_size
        self.param_count = param_count
        self.param_std = param_std
        self.operator_std = operator_std
        self.lr_start = lr_start
        self.lr_end = lr_end
        self.eps_start = eps_start
        self.eps_end = eps_end
        self.buffer_capacity = buffer_capacity
        self.initial_samples = initial_samples
        self.grad_steps_per_env_step = grad_steps_per_env_step
        self.episode_steps = episode_steps
        self.snapshot_steps = snapshot_steps
        self.random_state = random_state

    def acting_params(self, live: np.ndarray, omega0: np.ndarray) -> np.ndarray:
        """Parameters of the behavior value function: K operator applications."""
        return iterate(self.pbo, omega0, self.bellman_iterations, live)[-1]

    def fit(self, env):
        rng = np.random.default_rng(self.random_state)
        param_set = make_param_set(self.family, self.param_count, self.param_std, rng)
        omega0 = param_set[0].copy()
        bellman = BellmanOperator(self.family, self.gamma)

        live = self.pbo.init_params(rng, self.operator_std)
        frozen = live.copy()
        total_steps = self.epochs * self.steps_per_epoch
        adam = Adam(len(live), LinearSchedule(self.lr_start, self.lr_end, total_steps))
        eps = LinearSchedule(self.eps_start, self.eps_end, total_steps)
        w_cycler = _BatchCycler(len(param_set), self.param_batch_size, rng)

        buffer = ReplayBuffer(self.buffer_capacity, env.state_dim)
        filler = DeepQNetwork(
            family=self.family, initial_samples=self.initial_samples,
            episode_steps=self.episode_steps,
        )
        interactions = filler._fill_buffer(env, buffer, rng)
        max_fill = len(buffer)

        state = env.initial_state(rng)
        steps_in_episode = 0
        log = []
        step = 0
        for epoch in range(self.epochs):
            frozen = sync_target(live, frozen)
            for _ in range(self.steps_per_epoch):
                tick = time.perf_counter()
                if step % self.grad_steps_per_env_step == 0:
                    behavior = self.acting_params(live, omega0)
                    action = epsilon_greedy(self.family, behavior, state, eps(step), rng)
                    nxt, reward, terminal = env.step(state, action, rng)
                    buffer.add(state, action, reward, nxt, terminal)
                    interactions += 1
                    steps_in_episode += 1
                    if terminal or steps_in_episode >= self.episode_steps:
                        state = env.initial_state(rng)
                        steps_in_episode = 0
                    else:
                        state = nxt
                d_batch = buffer.sample(self.batch_size, rng)
                w_batch = param_set[w_cycler.next()]
                loss, grad = consistency_loss(
                    self.pbo, bellman, d_batch, w_batch, live, frozen,
                    self.bellman_iterations, False,
                )
                live = adam.update(live, grad)
                max_fill = max(max_fill, len(buffer))
                log.append(
                    (
                        epoch, step, loss, adam.schedule(step),
                        float(np.linalg.norm(grad)),
                        (time.perf_counter() - tick) * 1e3,
                    )
                )
                step += 1

        self.pbo.params = live
        self.operator_params_ = live
        self.param_set_ = param_set
        self.omega0_ = omega0
        n_snap = self.bellman_iterations if self.snapshot_steps is None else self.snapshot_steps
        self.snapshots_ = iterate(self.pbo, omega0, n_snap, live)
        self.env_interactions_ = interactions
        self.max_buffer_fill_ = max_fill
        self.loss_log_ = log
        return self

    def predict(self, states) -> np.ndarray:
        return self.family.greedy_actions(self.snapshots_[-1], np.atleast_2d(states))
