"""Losses and optimization for learnable parameter-space operators.

The central loss unrolls the operator K times from every vector in a sampled
parameter set and penalizes, at each depth k, the squared gap between the
sample-based Bellman target built from the frozen-operator chain at depth
k-1 and the prediction of the live-operator chain at depth k. Targets are
gradient-blocked (semi-gradient); the live chain is differentiated through
all k applications. An optional extra term penalizes the Bellman residual at
the operator's own fixed point, differentiated through the linear solve.

Sums over transitions and parameter vectors are divided by the two batch
sizes; this constant rescaling keeps learning rates transferable across
batch settings without changing the minimizer.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, backward, square, tmean, tsum, value_of
from .environments.base import TransitionBatch
from .operators import BellmanOperator, DivergenceError, ParameterOperator

__all__ = [
    "LossConfig",
    "LinearSchedule",
    "Adam",
    "sync_target",
    "consistency_loss",
    "fit_q_params",
]


@dataclass(frozen=True)
class LossConfig:
    """How the operator loss is built: unroll depth and the fixed-point term."""

    bellman_iterations: int
    use_fixed_point: bool = False
    batch_size: int = 32
    param_batch_size: int = 32

    def __post_init__(self):
        if self.bellman_iterations < 1:
            raise ValueError("bellman_iterations must be >= 1")


@dataclass(frozen=True)
class LinearSchedule:
    """Linear interpolation from start to end over total_steps."""

    start: float
    end: float
    total_steps: int

    def __call__(self, step: int) -> float:
        if self.total_steps <= 0:
            return self.end
        frac = min(max(step, 0), self.total_steps) / self.total_steps
        return self.start * (1.0 - frac) + self.end * frac


class Adam:
    """Standard Adam with bias correction and a per-step learning rate."""

    def __init__(self, size: int, schedule, beta1=0.9, beta2=0.999, eps=1e-8):
        self.schedule = schedule
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def update(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        lr = self.schedule(self.t) if callable(self.schedule) else self.schedule
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad**2
        m_hat = self.m / (1.0 - self.beta1**self.t)
        v_hat = self.v / (1.0 - self.beta2**self.t)
        return params - lr * m_hat / (np.sqrt(v_hat) + self.eps)


def sync_target(params: np.ndarray, target: np.ndarray, mode: str = "hard", tau: float | None = None):
    """Refresh frozen target parameters: a hard copy or a Polyak average."""
    if mode == "hard":
        return params.copy()
    if mode == "soft":
        if tau is None or not 0.0 < tau <= 1.0:
            raise ValueError("soft sync requires tau in (0, 1]")
        return tau * params + (1.0 - tau) * target
    raise ValueError(f"unknown sync mode {mode!r}")


def _assert_target_blocked(tensors):
    for t in tensors:
        if t is not None and t._grad is not None and np.any(t._grad != 0.0):
            raise AssertionError(
                "gradient leaked into the target branch; the loss must be semi-gradient"
            )


def consistency_loss(
    pbo: ParameterOperator,
    bellman: BellmanOperator,
    batch: TransitionBatch,
    omega_set: np.ndarray,
    op_params: np.ndarray,
    target_op_params: np.ndarray,
    n_iterations: int,
    use_fixed_point: bool = False,
) -> tuple[float, np.ndarray]:
    """Loss and gradient (w.r.t. the live operator parameters only).

    ``omega_set`` is the (n, dim) stack of value-function parameter vectors
    the loss averages over. Raises :class:`DivergenceError` when a term goes
    non-finite and :class:`NonContractiveError` when the fixed-point term is
    requested but cannot be formed.
    """
    if n_iterations < 1:
        raise ValueError("n_iterations must be >= 1")
    omega_set = np.atleast_2d(np.asarray(omega_set, dtype=np.float64))
    n_omega, n_data = omega_set.shape[0], len(batch)

    learnable = pbo.n_params > 0
    live = Tensor(np.asarray(op_params, dtype=np.float64)) if learnable else None
    frozen = Tensor(np.asarray(target_op_params, dtype=np.float64)) if learnable else None

    # frozen chain feeds the targets, live chain feeds the predictions
    frozen_chain = [omega_set]
    for _ in range(n_iterations - 1):
        frozen_chain.append(pbo.transform(frozen_chain[-1], frozen))
    live_chain = [omega_set]
    for _ in range(n_iterations):
        live_chain.append(pbo.transform(live_chain[-1], live))

    total = None
    for k in range(1, n_iterations + 1):
        targets = bellman.targets(frozen_chain[k - 1], batch)
        preds = bellman.family.q_at(live_chain[k], batch.states, batch.actions)
        term = tsum(square(targets - preds))
        if not np.isfinite(value_of(term)):
            raise DivergenceError(f"loss term at unroll depth {k} is not finite", step=k)
        total = term if total is None else total + term
    total = total / float(n_data * n_omega)

    if use_fixed_point:
        if not pbo.supports_fixed_point:
            raise ValueError(
                f"{type(pbo).__name__} has no computable fixed point; "
                "the fixed-point loss term is unavailable"
            )
        live_fp = pbo.fixed_point_graph(live)
        frozen_fp = pbo.fixed_point(value_of(frozen))
        fp_targets = bellman.targets(frozen_fp[None, :], batch)
        fp_preds = bellman.family.q_at(
            live_fp if isinstance(live_fp, Tensor) else live_fp[None, :], batch.states, batch.actions
        )
        fp_term = tsum(square(fp_targets - fp_preds)) / float(n_data)
        if not np.isfinite(value_of(fp_term)):
            raise DivergenceError("fixed-point loss term is not finite")
        total = total + fp_term

    if not learnable:
        return float(value_of(total)), np.zeros(0)

    loss_value = float(value_of(total))
    backward(total)
    _assert_target_blocked([frozen] + [c for c in frozen_chain if isinstance(c, Tensor)])
    return loss_value, live.grad.copy()


def fit_q_params(
    family,
    batch: TransitionBatch,
    targets: np.ndarray,
    omega0: np.ndarray,
    schedule: LinearSchedule,
    max_steps: int,
    patience: int,
    batch_size: int,
    rng: np.random.Generator,
    tolerance: float = 1e-8,
    log_rows: list | None = None,
    log_epoch: int = 0,
) -> tuple[np.ndarray, list[float]]:
    """Regress Q(s, a) onto fixed targets with minibatch Adam.

    Stops early after ``patience`` steps without improvement of the
    full-dataset loss and returns the best parameters seen. When given,
    ``log_rows`` receives (epoch, step, loss, lr, grad_norm, wall_ms) rows.
    """
    targets = np.asarray(targets, dtype=np.float64).ravel()
    params = np.asarray(omega0, dtype=np.float64).copy()
    adam = Adam(len(params), schedule)
    n = len(batch)
    best_loss, best_params, stale = np.inf, params.copy(), 0
    history: list[float] = []
    for step in range(max_steps):
        tick = time.perf_counter()
        lr = schedule(step)
        idx = rng.choice(n, size=min(batch_size, n), replace=False)
        live = Tensor(params)
        preds = family.q_at(live, batch.states[idx], batch.actions[idx])
        loss = tmean(square(targets[idx][None, :] - preds))
        backward(loss)
        params = adam.update(params, live.grad.reshape(params.shape))

        full_preds = family.q_at(params, batch.states, batch.actions)
        full_loss = float(np.mean((targets[None, :] - value_of(full_preds)) ** 2))
        history.append(full_loss)
        if log_rows is not None:
            log_rows.append(
                (
                    log_epoch, step, full_loss, lr,
                    float(np.linalg.norm(live.grad)),
                    (time.perf_counter() - tick) * 1e3,
                )
            )
        if not np.isfinite(full_loss):
            raise DivergenceError("regression loss is not finite")
        if full_loss < best_loss - tolerance:
            best_loss, best_params, stale = full_loss, params.copy(), 0
        else:
            stale += 1
            if stale >= patience:
                break
    return best_params, history
