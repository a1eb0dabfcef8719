"""Experiment execution: build, fit, evaluate, and write per-seed artifacts.

Each seed produces its own directory with ``run.json`` (fully resolved
config), ``snapshots.csv`` (one flattened parameter vector per iteration),
``metrics.csv`` (per-iteration evaluation), ``train_log.csv``, and, for
operator-learning runs, an operator checkpoint. A cross-seed ``report.csv``
aggregates the metric with mean and 95% interval. All randomness flows from
the seed; reruns are byte-identical.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import evaluation
from .agents import DeepQNetwork, FittedQIteration, ProjectedDQN, ProjectedFittedQIteration
from .config import ExperimentConfig, ConfigError, method_label
from .environments import Bicycle, CarOnHill, ChainWalk, LqrEnv, default_dataset, save_transitions
from .families import MlpQ, QuadraticQ, TabularQ
from .operators import (
    FinitePbo,
    LinearPbo,
    LqrPbo,
    MlpPbo,
    StructuredFinitePbo,
    StructuredLqrPbo,
    save_operator,
)

__all__ = ["run_experiment", "run_single_seed", "build_env", "build_family", "build_operator"]

FLOAT_FMT = "%.17g"


def build_env(cfg: ExperimentConfig):
    if cfg.environment == "chain_walk":
        return ChainWalk(
            n_states=cfg.n_states, gamma=cfg.gamma,
            success_prob=cfg.success_prob, reward_states=cfg.reward_states,
        )
    if cfg.environment == "lqr":
        return LqrEnv(gamma=cfg.gamma)
    if cfg.environment == "car_on_hill":
        return CarOnHill(gamma=cfg.gamma, horizon=cfg.horizon or 100)
    if cfg.environment == "bicycle":
        return Bicycle(gamma=cfg.gamma, horizon=cfg.horizon or 50_000)
    raise ConfigError("experiment.environment", f"unknown environment {cfg.environment!r}")


def build_family(cfg: ExperimentConfig, env):
    if cfg.family_kind == "tabular":
        return TabularQ(env.n_states, env.n_actions)
    if cfg.family_kind == "quadratic":
        return QuadraticQ(fixed_aa=cfg.fixed_aa, action_values=env.action_values)
    if cfg.family_kind == "mlp":
        return MlpQ(env.state_dim, cfg.family_hidden or (30,), env.n_actions)
    raise ConfigError("family.kind", f"unknown family {cfg.family_kind!r}")


def build_operator(cfg: ExperimentConfig, family, env):
    if cfg.pbo_variant == "linear":
        return LinearPbo(family.dim, gamma=cfg.gamma)
    if cfg.pbo_variant == "mlp":
        hidden = cfg.operator_hidden or (2 * family.dim,)
        return MlpPbo(family.dim, hidden, gamma=cfg.gamma)
    if cfg.pbo_variant == "structured_finite":
        return StructuredFinitePbo(env.n_states, env.n_actions, cfg.gamma)
    if cfg.pbo_variant == "structured_lqr":
        return StructuredLqrPbo(fixed_aa=cfg.fixed_aa, gamma=cfg.gamma)
    if cfg.pbo_variant == "closed_form":
        if cfg.environment == "chain_walk":
            return FinitePbo.from_model(env.model())
        if cfg.environment == "lqr":
            return LqrPbo.from_env(env, fixed_aa=cfg.fixed_aa)
        raise ConfigError("experiment.pbo_variant", "no closed form for this environment")
    raise ConfigError("experiment.pbo_variant", f"unknown variant {cfg.pbo_variant!r}")


def _build_agent(cfg: ExperimentConfig, family, pbo, seed: int):
    if cfg.algorithm == "fqi":
        return FittedQIteration(
            family=family, gamma=cfg.gamma, n_iterations=cfg.bellman_iterations,
            fit_steps=cfg.fit_steps, patience=cfg.patience,
            lr_start=cfg.lr_start, lr_end=cfg.lr_end, batch_size=cfg.batch_size,
            param_count=cfg.param_count, param_std=cfg.param_std, random_state=seed,
        )
    if cfg.algorithm == "profqi":
        return ProjectedFittedQIteration(
            pbo=pbo, family=family, gamma=cfg.gamma,
            bellman_iterations=cfg.bellman_iterations, epochs=cfg.epochs,
            steps_per_epoch=cfg.steps_per_epoch, batch_size=cfg.batch_size,
            param_batch_size=cfg.param_batch_size, param_count=cfg.param_count,
            param_std=cfg.param_std, operator_std=cfg.operator_std,
            lr_start=cfg.lr_start, lr_end=cfg.lr_end,
            use_fixed_point=(cfg.loss == "eq4"), random_state=seed,
        )
    if cfg.algorithm == "dqn":
        return DeepQNetwork(
            family=family, gamma=cfg.gamma, target_updates=cfg.bellman_iterations,
            fit_steps=cfg.fit_steps, lr_start=cfg.lr_start, lr_end=cfg.lr_end,
            eps_start=cfg.eps_start, eps_end=cfg.eps_end,
            buffer_capacity=cfg.buffer_capacity, initial_samples=cfg.initial_samples,
            batch_size=cfg.batch_size, grad_steps_per_env_step=cfg.grad_steps_per_env_step,
            episode_steps=cfg.episode_steps, param_count=cfg.param_count,
            param_std=cfg.param_std, random_state=seed,
        )
    if cfg.algorithm == "prodqn":
        return ProjectedDQN(
            pbo=pbo, family=family, gamma=cfg.gamma,
            bellman_iterations=cfg.bellman_iterations, epochs=cfg.epochs,
            steps_per_epoch=cfg.steps_per_epoch, batch_size=cfg.batch_size,
            param_batch_size=cfg.param_batch_size, param_count=cfg.param_count,
            param_std=cfg.param_std, operator_std=cfg.operator_std,
            lr_start=cfg.lr_start, lr_end=cfg.lr_end,
            eps_start=cfg.eps_start, eps_end=cfg.eps_end,
            buffer_capacity=cfg.buffer_capacity, initial_samples=cfg.initial_samples,
            grad_steps_per_env_step=cfg.grad_steps_per_env_step,
            episode_steps=cfg.episode_steps, snapshot_steps=cfg.eval_steps,
            random_state=seed,
        )
    raise ConfigError("experiment.algorithm", f"unknown algorithm {cfg.algorithm!r}")


def _metric_name(cfg: ExperimentConfig) -> str:
    return {
        "chain_walk": "l2_q",
        "lqr": "l2_param",
        "car_on_hill": "weighted_return",
        "bicycle": "return_mean",
    }[cfg.environment]


def _evaluate_snapshots(cfg, env, family, snapshots, dataset, seed) -> list[float]:
    name = _metric_name(cfg)
    if name == "l2_q":
        reference = evaluation.value_iteration(env.model(), tol=1e-10)
        return [evaluation.l2_error(w, reference) for w in snapshots]
    if name == "l2_param":
        reference = evaluation.lqr_optimal_params(env, fixed_aa=cfg.fixed_aa)
        return [evaluation.l2_error(w, reference) for w in snapshots]
    if name == "weighted_return":
        horizon = cfg.eval_horizon or env.horizon
        return [
            evaluation.car_on_hill_weighted_eval(
                dataset.states, env, family, w, cfg.eval_grid, horizon
            )
            for w in snapshots
        ]
    # bicycle: mean discounted return over eval episodes from the upright start
    horizon = cfg.eval_horizon or env.horizon
    out = []
    for w in snapshots:
        rng = np.random.default_rng(np.random.SeedSequence([seed, 314159]))
        rets = [
            evaluation.rollout_return(env, family, w, env.initial_state(None, 0.0), horizon, rng)
            for _ in range(cfg.eval_episodes)
        ]
        out.append(float(np.mean(rets)))
    return out


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            cells = []
            for v in row:
                if isinstance(v, (float, np.floating)):
                    cells.append(FLOAT_FMT % v)
                else:
                    cells.append(str(v))
            fh.write(",".join(cells) + "\n")


def run_single_seed(cfg: ExperimentConfig, seed: int, seed_dir: Path) -> list[float]:
    """Fit one agent for one seed and write its artifacts; returns the metric series."""
    try:
        # one BLAS thread per seed worker: the matrices are small enough that
        # thread fan-out costs more than it saves, and seeds run in parallel
        from threadpoolctl import threadpool_limits

        limiter = threadpool_limits(limits=1)
    except ImportError:  # pragma: no cover
        limiter = None
    try:
        return _run_single_seed_inner(cfg, seed, seed_dir)
    finally:
        if limiter is not None:
            limiter.unregister()


def _run_single_seed_inner(cfg: ExperimentConfig, seed: int, seed_dir: Path) -> list[float]:
    seed_dir = Path(seed_dir)
    seed_dir.mkdir(parents=True, exist_ok=True)
    env = build_env(cfg)
    family = build_family(cfg, env)
    pbo = None
    if cfg.algorithm in ("profqi", "prodqn"):
        pbo = build_operator(cfg, family, env)
    agent = _build_agent(cfg, family, pbo, seed)

    dataset = None
    if cfg.algorithm in ("fqi", "profqi"):
        data_rng = np.random.default_rng(np.random.SeedSequence([seed, 271828]))
        dataset = default_dataset(env, data_rng, cfg.dataset_size)
        save_transitions(seed_dir / "dataset.csv", dataset)
        agent.fit(dataset)
    else:
        agent.fit(env)

    if cfg.algorithm == "fqi":
        snapshots = agent.omegas_
    elif cfg.algorithm == "profqi":
        snapshots = agent.iterate(n_steps=cfg.eval_steps)
    else:
        snapshots = agent.snapshots_

    metrics = _evaluate_snapshots(cfg, env, family, snapshots, dataset, seed)

    run_info = {
        "seed": seed,
        "method": method_label(cfg),
        "config": asdict(cfg),
    }
    with open(seed_dir / "run.json", "w") as fh:
        json.dump(run_info, fh, indent=2, sort_keys=True)

    dim = snapshots.shape[1]
    _write_csv(
        seed_dir / "snapshots.csv",
        ["k"] + [f"w_{i}" for i in range(dim)],
        [[k] + list(row) for k, row in enumerate(snapshots)],
    )
    _write_csv(
        seed_dir / "metrics.csv",
        ["k", "metric", "value"],
        [[k, _metric_name(cfg), v] for k, v in enumerate(metrics)],
    )
    _write_csv(
        seed_dir / "train_log.csv",
        ["epoch", "step", "loss", "lr", "grad_norm", "wall_ms"],
        getattr(agent, "loss_log_", []),
    )
    if pbo is not None and pbo.n_params > 0:
        save_operator(pbo, str(seed_dir / "operator"))
    return metrics


def _seed_worker(args):
    cfg, seed, seed_dir = args
    return seed, run_single_seed(cfg, seed, seed_dir)


def run_experiment(cfg: ExperimentConfig, out_dir, max_workers: int | None = None) -> Path:
    """Run every configured seed and aggregate the metric across seeds."""
    out_dir = Path(out_dir)
    run_name = f"{cfg.environment}_{method_label(cfg)}_K{cfg.bellman_iterations}"
    run_dir = out_dir / run_name
    run_dir.mkdir(parents=True, exist_ok=True)

    if max_workers is None:
        env_cap = os.environ.get("PBO_LAB_THREADS")
        max_workers = int(env_cap) if env_cap else (os.cpu_count() or 1)
    max_workers = max(1, min(max_workers, len(cfg.seeds)))

    jobs = [(cfg, seed, run_dir / f"seed_{seed}") for seed in cfg.seeds]
    results: dict[int, list[float]] = {}
    if max_workers == 1 or len(jobs) == 1:
        for job in jobs:
            seed, metrics = _seed_worker(job)
            results[seed] = metrics
    else:
        with ProcessPoolExecutor(max_workers=max_workers) as pool:
            for seed, metrics in pool.map(_seed_worker, jobs):
                results[seed] = metrics

    series = np.array([results[seed] for seed in cfg.seeds])
    mean, lo, hi = evaluation.mean_ci(series)
    _write_csv(
        run_dir / "report.csv",
        ["iteration", "metric", "mean", "ci_low", "ci_high", "n_seeds"],
        [
            [k, _metric_name(cfg), mean[k], lo[k], hi[k], len(cfg.seeds)]
            for k in range(series.shape[1])
        ],
    )
    return run_dir
