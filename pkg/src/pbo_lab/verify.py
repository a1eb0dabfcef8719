"""Self-contained oracle and property checks, runnable from the CLI.

Each check prints one PASS/FAIL line. The oracles here are written directly
against the definitions (explicit loops, dynamic programming, finite
differences), independent of the operator implementations they vet.
"""

from __future__ import annotations

import numpy as np

from .environments import ChainWalk, LqrEnv
from .environments.base import FiniteModel, TransitionBatch
from .evaluation import l2_error, lqr_optimal_params, value_iteration
from .families import TabularQ
from .operators import (
    BellmanOperator,
    FinitePbo,
    LinearPbo,
    LowRankPbo,
    LqrPbo,
    contraction_factor,
    iterate,
)
from .training import consistency_loss

__all__ = ["run_checks", "main"]


def _random_model(rng, n, m, gamma=0.9) -> FiniteModel:
    rewards = rng.uniform(-1.0, 1.0, n * m)
    raw = rng.uniform(0.0, 1.0, (n * m, n)) + 1e-3
    return FiniteModel(rewards, raw / raw.sum(axis=1, keepdims=True), gamma)


def _brute_sweep(model: FiniteModel, q: np.ndarray) -> np.ndarray:
    n, m = model.n_states, model.n_actions
    out = np.zeros(n * m)
    for s in range(n):
        for a in range(m):
            row = s * m + a
            acc = 0.0
            for s2 in range(n):
                acc += model.transitions[row, s2] * max(
                    q[s2 * m + a2] for a2 in range(m)
                )
            out[row] = model.rewards[row] + model.gamma * acc
    return out


def check_finite_operator_oracle(rng) -> tuple[bool, str]:
    worst = 0.0
    for _ in range(80):
        n, m = int(rng.integers(2, 7)), int(rng.integers(1, 4))
        model = _random_model(rng, n, m)
        pbo = FinitePbo.from_model(model)
        q = rng.uniform(-5.0, 5.0, n * m)
        worst = max(worst, float(np.max(np.abs(pbo.apply(q) - _brute_sweep(model, q)))))
    return worst < 1e-12, f"max gap to brute-force sweep {worst:.2e}"


def check_finite_contraction(rng) -> tuple[bool, str]:
    worst = 0.0
    for _ in range(20):
        model = _random_model(rng, 5, 2)
        pbo = FinitePbo.from_model(model)
        pairs = rng.uniform(-10.0, 10.0, (50, 2, 10))
        worst = max(worst, contraction_factor(pbo, pairs))
    return worst <= 0.9 + 1e-9, f"max empirical factor {worst:.12f} (gamma 0.9)"


def check_chain_geometric_convergence() -> tuple[bool, str]:
    model = ChainWalk().model()
    q_star = value_iteration(model, tol=1e-12)
    chain = iterate(FinitePbo.from_model(model), np.zeros(40), 30)
    bound = np.max(np.abs(q_star))
    ok = all(
        np.max(np.abs(q - q_star)) <= 0.9**k * bound + 1e-9 for k, q in enumerate(chain)
    )
    return ok, "sup error within gamma^k bound for k <= 30"


def check_lqr_fixed_point() -> tuple[bool, str]:
    env = LqrEnv()
    pbo = LqrPbo.from_env(env, fixed_aa=-1.20)
    chain = iterate(pbo, np.zeros(2), 100)
    residual = float(np.max(np.abs(pbo.apply(chain[-1]) - chain[-1])))
    on_line = max(pbo.line_distance(w) for w in chain[1:])
    optimum = lqr_optimal_params(env)
    ok = residual < 1e-8 and on_line < 1e-10 and l2_error(chain[-1], optimum) < 1e-6
    return ok, f"residual {residual:.2e}, max line distance {on_line:.2e}"


def check_low_rank_oracle(rng) -> tuple[bool, str]:
    worst_gap, worst_factor = 0.0, 0.0
    done = 0
    while done < 10:
        d = int(rng.integers(2, 5))
        n_states = int(rng.integers(d, 7))
        n_actions = int(rng.integers(1, 4))
        features = rng.dirichlet(np.ones(d), size=(n_states, n_actions))
        mu = rng.dirichlet(np.ones(n_states), size=d).T
        if np.any(np.abs(mu).sum(axis=1) > np.sqrt(d)):
            continue
        theta = rng.uniform(-1.0, 1.0, d)
        pbo = LowRankPbo(theta, mu, features, gamma=0.9)
        omega = rng.uniform(-3.0, 3.0, d)
        expected = theta.copy()
        for s in range(n_states):
            expected += 0.9 * max(float(features[s, a] @ omega) for a in range(n_actions)) * mu[s]
        worst_gap = max(worst_gap, float(np.max(np.abs(pbo.apply(omega) - expected))))
        pairs = rng.uniform(-5.0, 5.0, (100, 2, d))
        worst_factor = max(worst_factor, contraction_factor(pbo, pairs))
        done += 1
    ok = worst_gap < 1e-12 and worst_factor <= 0.9 + 1e-9
    return ok, f"max gap {worst_gap:.2e}, max factor {worst_factor:.12f}"


def _tiny_chain_batch(n_states=3):
    env = ChainWalk(n_states=n_states, reward_states=(1,), success_prob=0.8)
    rng = np.random.default_rng(0)
    from .environments import collect_chain_walk

    return env, collect_chain_walk(env, rng, n_states * 2 * 2)


def check_loss_zero_at_exact_operator(rng) -> tuple[bool, str]:
    n, m = 3, 2
    rewards = rng.uniform(-1.0, 1.0, n * m)
    transitions = np.zeros((n * m, n))
    for row in range(n * m):
        transitions[row, rng.integers(n)] = 1.0
    model = FiniteModel(rewards, transitions, 0.9)
    states, actions, rws, nxt = [], [], [], []
    for s in range(n):
        for a in range(m):
            row = s * m + a
            states.append([float(s)])
            actions.append(a)
            rws.append(rewards[row])
            nxt.append([float(np.argmax(transitions[row]))])
    batch = TransitionBatch(states, actions, rws, nxt, [False] * (n * m))
    fam = TabularQ(n, m)
    bellman = BellmanOperator(fam, 0.9)
    pbo = FinitePbo.from_model(model)
    omegas = rng.standard_normal((5, n * m))
    losses = [
        consistency_loss(pbo, bellman, batch, omegas, np.zeros(0), np.zeros(0), k)[0]
        for k in (1, 2, 5)
    ]
    return all(v == 0.0 for v in losses), f"losses at depths 1/2/5: {losses}"


def check_semi_gradient_and_fidelity(rng) -> tuple[bool, str]:
    env, batch = _tiny_chain_batch()
    fam = TabularQ(3, 2)
    bellman = BellmanOperator(fam, env.gamma)
    pbo = LinearPbo(6)
    omegas = rng.standard_normal((4, 6))
    worst = 0.0
    for _ in range(2):
        live = pbo.init_params(rng, 0.3)
        frozen = pbo.init_params(rng, 0.3)
        _, grad = consistency_loss(pbo, bellman, batch, omegas, live, frozen, 2)
        eps = 1e-5
        numeric = np.zeros_like(live)
        for i in range(live.size):
            hi, lo = live.copy(), live.copy()
            hi[i] += eps
            lo[i] -= eps
            numeric[i] = (
                consistency_loss(pbo, bellman, batch, omegas, hi, frozen, 2)[0]
                - consistency_loss(pbo, bellman, batch, omegas, lo, frozen, 2)[0]
            ) / (2 * eps)
        worst = max(worst, float(np.max(np.abs(grad - numeric) / (np.abs(numeric) + 1e-12))))
    return worst < 1e-4, f"max relative gradient error {worst:.2e}"


CHECKS = (
    ("finite operator equals brute-force sweep", check_finite_operator_oracle, True),
    ("finite operator empirical contraction", check_finite_contraction, True),
    ("chain-walk geometric convergence", lambda rng: check_chain_geometric_convergence(), False),
    ("lqr closed form: fixed point on its line", lambda rng: check_lqr_fixed_point(), False),
    ("low-rank operator equals direct summation", check_low_rank_oracle, True),
    ("loss vanishes at the exact operator", check_loss_zero_at_exact_operator, True),
    ("semi-gradient matches finite differences", check_semi_gradient_and_fidelity, True),
)


def run_checks(seed: int = 0) -> bool:
    all_ok = True
    for name, fn, needs_rng in CHECKS:
        rng = np.random.default_rng(seed)
        ok, detail = fn(rng) if needs_rng else fn(rng)
        all_ok &= ok
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return all_ok


def main(seed: int = 0) -> int:
    return 0 if run_checks(seed) else 1
