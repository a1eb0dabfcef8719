import numpy as np
import pytest
from scipy import stats

from conftest import deterministic_mdp
from pbo_lab.agents import (
    DeepQNetwork,
    FittedQIteration,
    ProjectedDQN,
    ProjectedFittedQIteration,
    ReplayBuffer,
    as_transition_batch,
    epsilon_greedy,
    make_param_set,
)
from pbo_lab.environments import ChainWalk, TransitionBatch, collect_chain_walk
from pbo_lab.evaluation import l2_error, value_iteration
from pbo_lab.families import MlpQ, TabularQ
from pbo_lab.operators import FinitePbo, LinearPbo, iterate
from tests_util_envs import CountingEnv


class TestReplayBuffer:
    def test_capacity_enforced_fifo(self):
        buf = ReplayBuffer(capacity=3, state_dim=1)
        for i in range(5):
            buf.add([float(i)], 0, 0.0, [float(i + 1)], False)
        assert len(buf) == 3
        stored = set(buf.states[:, 0])
        assert stored == {2.0, 3.0, 4.0}  # oldest two evicted

    def test_sample_size(self, rng):
        buf = ReplayBuffer(capacity=10, state_dim=2)
        for i in range(6):
            buf.add([i, i], 1, 0.5, [i, i], False)
        batch = buf.sample(4, rng)
        assert len(batch) == 4

    def test_empty_sample_raises(self, rng):
        with pytest.raises(ValueError):
            ReplayBuffer(4, 1).sample(2, rng)


class TestEpsilonGreedy:
    def test_zero_epsilon_is_greedy(self, rng):
        fam = TabularQ(2, 3)
        params = np.array([0.0, 5.0, 1.0, 0.0, 0.0, 0.0])
        for _ in range(20):
            assert epsilon_greedy(fam, params, [0], 0.0, rng) == 1

    def test_full_epsilon_is_uniform(self):
        fam = TabularQ(1, 4)
        rng = np.random.default_rng(0)
        draws = [epsilon_greedy(fam, np.zeros(4), [0], 1.0, rng) for _ in range(10_000)]
        counts = np.bincount(draws, minlength=4)
        assert stats.chisquare(counts).pvalue > 0.01

    def test_single_action(self, rng):
        fam = TabularQ(2, 1)
        assert epsilon_greedy(fam, np.zeros(2), [0], 0.7, rng) == 0

    def test_invalid_epsilon(self, rng):
        with pytest.raises(ValueError):
            epsilon_greedy(TabularQ(1, 2), np.zeros(2), [0], 1.5, rng)


class TestInputValidation:
    def test_array_roundtrip(self, rng):
        batch = TransitionBatch(
            rng.standard_normal((5, 2)), [0, 1, 0, 1, 0], np.zeros(5),
            rng.standard_normal((5, 2)), [False] * 5,
        )
        arr = np.hstack(
            [batch.states, batch.actions[:, None], batch.rewards[:, None],
             batch.next_states, batch.terminals[:, None]]
        )
        decoded = as_transition_batch(arr)
        assert np.array_equal(decoded.states, batch.states)
        assert np.array_equal(decoded.actions, batch.actions)

    def test_bad_shape_rejected(self):
        with pytest.raises(ValueError):
            as_transition_batch(np.zeros((3, 4)))

    def test_non_finite_rejected(self):
        arr = np.zeros((2, 5))
        arr[0, 1] = np.nan
        with pytest.raises(ValueError):
            as_transition_batch(arr)


class TestParamSet:
    def test_linear_family_designated_zero(self, rng):
        fam = TabularQ(3, 2)
        params = make_param_set(fam, 5, 1.0, rng)
        assert np.all(params[0] == 0.0)
        assert np.any(params[1:] != 0.0)

    def test_mlp_designated_random(self, rng):
        fam = MlpQ(2, (4,), 2)
        params = make_param_set(fam, 5, 0.3, rng)
        assert np.any(params[0] != 0.0)


class TestFittedQIteration:
    def test_geometric_fixed_point_single_state(self):
        # one state, one action, reward 1, gamma 0.5: Q* = 2
        fam = TabularQ(1, 1)
        batch = TransitionBatch([[0.0]], [0], [1.0], [[0.0]], [False])
        for k in (3, 6):
            agent = FittedQIteration(
                family=fam, gamma=0.5, n_iterations=k, fit_steps=300, patience=50,
                lr_start=0.1, lr_end=1e-3, batch_size=1, param_count=2,
                param_std=0.5, random_state=0,
            )
            agent.fit(batch)
            assert abs(agent.omegas_[-1][0] - 2.0) <= 0.5**k * 2.0 + 1e-2

    def test_zero_iterations_returns_start(self, rng):
        fam = TabularQ(3, 2)
        env = ChainWalk(n_states=3, reward_states=(1,))
        batch = collect_chain_walk(env, rng, 12)
        agent = FittedQIteration(family=fam, gamma=0.9, n_iterations=0, random_state=1)
        agent.fit(batch)
        assert agent.omegas_.shape == (1, 6)
        assert np.all(agent.omegas_[0] == 0.0)

    def test_error_decreases_with_more_iterations(self):
        env = ChainWalk(n_states=5, reward_states=(2,))
        model = env.model()
        q_star = value_iteration(model, tol=1e-12)
        batch = collect_chain_walk(env, np.random.default_rng(0), 100)
        errs = {}
        for k in (2, 10):
            agent = FittedQIteration(
                family=TabularQ(5, 2), gamma=env.gamma, n_iterations=k,
                fit_steps=300, patience=100, lr_start=0.05, lr_end=1e-4,
                batch_size=50, random_state=0,
            )
            agent.fit(batch)
            errs[k] = l2_error(agent.omegas_[-1], q_star)
        assert errs[10] < errs[2]

    def test_predict_shape(self, rng):
        fam = TabularQ(3, 2)
        batch = collect_chain_walk(ChainWalk(n_states=3, reward_states=(1,)), rng, 12)
        agent = FittedQIteration(
            family=fam, gamma=0.9, n_iterations=1, fit_steps=50, random_state=0
        ).fit(batch)
        actions = agent.predict(np.array([[0.0], [1.0], [2.0]]))
        assert actions.shape == (3,) and set(actions) <= {0, 1}

    def test_sklearn_get_params(self):
        agent = FittedQIteration(gamma=0.7)
        assert agent.get_params()["gamma"] == 0.7


class TestProjectedFqi:
    def test_closed_form_operator_training_is_noop(self, rng):
        model = deterministic_mdp(rng, 3, 2)
        fam = TabularQ(3, 2)
        from tests_util_envs import batch_from_model

        batch = batch_from_model(model)
        agent = ProjectedFittedQIteration(
            pbo=FinitePbo.from_model(model), family=fam, gamma=model.gamma,
            bellman_iterations=2, epochs=3, steps_per_epoch=2,
            batch_size=len(batch), param_batch_size=4, param_count=4,
            random_state=0,
        )
        agent.fit(batch)
        assert agent.operator_params_.size == 0
        assert all(row[2] == 0.0 for row in agent.loss_log_)  # loss identically zero

    def test_learns_on_small_chain(self):
        env = ChainWalk(n_states=4, reward_states=(1, 2))
        model = env.model()
        q_star = value_iteration(model, tol=1e-12)
        batch = collect_chain_walk(env, np.random.default_rng(3), 80)
        agent = ProjectedFittedQIteration(
            pbo=LinearPbo(8), family=TabularQ(4, 2), gamma=env.gamma,
            bellman_iterations=3, epochs=300, steps_per_epoch=5,
            batch_size=40, param_batch_size=20, param_count=20,
            param_std=1.0, operator_std=5e-6, lr_start=1e-2, lr_end=1e-5,
            random_state=0,
        )
        agent.fit(batch)
        chain = agent.iterate(n_steps=8)
        assert l2_error(chain[-1], q_star) < l2_error(chain[0], q_star)

    def test_fit_is_reproducible(self):
        env = ChainWalk(n_states=3, reward_states=(1,))
        batch = collect_chain_walk(env, np.random.default_rng(5), 30)

        def run():
            agent = ProjectedFittedQIteration(
                pbo=LinearPbo(6), family=TabularQ(3, 2), gamma=env.gamma,
                bellman_iterations=2, epochs=20, steps_per_epoch=3,
                batch_size=10, param_batch_size=8, param_count=8, random_state=7,
            )
            agent.fit(batch)
            return agent.operator_params_

        assert np.array_equal(run(), run())

    def test_offline_agent_never_touches_env(self, rng):
        env = CountingEnv(ChainWalk(n_states=3, reward_states=(1,)))
        batch = collect_chain_walk(env, rng, 12)
        before = env.interactions
        agent = ProjectedFittedQIteration(
            pbo=LinearPbo(6), family=TabularQ(3, 2), gamma=0.9,
            bellman_iterations=1, epochs=5, steps_per_epoch=2,
            batch_size=6, param_batch_size=4, param_count=4, random_state=0,
        )
        agent.fit(batch)
        assert env.interactions == before

    def test_shares_param_set_with_baseline(self, rng):
        batch = collect_chain_walk(ChainWalk(n_states=3, reward_states=(1,)), rng, 12)
        fqi = FittedQIteration(
            family=TabularQ(3, 2), gamma=0.9, n_iterations=1, fit_steps=10,
            param_count=6, param_std=1.0, random_state=11,
        ).fit(batch)
        profqi = ProjectedFittedQIteration(
            pbo=LinearPbo(6), family=TabularQ(3, 2), gamma=0.9,
            bellman_iterations=1, epochs=2, steps_per_epoch=1, batch_size=6,
            param_batch_size=6, param_count=6, param_std=1.0, random_state=11,
        ).fit(batch)
        assert np.array_equal(fqi.param_set_, profqi.param_set_)


class TestDeepQNetwork:
    def _env(self, reward_states=()):
        return ChainWalk(n_states=4, reward_states=reward_states)

    def test_zero_reward_zero_init_heads_stay_put(self):
        env = self._env(())
        fam = MlpQ(1, (4, 4), 2)  # two hidden layers: zero output layer at init
        agent = DeepQNetwork(
            family=fam, gamma=0.9, target_updates=3, fit_steps=30,
            buffer_capacity=100, initial_samples=40, batch_size=8,
            episode_steps=10, param_count=4, param_std=0.3, random_state=0,
        )
        agent.fit(env)
        assert np.array_equal(agent.snapshots_[-1], agent.snapshots_[0])

    def test_snapshot_count_and_final_epsilon(self):
        env = self._env((1,))
        agent = DeepQNetwork(
            family=TabularQ(4, 2), gamma=0.9, target_updates=5, fit_steps=50,
            buffer_capacity=60, initial_samples=30, batch_size=8,
            episode_steps=10, param_count=4, random_state=0,
        )
        agent.fit(env)
        assert agent.snapshots_.shape[0] == 6
        assert agent.final_epsilon_ == 0.01

    def test_buffer_never_exceeds_capacity(self):
        env = self._env((1,))
        agent = DeepQNetwork(
            family=TabularQ(4, 2), gamma=0.9, target_updates=2, fit_steps=40,
            buffer_capacity=25, initial_samples=50, batch_size=8,
            episode_steps=10, param_count=4, random_state=0,
        )
        agent.fit(env)
        assert agent.max_buffer_fill_ <= 25

    def test_learns_reward_location(self):
        env = self._env((0,))
        agent = DeepQNetwork(
            family=TabularQ(4, 2), gamma=0.9, target_updates=8, fit_steps=400,
            lr_start=0.05, lr_end=1e-3, buffer_capacity=200, initial_samples=100,
            batch_size=32, episode_steps=15, param_count=4, random_state=0,
        )
        agent.fit(env)
        # from state 1 the greedy action should move left toward the reward
        assert agent.predict(np.array([[1.0]]))[0] == 0


class TestProjectedDqn:
    def _agent(self, env, **overrides):
        defaults = dict(
            pbo=LinearPbo(8), family=TabularQ(4, 2), gamma=0.9,
            bellman_iterations=3, epochs=10, steps_per_epoch=4,
            batch_size=8, param_batch_size=6, param_count=6,
            buffer_capacity=50, initial_samples=30, episode_steps=10,
            random_state=0,
        )
        defaults.update(overrides)
        return ProjectedDQN(**defaults)

    def test_acting_params_are_k_applications(self, rng):
        env = ChainWalk(n_states=4, reward_states=(1,))
        agent = self._agent(env)
        agent.fit(env)
        expected = iterate(agent.pbo, agent.omega0_, 3, agent.operator_params_)[-1]
        assert np.array_equal(agent.acting_params(agent.operator_params_, agent.omega0_), expected)

    def test_snapshot_count(self):
        env = ChainWalk(n_states=4, reward_states=(1,))
        agent = self._agent(env, snapshot_steps=7)
        agent.fit(env)
        assert agent.snapshots_.shape[0] == 8

    def test_buffer_cap_respected(self):
        env = ChainWalk(n_states=4, reward_states=(1,))
        agent = self._agent(env, buffer_capacity=20, initial_samples=35)
        agent.fit(env)
        assert agent.max_buffer_fill_ <= 20

    def test_always_explore_matches_uniform_collection(self):
        env = CountingEnv(ChainWalk(n_states=4, reward_states=(1,)))
        agent = self._agent(env, eps_start=1.0, eps_end=1.0)
        agent.fit(env)
        actions = np.array(env.action_log)
        counts = np.bincount(actions.astype(int), minlength=2)
        assert stats.chisquare(counts).pvalue > 0.01
