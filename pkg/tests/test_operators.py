import numpy as np
import pytest

from conftest import brute_force_bellman_sweep, deterministic_mdp, random_finite_mdp
from pbo_lab.environments import ChainWalk, LqrEnv, Transition
from pbo_lab.families import QuadraticQ, TabularQ
from pbo_lab.operators import (
    BellmanOperator,
    DivergenceError,
    FinitePbo,
    LinearPbo,
    LowRankPbo,
    LqrPbo,
    MlpPbo,
    NonContractiveError,
    StructuredFinitePbo,
    StructuredLqrPbo,
    bellman_target,
    contraction_factor,
    fixed_point,
    iterate,
    load_operator,
    save_operator,
)


def random_low_rank_mdp(rng, n_states, n_actions, d, gamma=0.9):
    """Latent-variable low-rank MDP with simplex features (L1 norms <= 1).

    Needs n_states >= d: the d latent next-state distributions carry total
    mass d, so with fewer states some ||mu(s)||_1 must exceed sqrt(d).
    """
    if n_states < d:
        raise ValueError("need n_states >= d for the mu norm bound to be satisfiable")
    for _ in range(10_000):
        features = rng.dirichlet(np.ones(d), size=(n_states, n_actions))
        mu_latent = rng.dirichlet(np.ones(n_states), size=d)  # (d, S) distributions
        mu = mu_latent.T  # (S, d)
        theta = rng.uniform(-1.0, 1.0, d)
        if np.linalg.norm(theta, 1) > np.sqrt(d):
            theta *= np.sqrt(d) / np.linalg.norm(theta, 1)
        if np.all(np.abs(mu).sum(axis=1) <= np.sqrt(d)):
            return theta, mu, features
    raise RuntimeError("could not draw a norm-bounded low-rank model")


class TestFinitePbo:
    def test_zero_reward_zero_table(self, rng):
        model = random_finite_mdp(rng, 4, 2)
        pbo = FinitePbo(np.zeros(8), model.transitions, 0.9)
        assert np.all(pbo.apply(np.zeros(8)) == 0.0)

    def test_matches_brute_force_sweep(self, rng):
        for _ in range(25):
            n, m = int(rng.integers(2, 7)), int(rng.integers(1, 4))
            model = random_finite_mdp(rng, n, m)
            pbo = FinitePbo.from_model(model)
            q = rng.uniform(-5.0, 5.0, n * m)
            assert np.max(np.abs(pbo.apply(q) - brute_force_bellman_sweep(model, q))) < 1e-12

    def test_contraction_bounded_by_gamma(self, rng):
        model = random_finite_mdp(rng, 5, 2, gamma=0.9)
        pbo = FinitePbo.from_model(model)
        pairs = rng.uniform(-10.0, 10.0, (200, 2, 10))
        assert contraction_factor(pbo, pairs) <= 0.9 + 1e-9

    def test_dimension_mismatch(self, rng):
        pbo = FinitePbo.from_model(random_finite_mdp(rng, 3, 2))
        with pytest.raises(ValueError):
            pbo.apply(np.zeros(5))

    def test_geometric_convergence_on_chain_walk(self):
        from pbo_lab.evaluation import value_iteration

        model = ChainWalk().model()
        q_star = value_iteration(model, tol=1e-12)
        pbo = FinitePbo.from_model(model)
        chain = iterate(pbo, np.zeros(40), 30)
        bound = np.max(np.abs(q_star))
        for k, q in enumerate(chain):
            assert np.max(np.abs(q - q_star)) <= 0.9**k * bound + 1e-9


class TestStructuredFinitePbo:
    def test_rows_stochastic_at_any_params(self, rng):
        pbo = StructuredFinitePbo(4, 2, 0.9)
        pbo.params = pbo.init_params(rng, 0.5)
        rows = pbo.stochastic_matrix()
        assert np.max(np.abs(rows.sum(axis=1) - 1.0)) < 1e-12
        assert np.all(rows > 0)

    def test_near_zero_init_gives_uniform_rows(self, rng):
        pbo = StructuredFinitePbo(3, 2, 0.9)
        pbo.params = pbo.init_params(rng, 5e-6)
        rows = pbo.stochastic_matrix()
        assert np.max(np.abs(rows - 1.0 / 3.0)) < 1e-5

    def test_can_reproduce_closed_form(self, rng):
        model = random_finite_mdp(rng, 3, 2)
        exact = FinitePbo.from_model(model)
        pbo = StructuredFinitePbo(3, 2, model.gamma)
        # logits matching log-probabilities reproduce the rows exactly
        pbo.params = pbo.layout.flatten(
            {"rewards": model.rewards, "logits": np.log(model.transitions)}
        )
        q = rng.uniform(-2.0, 2.0, 6)
        assert np.max(np.abs(pbo.apply(q) - exact.apply(q))) < 1e-12

    def test_contraction_holds_by_construction(self, rng):
        pbo = StructuredFinitePbo(4, 2, 0.9)
        pbo.params = pbo.init_params(rng, 1.0)
        pairs = rng.uniform(-5.0, 5.0, (100, 2, 8))
        assert contraction_factor(pbo, pairs) <= 0.9 + 1e-9


class TestLqrPbo:
    def _paper_pbo(self):
        return LqrPbo.from_env(LqrEnv(), fixed_aa=-1.20)

    def test_zero_params_map_to_reward_coefficients(self):
        out = self._paper_pbo().apply(np.zeros(2))
        assert np.allclose(out, [-0.73, -0.315], atol=1e-15)

    def test_iterates_stay_on_the_image_line(self):
        pbo = self._paper_pbo()
        chain = iterate(pbo, np.zeros(2), 100)
        for omega in chain[1:]:
            assert pbo.line_distance(omega) < 1e-10

    def test_converges_to_consistent_fixed_point(self):
        pbo = self._paper_pbo()
        chain = iterate(pbo, np.zeros(2), 100)
        final = chain[-1]
        assert np.max(np.abs(pbo.apply(final) - final)) < 1e-8
        # the fixed point satisfies the simultaneous closed-form equations
        c = final[0] - final[1] ** 2 / -1.20
        assert abs(final[0] - (-0.73 + (-0.46) ** 2 * c)) < 1e-10
        assert abs(final[1] - (-0.315 + (-0.46) * 0.54 * c)) < 1e-10

    def test_structured_variant_matches_when_given_truth(self, rng):
        env = LqrEnv()
        exact = self._paper_pbo()
        learned = StructuredLqrPbo(fixed_aa=-1.20, gamma=env.gamma)
        learned.params = np.array([env.dyn_s, env.dyn_a, env.rew_ss, env.rew_sa])
        for _ in range(20):
            omega = rng.uniform(-2.0, 2.0, 2)
            assert np.allclose(learned.apply(omega), exact.apply(omega), atol=1e-14)


class TestLowRankPbo:
    def test_matches_direct_summation(self, rng):
        for _ in range(10):
            d = int(rng.integers(2, 5))
            n_states = int(rng.integers(d, 7))
            n_actions = int(rng.integers(1, 4))
            theta, mu, features = random_low_rank_mdp(rng, n_states, n_actions, d)
            pbo = LowRankPbo(theta, mu, features, gamma=0.9)
            omega = rng.uniform(-3.0, 3.0, d)
            # oracle: direct summation with explicit loops
            expected = theta.copy()
            for s in range(n_states):
                best = -np.inf
                for a in range(n_actions):
                    best = max(best, float(features[s, a] @ omega))
                expected += 0.9 * best * mu[s]
            assert np.max(np.abs(pbo.apply(omega) - expected)) < 1e-12

    def test_contraction_with_normalized_features(self, rng):
        theta, mu, features = random_low_rank_mdp(rng, 5, 2, 3)
        pbo = LowRankPbo(theta, mu, features, gamma=0.9)
        pairs = rng.uniform(-5.0, 5.0, (300, 2, 3))
        assert contraction_factor(pbo, pairs) <= 0.9 + 1e-9


class TestLinearPbo:
    def test_zero_matrix_fixed_point_is_offset(self, rng):
        pbo = LinearPbo(4)
        b = rng.standard_normal(4)
        pbo.params = pbo.layout.flatten({"matrix": np.zeros((4, 4)), "offset": b})
        assert np.allclose(fixed_point(pbo), b)

    def test_scaled_identity_geometric_series(self):
        pbo = LinearPbo(3)
        v = np.array([1.0, -2.0, 0.5])
        pbo.params = pbo.layout.flatten({"matrix": 0.5 * np.eye(3), "offset": v})
        assert np.allclose(fixed_point(pbo), v / 0.5 / 1.0 * 0.5 / 0.5 * 2.0 * 0.5)
        assert np.allclose(fixed_point(pbo), v / (1.0 - 0.5))

    def test_random_contractive_fixed_point_residual(self, rng):
        pbo = LinearPbo(5)
        mat = rng.standard_normal((5, 5))
        mat *= 0.8 / np.max(np.abs(np.linalg.eigvals(mat)))
        pbo.params = pbo.layout.flatten({"matrix": mat, "offset": rng.standard_normal(5)})
        w = fixed_point(pbo)
        assert np.max(np.abs(pbo.apply(w) - w)) < 1e-10

    def test_non_contractive_raises(self):
        pbo = LinearPbo(2)
        pbo.params = pbo.layout.flatten({"matrix": 1.5 * np.eye(2), "offset": np.zeros(2)})
        with pytest.raises(NonContractiveError):
            fixed_point(pbo)

    def test_iterate_converges_geometrically(self, rng):
        pbo = LinearPbo(4)
        mat = rng.standard_normal((4, 4))
        rho = 0.6
        mat *= rho / np.max(np.abs(np.linalg.eigvals(mat)))
        pbo.params = pbo.layout.flatten({"matrix": mat, "offset": rng.standard_normal(4)})
        target = fixed_point(pbo)
        chain = iterate(pbo, np.zeros(4), 60)
        err0 = np.max(np.abs(chain[0] - target))
        # allow conditioning slack on top of the spectral estimate
        slack = 50.0
        for k in (20, 40, 60):
            assert np.max(np.abs(chain[k] - target)) <= rho**k * err0 * slack


class TestMlpPbo:
    def test_shapes_and_no_fixed_point(self, rng):
        pbo = MlpPbo(6, hidden=(12, 12))
        pbo.params = pbo.init_params(rng, 0.1)
        out = pbo.apply(rng.standard_normal(6))
        assert out.shape == (6,)
        assert not pbo.supports_fixed_point
        with pytest.raises(ValueError):
            fixed_point(pbo)

    def test_tiny_init_maps_near_zero(self, rng):
        pbo = MlpPbo(4, hidden=(8,))
        pbo.params = pbo.init_params(rng, 5e-7)
        out = pbo.apply(rng.uniform(-1.0, 1.0, 4))
        assert np.max(np.abs(out)) < 1e-4


class TestIterate:
    def test_zero_steps_returns_start(self, rng):
        pbo = FinitePbo.from_model(random_finite_mdp(rng, 3, 2))
        w0 = rng.standard_normal(6)
        chain = iterate(pbo, w0, 0)
        assert chain.shape == (1, 6)
        assert np.array_equal(chain[0], w0)

    def test_divergence_carries_step_index(self):
        pbo = LinearPbo(2)
        pbo.params = pbo.layout.flatten({"matrix": 10.0 * np.eye(2), "offset": np.zeros(2)})
        with pytest.raises(DivergenceError) as err:
            iterate(pbo, np.ones(2), 100)
        assert err.value.step is not None and err.value.step > 0

    def test_identity_operator_contraction_factor_one(self, rng):
        pbo = LinearPbo(3)
        pbo.params = pbo.layout.flatten({"matrix": np.eye(3), "offset": np.zeros(3)})
        pairs = rng.standard_normal((50, 2, 3))
        assert abs(contraction_factor(pbo, pairs) - 1.0) < 1e-12

    def test_coincident_pairs_skipped(self, rng):
        pbo = LinearPbo(2)
        pbo.params = pbo.layout.flatten({"matrix": 0.5 * np.eye(2), "offset": np.zeros(2)})
        pairs = np.zeros((3, 2, 2))
        pairs[0] = [[1.0, 0.0], [0.0, 1.0]]
        assert contraction_factor(pbo, pairs) <= 0.5 + 1e-12


class TestBellmanTargets:
    def test_terminal_transition_is_reward_only(self):
        fam = TabularQ(3, 2)
        op = BellmanOperator(fam, gamma=0.9)
        t = Transition(np.array([0.0]), 1, 1.0, np.array([2.0]), True)
        assert bellman_target(op, np.ones(6) * 100.0, t) == 1.0

    def test_zero_gamma_is_reward(self):
        fam = TabularQ(3, 2)
        op = BellmanOperator(fam, gamma=0.0)
        t = Transition(np.array([0.0]), 0, 0.5, np.array([1.0]), False)
        assert bellman_target(op, np.ones(6) * 7.0, t) == 0.5

    def test_matches_exact_sweep_on_deterministic_mdp(self, rng):
        model = deterministic_mdp(rng, 2, 2)
        fam = TabularQ(2, 2)
        op = BellmanOperator(fam, model.gamma)
        q = rng.standard_normal(4)
        sweep = brute_force_bellman_sweep(model, q)
        for s in range(2):
            for a in range(2):
                row = s * 2 + a
                s_next = int(np.argmax(model.transitions[row]))
                t = Transition(
                    np.array([float(s)]), a, model.rewards[row],
                    np.array([float(s_next)]), False,
                )
                assert abs(bellman_target(op, q, t) - sweep[row]) < 1e-12

    def test_quadratic_targets_use_action_grid(self):
        env = LqrEnv()
        fam = QuadraticQ(fixed_aa=-1.2, action_values=env.action_values)
        op = BellmanOperator(fam, gamma=1.0)
        omega = np.array([0.3, 0.4])
        t = Transition(np.array([1.0]), 0.0, -0.73, np.array([-0.46]), False)
        grid_max = np.max(
            0.3 * (-0.46) ** 2 + 2 * 0.4 * (-0.46) * env.action_values
            - 1.2 * env.action_values**2
        )
        assert abs(bellman_target(op, omega, t) - (-0.73 + grid_max)) < 1e-12


class TestCheckpoints:
    def test_linear_roundtrip(self, tmp_path, rng):
        pbo = LinearPbo(3, gamma=0.9)
        pbo.params = pbo.init_params(rng, 1.0)
        base = str(tmp_path / "op")
        save_operator(pbo, base)
        loaded = load_operator(base)
        assert isinstance(loaded, LinearPbo)
        assert np.array_equal(loaded.params, pbo.params)
        assert loaded.gamma == 0.9

    def test_closed_form_finite_roundtrip(self, tmp_path, rng):
        model = random_finite_mdp(rng, 3, 2)
        pbo = FinitePbo.from_model(model)
        base = str(tmp_path / "fin")
        save_operator(pbo, base)
        loaded = load_operator(base)
        q = rng.standard_normal(6)
        assert np.array_equal(loaded.apply(q), pbo.apply(q))

    def test_mlp_roundtrip(self, tmp_path, rng):
        pbo = MlpPbo(4, hidden=(6,))
        pbo.params = pbo.init_params(rng, 0.3)
        base = str(tmp_path / "mlp")
        save_operator(pbo, base)
        loaded = load_operator(base)
        w = rng.standard_normal(4)
        assert np.array_equal(loaded.apply(w), pbo.apply(w))

    def test_structured_roundtrips(self, tmp_path, rng):
        lqr = StructuredLqrPbo(fixed_aa=-1.2, gamma=1.0)
        lqr.params = np.array([-0.4, 0.5, -0.7, -0.3])
        save_operator(lqr, str(tmp_path / "slqr"))
        loaded = load_operator(str(tmp_path / "slqr"))
        w = rng.standard_normal(2)
        assert np.array_equal(loaded.apply(w), lqr.apply(w))

        fin = StructuredFinitePbo(3, 2, 0.9)
        fin.params = fin.init_params(rng, 0.5)
        save_operator(fin, str(tmp_path / "sfin"))
        loaded = load_operator(str(tmp_path / "sfin"))
        q = rng.standard_normal(6)
        assert np.array_equal(loaded.apply(q), fin.apply(q))
