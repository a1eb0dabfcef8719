import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pbo_lab.autodiff import value_of
from pbo_lab.families import (
    LowRankQ,
    MlpQ,
    QuadraticQ,
    TabularQ,
    evaluate,
    max_over_actions,
    sample_param_set,
)


class TestTabular:
    def test_zero_params_everywhere_zero(self):
        fam = TabularQ(4, 3)
        params = fam.zero_params()
        for s in range(4):
            for a in range(3):
                assert evaluate(fam, params, s, a) == 0.0

    def test_entry_index_bijection(self):
        fam = TabularQ(5, 2)
        params = np.zeros(10)
        params[3 * 2 + 1] = 7.5
        assert evaluate(fam, params, 3, 1) == 7.5
        assert evaluate(fam, params, 3, 0) == 0.0

    def test_single_nonzero_entry_is_argmax(self):
        fam = TabularQ(4, 3)
        params = np.zeros(12)
        params[2 * 3 + 1] = 1.0
        value, action = max_over_actions(fam, params, 2)
        assert (value, action) == (1.0, 1)

    def test_length_mismatch_raises(self):
        fam = TabularQ(4, 3)
        with pytest.raises(ValueError):
            fam.qvalues(np.zeros(5), [0])

    def test_linearity_in_params(self, rng):
        fam = TabularQ(6, 2)
        w1, w2 = rng.standard_normal(12), rng.standard_normal(12)
        states = np.arange(6)
        mix = 0.3 * fam.qvalues_batch(w1[None], states) + (-1.7) * fam.qvalues_batch(
            w2[None], states
        )
        combined = fam.qvalues_batch((0.3 * w1 - 1.7 * w2)[None], states)
        assert np.max(np.abs(mix - combined)) < 1e-12


class TestQuadratic:
    def test_pure_state_coefficient(self):
        fam = QuadraticQ(fixed_aa=-1.2)
        assert evaluate(fam, np.array([1.0, 0.0]), 2.0, 0.0) == 4.0

    def test_analytic_max_example(self):
        fam = QuadraticQ(fixed_aa=-1.2)
        value, action = max_over_actions(fam, np.array([0.0, 1.0]), 1.0)
        assert abs(value - (0.0 - 1.0 / -1.2)) < 1e-12  # 0.8333...
        assert abs(action - (-1.0 / -1.2)) < 1e-12

    def test_zero_cross_term_maximizer_at_zero(self):
        fam = QuadraticQ(fixed_aa=-1.2)
        value, action = max_over_actions(fam, np.array([2.0, 0.0]), 3.0)
        assert value == 18.0
        assert action == 0.0

    def test_positive_fixed_aa_rejected(self):
        with pytest.raises(ValueError):
            QuadraticQ(fixed_aa=0.5)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 10**6))
    def test_analytic_max_matches_fine_grid(self, seed):
        rng = np.random.default_rng(seed)
        fam = QuadraticQ(fixed_aa=-1.2)
        params = rng.uniform(-2.0, 2.0, 2)
        state = rng.uniform(-3.0, 3.0)
        # only comparable when the continuous maximizer falls inside the grid
        maximizer = -params[1] / fam.fixed_aa * state
        if abs(maximizer) > 8.0:
            return

        def section(lo, hi):
            grid = np.linspace(lo, hi, 2001)
            vals = (
                params[0] * state**2
                + 2.0 * params[1] * state * grid
                + fam.fixed_aa * grid**2
            )
            return grid, vals

        # coarse 2001-point pass, then one refinement around its argmax
        # (a single pass only localizes the max to ~|fixed_aa| * (spacing/2)^2)
        grid, vals = section(-8.0, 8.0)
        best = grid[np.argmax(vals)]
        step = grid[1] - grid[0]
        _, refined = section(max(best - step, -8.0), min(best + step, 8.0))
        brute = max(np.max(vals), np.max(refined))
        analytic, _ = max_over_actions(fam, params, state)
        assert abs(analytic - brute) < 1e-6


class TestMlp:
    def test_car_on_hill_parameter_count(self):
        fam = MlpQ(state_dim=2, hidden=(30,), n_actions=2)
        assert fam.dim == 151

    def test_output_dim_is_action_count(self, rng):
        fam = MlpQ(state_dim=3, hidden=(8, 8), n_actions=4)
        params = rng.standard_normal(fam.dim)
        vals = value_of(fam.qvalues(params, rng.standard_normal((5, 3))))
        assert vals.shape == (5, 4)

    def test_zero_params_output_zero(self):
        fam = MlpQ(state_dim=2, hidden=(30,), n_actions=2)
        vals = value_of(fam.qvalues(fam.zero_params(), np.array([[0.3, -2.0]])))
        assert np.all(vals == 0.0)

    def test_deep_samples_have_zero_output(self, rng):
        fam = MlpQ(state_dim=3, hidden=(8, 8), n_actions=2)
        params = sample_param_set(fam, 5, std=0.5, rng=rng)
        states = rng.standard_normal((7, 3))
        for vec in params:
            assert np.all(value_of(fam.qvalues(vec, states)) == 0.0)
            assert np.any(vec != 0.0)  # only the last layer is zeroed

    def test_shallow_samples_keep_random_output_layer(self, rng):
        fam = MlpQ(state_dim=2, hidden=(30,), n_actions=2)
        params = sample_param_set(fam, 3, std=0.5, rng=rng)
        lo, hi = fam.layout.offsets()["w_out"]
        assert np.any(params[:, lo:hi] != 0.0)

    def test_q_at_selects_action_column(self, rng):
        fam = MlpQ(state_dim=2, hidden=(6,), n_actions=3)
        params = rng.standard_normal(fam.dim)
        states = rng.standard_normal((4, 2))
        actions = np.array([0, 2, 1, 1])
        direct = value_of(fam.qvalues(params, states))
        picked = value_of(fam.q_at(params, states, actions))[0]
        assert np.allclose(picked, direct[np.arange(4), actions])


class TestLowRank:
    def _basis_family(self, n_states=3, n_actions=2, d=4):
        features = np.zeros((n_states, n_actions, d))
        for s in range(n_states):
            for a in range(n_actions):
                features[s, a, (s + a) % d] = 1.0
        return LowRankQ(features)

    def test_basis_features_pick_coordinates(self, rng):
        fam = self._basis_family()
        params = rng.standard_normal(4)
        assert evaluate(fam, params, 1, 1) == params[2]

    def test_feature_norm_validated(self):
        features = np.ones((2, 2, 3))
        with pytest.raises(ValueError):
            LowRankQ(features)

    def test_linearity(self, rng):
        fam = self._basis_family()
        w1, w2 = rng.standard_normal(4), rng.standard_normal(4)
        states = np.arange(3)
        mix = 2.0 * value_of(fam.qvalues_batch(w1[None], states)) - 0.5 * value_of(
            fam.qvalues_batch(w2[None], states)
        )
        combined = value_of(fam.qvalues_batch((2.0 * w1 - 0.5 * w2)[None], states))
        assert np.max(np.abs(mix - combined)) < 1e-12


class TestSampling:
    def test_draws_within_two_std(self, rng):
        fam = TabularQ(10, 2)
        params = sample_param_set(fam, 50, std=0.3, rng=rng)
        assert params.shape == (50, 20)
        assert np.max(np.abs(params)) <= 0.6

    def test_zero_count_empty(self, rng):
        fam = TabularQ(3, 2)
        assert sample_param_set(fam, 0, std=1.0, rng=rng).shape == (0, 6)

    def test_greedy_tie_lowest_index(self):
        fam = TabularQ(2, 3)
        params = np.array([1.0, 1.0, 0.0, 0.0, 2.0, 2.0])
        assert fam.greedy_actions(params, [0])[0] == 0
        assert fam.greedy_actions(params, [1])[0] == 1
