import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from hyperdisc import (
    InvalidInputError,
    ModelSpec,
    ValueSolution,
    ccp_from_values,
    choice_long_run_values,
    choice_values,
    logsumexp,
    perceived_value_step,
    solve_backward,
)
from conftest import canonical_design, exponential_solution, make_random_model


class TestLogsumexp:
    def test_two_equal_entries(self):
        assert_allclose(logsumexp([0.0, 0.0]), math.log(2.0), rtol=0, atol=1e-15)

    def test_overflow_safety(self):
        assert_allclose(logsumexp([1000.0, 1000.0]), 1000.0 + math.log(2.0),
                        rtol=0, atol=1e-12)

    def test_singleton_identity(self):
        for x in (-3.5, 0.0, 42.0):
            assert logsumexp([x]) == pytest.approx(x, abs=1e-15)

    def test_empty_rejected(self):
        with pytest.raises(InvalidInputError):
            logsumexp([])

    def test_non_finite_rejected(self):
        with pytest.raises(InvalidInputError):
            logsumexp([0.0, np.inf])

    @given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=8),
           st.floats(-1e3, 1e3))
    def test_shift_invariance(self, values, shift):
        base = logsumexp(values)
        shifted = logsumexp([v + shift for v in values])
        assert shifted == pytest.approx(base + shift, abs=1e-9)


class TestCcpFromValues:
    def test_symmetric(self):
        assert_allclose(ccp_from_values([0.0, 0.0]), [0.5, 0.5], rtol=0, atol=1e-15)

    def test_logistic_value(self):
        # independent evaluation of exp(0.5) / (1 + exp(0.5))
        p1 = math.exp(0.5) / (1.0 + math.exp(0.5))
        got = ccp_from_values([0.5, 0.0])
        assert_allclose(got, [p1, 1.0 - p1], rtol=0, atol=1e-15)
        assert_allclose(got, [0.62246, 0.37754], rtol=0, atol=1e-5)

    def test_sums_to_one_and_positive(self):
        p = ccp_from_values(np.random.default_rng(0).normal(size=(4, 6)))
        assert np.all(p > 0)
        assert_allclose(p.sum(axis=0), 1.0, rtol=0, atol=1e-14)

    @given(st.lists(st.floats(-50, 50), min_size=2, max_size=6),
           st.floats(-50, 50))
    def test_shift_invariance(self, w, c):
        base = ccp_from_values(w)
        shifted = ccp_from_values([v + c for v in w])
        assert_allclose(shifted, base, rtol=0, atol=1e-12)

    def test_non_finite_rejected(self):
        with pytest.raises(InvalidInputError):
            ccp_from_values([np.nan, 0.0])


class TestChoiceValues:
    def test_zero_continuation_returns_utility_exactly(self):
        model = make_random_model(3)
        w = choice_values(model.utility, model.transitions, model.beta,
                          model.delta, np.zeros(model.num_states))
        assert_array_equal(w, model.utility)

    def test_beta_one_matches_long_run_values(self):
        model = make_random_model(4)
        v_next = np.random.default_rng(5).normal(size=model.num_states)
        assert_array_equal(
            choice_values(model.utility, model.transitions, 1.0, model.delta, v_next),
            choice_long_run_values(model.utility, model.transitions, model.delta, v_next),
        )

    def test_hand_computed_single_cell(self):
        # one action, two states, zero utility: W(0) = 0.5 * 0.8 * 0.3
        f = np.array([[[0.3, 0.7], [0.6, 0.4]]])
        w = choice_values(np.zeros((1, 2)), f, 0.5, 0.8, np.array([1.0, 0.0]))
        assert w[0, 0] == pytest.approx(0.12, abs=1e-15)

    def test_difference_between_discounting_modes(self):
        # long-run minus current choice values is (1-beta)*delta*E[v_next]
        model = make_random_model(6)
        v_next = np.random.default_rng(7).normal(size=model.num_states)
        gap = (choice_values(model.utility, model.transitions, 1.0, model.delta, v_next)
               - choice_values(model.utility, model.transitions, model.beta,
                               model.delta, v_next))
        expected = (1.0 - model.beta) * model.delta * (model.transitions @ v_next)
        assert_allclose(gap, expected, rtol=0, atol=1e-12)

    def test_dimension_mismatch(self):
        model = make_random_model(3)
        with pytest.raises(InvalidInputError):
            choice_values(model.utility, model.transitions, model.beta,
                          model.delta, np.zeros(model.num_states + 1))


class TestPerceivedValueStep:
    def test_beta_one_reduces_to_logsumexp(self):
        model = make_random_model(8, beta=1.0)
        v_next = np.random.default_rng(2).normal(size=model.num_states)
        w = choice_values(model.utility, model.transitions, 1.0, model.delta, v_next)
        p = ccp_from_values(w)
        v = perceived_value_step(w, p, model.transitions, 1.0, model.delta, v_next)
        expected = [logsumexp(w[:, x]) for x in range(model.num_states)]
        assert_allclose(v, expected, rtol=0, atol=1e-12)

    def test_terminal_step_is_logsumexp_of_utility(self):
        model = make_random_model(9)
        zero = np.zeros(model.num_states)
        w = choice_values(model.utility, model.transitions, model.beta,
                          model.delta, zero)
        p = ccp_from_values(w)
        v = perceived_value_step(w, p, model.transitions, model.beta,
                                 model.delta, zero)
        expected = [logsumexp(model.utility[:, x]) for x in range(model.num_states)]
        assert_allclose(v, expected, rtol=0, atol=1e-12)

    def test_both_algebraic_forms_agree(self):
        model = make_random_model(10)
        v_next = np.random.default_rng(3).normal(size=model.num_states)
        w = choice_values(model.utility, model.transitions, model.beta,
                          model.delta, v_next)
        p = ccp_from_values(w)
        lse_form = perceived_value_step(w, p, model.transitions, model.beta,
                                        model.delta, v_next)
        ref_form = (w[-1] - np.log(p[-1])
                    + (1 - model.beta) * model.delta
                    * (p * (model.transitions @ v_next)).sum(axis=0))
        assert_allclose(lse_form, ref_form, rtol=0, atol=1e-10)
        # check=True runs the same comparison internally
        perceived_value_step(w, p, model.transitions, model.beta,
                             model.delta, v_next, check=True)

    def test_inconsistent_probabilities_rejected(self):
        model = make_random_model(11)
        v_next = np.zeros(model.num_states)
        w = choice_values(model.utility, model.transitions, model.beta,
                          model.delta, v_next)
        bad = np.full_like(w, 1.0 / model.num_actions)
        with pytest.raises(InvalidInputError):
            perceived_value_step(w, bad, model.transitions, model.beta,
                                 model.delta, v_next, check=True)
        not_simplex = ccp_from_values(w) * 1.05
        with pytest.raises(InvalidInputError):
            perceived_value_step(w, not_simplex, model.transitions, model.beta,
                                 model.delta, v_next)


class TestSolveBackward:
    def test_single_period(self):
        model = make_random_model(20, horizon=1)
        sol = solve_backward(model)
        assert_allclose(sol.P[0], ccp_from_values(model.utility), rtol=0, atol=1e-14)
        expected_v = [logsumexp(model.utility[:, x]) for x in range(model.num_states)]
        assert_allclose(sol.V[0], expected_v, rtol=0, atol=1e-12)

    def test_terminal_values_equal_utility_exactly(self):
        model = make_random_model(21)
        sol = solve_backward(model)
        assert_array_equal(sol.W[-1], model.utility)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_beta_one_matches_independent_exponential_solver(self, seed):
        model = make_random_model(seed, num_states=4, num_actions=3,
                                  horizon=9, beta=1.0)
        sol = solve_backward(model)
        V, P = exponential_solution(model.utility, model.transitions,
                                    model.delta, model.horizon)
        assert_allclose(sol.V, V, rtol=0, atol=1e-10)
        assert_allclose(sol.P, P, rtol=0, atol=1e-10)

    def test_composition_of_public_steps(self):
        model = make_random_model(22, num_states=4, horizon=7)
        sol = solve_backward(model, check=True)
        v_next = np.zeros(model.num_states)
        for t in range(model.horizon - 1, -1, -1):
            w = choice_values(model.utility, model.transitions, model.beta,
                              model.delta, v_next)
            p = ccp_from_values(w)
            v_next = perceived_value_step(w, p, model.transitions, model.beta,
                                          model.delta, v_next, check=True)
            assert_allclose(sol.W[t], w, rtol=0, atol=1e-10)
            assert_allclose(sol.P[t], p, rtol=0, atol=1e-12)
            assert_allclose(sol.V[t], v_next, rtol=0, atol=1e-10)

    def test_canonical_design_ccps_interior_and_invertible(self):
        model = canonical_design(setting=1)
        sol = solve_backward(model, check=True)
        assert np.all(sol.P > 0.0) and np.all(sol.P < 1.0)
        assert_allclose(sol.P.sum(axis=1), 1.0, rtol=0, atol=1e-12)
        # same-state log CCP ratios must equal choice-value differences
        logp = np.log(sol.P)
        for k in range(model.num_actions):
            for l in range(model.num_actions):
                gap = (logp[:, k, :] - logp[:, l, :]) - (sol.W[:, k, :] - sol.W[:, l, :])
                assert np.abs(gap).max() < 1e-10

    def test_long_run_minus_current_identity(self):
        model = make_random_model(23, num_states=4, horizon=8)
        sol = solve_backward(model)
        for t in range(model.horizon):
            v_next = sol.V[t + 1] if t + 1 < model.horizon else np.zeros(model.num_states)
            long_run = choice_values(model.utility, model.transitions, 1.0,
                                     model.delta, v_next)
            expected = (1 - model.beta) * model.delta * (model.transitions @ v_next)
            assert_allclose(long_run - sol.W[t], expected, rtol=0, atol=1e-10)

    def test_terminal_ccps_invariant_to_column_shift(self):
        model = make_random_model(24)
        shifted_u = model.utility.copy()
        x = 1
        shifted_u[:, x] += 3.7
        shifted = ModelSpec(
            num_states=model.num_states, num_actions=model.num_actions,
            horizon=model.horizon, beta=model.beta, delta=model.delta,
            utility=shifted_u, transitions=model.transitions,
        )
        base = solve_backward(model)
        moved = solve_backward(shifted)
        assert_allclose(moved.P[-1, :, x], base.P[-1, :, x], rtol=0, atol=1e-12)


class TestValidation:
    def test_transition_rows_must_sum_to_one(self):
        f = np.full((2, 2, 2), 0.4)
        with pytest.raises(InvalidInputError):
            ModelSpec(num_states=2, num_actions=2, horizon=3, beta=0.9,
                      delta=0.9, utility=np.zeros((2, 2)), transitions=f)

    def test_negative_transition_rejected(self):
        f = np.array([[[1.2, -0.2], [0.5, 0.5]]] * 2)
        with pytest.raises(InvalidInputError):
            ModelSpec(num_states=2, num_actions=2, horizon=3, beta=0.9,
                      delta=0.9, utility=np.zeros((2, 2)), transitions=f)

    @pytest.mark.parametrize("beta,delta", [(0.0, 0.9), (1.2, 0.9),
                                            (0.9, 0.0), (0.9, 1.0)])
    def test_discount_domains(self, beta, delta):
        f = np.full((2, 2, 2), 0.5)
        with pytest.raises(InvalidInputError):
            ModelSpec(num_states=2, num_actions=2, horizon=3, beta=beta,
                      delta=delta, utility=np.zeros((2, 2)), transitions=f)

    def test_beta_exactly_one_allowed(self):
        f = np.full((2, 2, 2), 0.5)
        spec = ModelSpec(num_states=2, num_actions=2, horizon=3, beta=1.0,
                         delta=0.9, utility=np.zeros((2, 2)), transitions=f)
        assert spec.beta == 1.0

    def test_violated_equality_pair_rejected(self):
        f = np.full((2, 2, 2), 0.5)
        u = np.array([[1.0, 2.0], [3.0, 4.0]])
        with pytest.raises(InvalidInputError):
            ModelSpec(num_states=2, num_actions=2, horizon=3, beta=0.9,
                      delta=0.9, utility=u, transitions=f,
                      equality_pairs=[(0, 1, 0, 0)])

    def test_pair_indices_validated(self):
        f = np.full((2, 2, 2), 0.5)
        with pytest.raises(InvalidInputError):
            ModelSpec(num_states=2, num_actions=2, horizon=3, beta=0.9,
                      delta=0.9, utility=np.zeros((2, 2)), transitions=f,
                      equality_pairs=[(0, 1, 0, 5)])

    def test_value_solution_requires_simplex(self):
        bad_p = np.full((2, 2, 2), 0.4)
        with pytest.raises(InvalidInputError):
            ValueSolution(V=np.zeros((2, 2)), W=np.zeros((2, 2, 2)), P=bad_p)

    def test_model_arrays_are_read_only(self):
        model = make_random_model(30)
        with pytest.raises(ValueError):
            model.utility[0, 0] = 99.0
