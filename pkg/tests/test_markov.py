import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from regime_mpc.markov import (
    TransitionMatrix,
    UnvisitedStateWarning,
    estimate_transition_matrix,
    indicator,
    joint_occupancy,
    martingale_covariance,
    propagate,
    simulate_chain,
)

from conftest import MICEX, random_chain


@st.composite
def chains(draw, max_v=4):
    v = draw(st.integers(1, max_v))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    P = random_chain(rng, v)
    theta = rng.dirichlet(np.ones(v))
    return P, theta


class TestTransitionMatrix:
    def test_rejects_row_stochastic(self):
        with pytest.raises(ValueError, match="column"):
            TransitionMatrix(np.array([[0.9, 0.1], [0.3, 0.7]]))

    def test_from_rows_transposes(self):
        P = TransitionMatrix.from_rows([[0.9, 0.1], [0.3, 0.7]])
        np.testing.assert_array_equal(P.entries, [[0.9, 0.3], [0.1, 0.7]])

    @pytest.mark.parametrize("bad", [[[1.2, 0.0], [-0.2, 1.0]], [[1.0]] * 2, [[0.5, np.nan], [0.5, 1.0]]])
    def test_rejects_invalid(self, bad):
        with pytest.raises(ValueError):
            TransitionMatrix(np.array(bad, dtype=float))

    def test_entries_are_read_only(self, micex):
        with pytest.raises(ValueError):
            micex.entries[0, 0] = 0.5

    def test_micex_stationary(self, micex):
        np.testing.assert_allclose(micex.stationary(), [6 / 7, 1 / 7], atol=1e-14)


class TestPropagate:
    def test_one_step(self, micex):
        np.testing.assert_allclose(propagate(micex, [1, 0], 1), [0.96, 0.04], atol=1e-15)

    def test_two_steps(self, micex):
        np.testing.assert_allclose(propagate(micex, [1, 0], 2), [0.9312, 0.0688], atol=1e-15)

    def test_zero_steps_is_identity(self, micex):
        np.testing.assert_array_equal(propagate(micex, [0.3, 0.7], 0), [0.3, 0.7])

    def test_dimension_mismatch(self, micex):
        with pytest.raises(ValueError, match="shape"):
            propagate(micex, [1.0, 0.0, 0.0], 1)

    def test_negative_t(self, micex):
        with pytest.raises(ValueError):
            propagate(micex, [1.0, 0.0], -1)

    def test_simplex_over_long_horizon(self, micex):
        p = propagate(micex, [0.0, 1.0], 10_000)
        assert p.min() >= 0.0
        assert abs(p.sum() - 1.0) <= 1e-12

    @given(chains(), st.integers(0, 30), st.integers(0, 30))
    def test_tower_property(self, case, a, b):
        P, theta = case
        two_stage = propagate(P, propagate(P, theta, a), b)
        np.testing.assert_allclose(two_stage, propagate(P, theta, a + b), atol=1e-10)

    @given(chains(), st.integers(0, 200))
    def test_stays_on_simplex(self, case, t):
        P, theta = case
        p = propagate(P, theta, t)
        assert p.min() >= 0.0
        assert abs(p.sum() - 1.0) <= 1e-12


class TestMartingaleCovariance:
    def test_micex_from_calm(self, micex):
        expected = np.array([[0.0384, -0.0384], [-0.0384, 0.0384]])
        np.testing.assert_allclose(martingale_covariance(micex, [1, 0]), expected, atol=1e-15)

    def test_identity_chain_has_no_innovation(self):
        P = TransitionMatrix(np.eye(3))
        for q in (1, 2, 3):
            np.testing.assert_array_equal(martingale_covariance(P, indicator(q, 3)), np.zeros((3, 3)))

    @given(chains())
    def test_structure(self, case):
        P, theta = case
        C = martingale_covariance(P, theta)
        np.testing.assert_allclose(C, C.T, atol=0)
        assert np.max(np.abs(C.sum(axis=0))) <= 1e-12
        assert np.max(np.abs(C.sum(axis=1))) <= 1e-12
        assert np.linalg.eigvalsh(C).min() >= -1e-12

    def test_matches_sampled_innovations(self):
        rng = np.random.default_rng(11)
        P = random_chain(rng, 3)
        theta = np.array([0.0, 1.0, 0.0])
        samples = 1_000_000
        cdf = np.cumsum(P.entries[:, 1])
        nxt = np.minimum((rng.random(samples)[:, None] >= cdf[None, :]).sum(axis=1), 2)
        nu = np.eye(3)[nxt] - P.entries @ theta
        outer = nu[:, :, None] * nu[:, None, :]
        mean = outer.mean(axis=0)
        se = outer.std(axis=0, ddof=1) / np.sqrt(samples)
        C = martingale_covariance(P, theta)
        assert np.all(np.abs(mean - C) <= 3 * se + 1e-12)


class TestJointOccupancy:
    def test_micex_example(self, micex):
        expected = [[0.9216, 0.0384], [0.0096, 0.0304]]
        np.testing.assert_allclose(joint_occupancy(micex, [1, 0], 1, 2), expected, atol=1e-15)

    def test_equal_times_is_diagonal(self, micex):
        theta = [0.25, 0.75]
        np.testing.assert_allclose(joint_occupancy(micex, theta, 3, 3), np.diag(propagate(micex, theta, 3)))

    def test_frozen_chain(self):
        P = TransitionMatrix(np.eye(2))
        np.testing.assert_array_equal(joint_occupancy(P, [1, 0], 1, 4), [[1, 0], [0, 0]])

    def test_t_after_f(self, micex):
        with pytest.raises(ValueError):
            joint_occupancy(micex, [1, 0], 3, 2)

    @given(chains(), st.integers(0, 8), st.integers(0, 8))
    def test_marginals(self, case, t, gap):
        P, theta = case
        J = joint_occupancy(P, theta, t, t + gap)
        assert J.min() >= 0.0
        np.testing.assert_allclose(J.sum(axis=1), propagate(P, theta, t), atol=1e-12)
        np.testing.assert_allclose(J.sum(axis=0), propagate(P, theta, t + gap), atol=1e-12)


class TestEstimation:
    def test_counts_example(self):
        P = estimate_transition_matrix([1, 1, 2, 2, 1], 2)
        np.testing.assert_array_equal(P.entries, [[0.5, 0.5], [0.5, 0.5]])

    def test_single_state(self):
        np.testing.assert_array_equal(estimate_transition_matrix([1, 1, 1, 1], 1).entries, [[1.0]])

    def test_unvisited_state_becomes_self_loop(self):
        with pytest.warns(UnvisitedStateWarning, match="regime 2"):
            P = estimate_transition_matrix([1, 1, 1, 1], 2)
        np.testing.assert_array_equal(P.entries, [[1.0, 0.0], [0.0, 1.0]])

    def test_final_state_only_counts_as_unvisited_source(self):
        with pytest.warns(UnvisitedStateWarning):
            P = estimate_transition_matrix([1, 1, 2], 2)
        np.testing.assert_array_equal(P.entries[:, 1], [0.0, 1.0])

    @pytest.mark.parametrize("seq", [[1], [0, 1], [1, 3]])
    def test_bad_sequences(self, seq):
        with pytest.raises(ValueError):
            estimate_transition_matrix(seq, 2)

    def test_error_shrinks_with_length(self, micex):
        rng = np.random.default_rng(5)
        path = simulate_chain(micex, 1, 100_000, rng)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            short = estimate_transition_matrix(path[:1_000], 2)
            long = estimate_transition_matrix(path, 2)
        truth = np.array(MICEX)
        assert np.abs(long.entries - truth).max() < np.abs(short.entries - truth).max()
        assert np.abs(long.entries - truth).max() < 0.01


class TestSimulateChain:
    def test_reproducible(self, micex):
        a = simulate_chain(micex, 1, 500, np.random.default_rng(3))
        b = simulate_chain(micex, 1, 500, np.random.default_rng(3))
        np.testing.assert_array_equal(a, b)

    def test_labels_and_start(self, micex):
        path = simulate_chain(micex, 2, 100, np.random.default_rng(0))
        assert path[0] == 2 and path.size == 101
        assert set(np.unique(path)) <= {1, 2}

    def test_bad_start(self, micex):
        with pytest.raises(ValueError):
            simulate_chain(micex, 3, 10, np.random.default_rng(0))


def test_indicator():
    np.testing.assert_array_equal(indicator(2, 3), [0, 1, 0])
    with pytest.raises(ValueError):
        indicator(0, 3)
