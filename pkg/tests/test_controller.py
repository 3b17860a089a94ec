import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from regime_mpc.controller import (
    ConstraintSpec,
    PredictionConfig,
    assemble_qp,
    build_constraints,
    build_F,
    build_G,
    build_H,
    extract_control,
    mpc_step,
    q_recursions,
    r1_coefficient,
    single_step_constraint,
    solve_mpc,
)
from regime_mpc.market import MarketModel, RegimeParameters
from regime_mpc.markov import TransitionMatrix, propagate

from conftest import random_chain, random_model, random_theta

ONE = TransitionMatrix(np.eye(1))


def tiny_model(mu=0.001, sigma=0.01, r1=0.0, r2=0.0):
    return MarketModel((RegimeParameters([mu], [[sigma]]),), r1=r1, r2=r2)


def tiny_cfg(m=1, rho=0.1):
    return PredictionConfig.constant(m, 1, cost=1e-4, rho=rho, mu0=0.0015)


class TestPredictionConfig:
    def test_constant_benchmark(self):
        cfg = tiny_cfg()
        assert cfg.v0(0) == 1.0 and cfg.v0(1) == pytest.approx(1.0015, abs=1e-15)

    def test_series_benchmark_bounds(self):
        cfg = PredictionConfig(2, np.eye(2), 0.1, [1.0, 1.1, 1.2])
        with pytest.raises(IndexError):
            cfg.v0(3)

    def test_rejects_negative_rho(self):
        with pytest.raises(ValueError):
            PredictionConfig(1, np.eye(2), -0.1, [1.0, 1.0])

    def test_rejects_non_pd_cost(self):
        cfg = PredictionConfig(1, np.diag([1.0, 0.0]), 0.1, [1.0, 1.0])
        with pytest.raises(ValueError, match="positive definite"):
            build_H(ONE, [1.0], tiny_model(), cfg)


class TestR1Coefficient:
    def test_default_parameters(self):
        assert r1_coefficient(tiny_cfg(), 0, 1) == pytest.approx(2.103, abs=1e-15)

    def test_zero_rho(self):
        cfg = PredictionConfig(1, np.eye(2), 0.0, [0.5, 0.5])
        assert r1_coefficient(cfg, 0, 1) == 1.0

    def test_unit_benchmark(self):
        cfg = PredictionConfig(1, np.eye(2), 0.2, [1.0, 1.0])
        assert r1_coefficient(cfg, 0, 1) == pytest.approx(2.2, abs=1e-15)

    def test_range(self):
        with pytest.raises(ValueError):
            r1_coefficient(tiny_cfg(m=2), 0, 3)


class TestQRecursions:
    def test_unit_growth(self):
        rec = q_recursions(tiny_cfg(m=6), tiny_model(), 0)
        np.testing.assert_array_equal(rec.q1, np.arange(1, 8))

    def test_constant_r1(self):
        cfg = PredictionConfig(5, np.eye(2), 0.1, np.ones(10))
        rec = q_recursions(cfg, tiny_model(), 0)
        np.testing.assert_allclose(rec.q2, 2.1 * np.arange(1, 6), rtol=1e-15)

    def test_growth_example(self):
        rec = q_recursions(tiny_cfg(m=3), tiny_model(r1=0.01, r2=0.01), 0)
        assert rec.q1[2] == pytest.approx(3.06070401, abs=1e-14)
        assert rec.q1[0] == 1.0
        assert rec.q2[0] == rec.r1_coeffs[-1]

    @given(st.integers(1, 12), st.floats(0.0, 0.05), st.floats(0.0, 1.0), st.floats(-0.01, 0.01), st.integers(0, 50))
    def test_closed_forms(self, m, r1, rho, mu0, k):
        cfg = PredictionConfig.constant(m, 1, rho=rho, mu0=mu0)
        model = tiny_model(r1=r1, r2=r1)
        rec = q_recursions(cfg, model, k)
        A = 1.0 + r1
        for s in range(m + 1):
            assert rec.q1[s] == pytest.approx(sum(A ** (2 * j) for j in range(s + 1)), rel=1e-13)
        R1 = [2.0 * cfg.v0(k + i) + rho for i in range(1, m + 1)]
        for t in range(1, m + 1):
            direct = sum(A ** (i - t) * R1[i - 1] for i in range(t, m + 1))
            assert rec.q2[m - t] == pytest.approx(direct, rel=1e-13)
        assert np.all(np.diff(rec.q1) > 0)


class TestBlocks:
    def test_single_step_example(self):
        cfg, model = tiny_cfg(), tiny_model()
        np.testing.assert_allclose(build_H(ONE, [1.0], model, cfg), [[2.01e-4, 0.0], [0.0, 1e-4]], atol=1e-19)
        np.testing.assert_allclose(build_G(ONE, [1.0], model, cfg), [0.001, 0.0], atol=1e-19)
        np.testing.assert_allclose(build_F(ONE, [1.0], model, cfg), [0.002103, 0.0], atol=1e-18)

    def test_no_signal_gives_block_diagonal_costs(self):
        rng = np.random.default_rng(0)
        regimes = tuple(RegimeParameters(np.full(2, 0.001), np.zeros((2, 2))) for _ in range(2))
        model = MarketModel(regimes, r1=0.001, r2=0.001)
        costs = [np.diag(rng.uniform(1e-4, 1e-3, 3)) for _ in range(3)]
        cfg = PredictionConfig(3, lambda k, i: costs[i], 0.1, lambda k: 1.0)
        H = build_H(random_chain(rng, 2), [1.0, 0.0], model, cfg)
        expected = np.zeros((9, 9))
        for i, R in enumerate(costs):
            expected[3 * i : 3 * i + 3, 3 * i : 3 * i + 3] = R
        np.testing.assert_array_equal(H, expected)
        np.testing.assert_array_equal(build_G(random_chain(rng, 2), [1.0, 0.0], model, cfg), np.zeros(9))
        np.testing.assert_array_equal(build_F(random_chain(rng, 2), [1.0, 0.0], model, cfg), np.zeros(9))

    def test_horizon_one_reduction(self):
        rng = np.random.default_rng(4)
        P, model = random_chain(rng, 3), random_model(rng, 3, 2)
        theta = random_theta(rng, 3)
        cfg = PredictionConfig.constant(1, 2)
        p = propagate(P, theta, 1)
        H = cfg.R(0, 0) + np.einsum("q,qij->ij", p, model.second_moment_blocks())
        mean_b0 = p @ model.b0_matrix()
        np.testing.assert_allclose(build_H(P, theta, model, cfg), H, rtol=1e-14, atol=1e-18)
        np.testing.assert_allclose(build_G(P, theta, model, cfg), model.growth * mean_b0, rtol=1e-14)
        np.testing.assert_allclose(build_F(P, theta, model, cfg), r1_coefficient(cfg, 0, 1) * mean_b0, rtol=1e-14)

    def test_regime_count_mismatch(self):
        with pytest.raises(ValueError, match="regimes"):
            build_H(TransitionMatrix(np.eye(2)), [1.0, 0.0], tiny_model(), tiny_cfg())

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 4), st.integers(1, 5), st.integers(1, 10), st.integers(0, 2**32 - 1))
    def test_symmetric_positive_definite(self, v, n, m, seed):
        rng = np.random.default_rng(seed)
        P, model = random_chain(rng, v), random_model(rng, v, n)
        cfg = PredictionConfig.constant(m, n)
        H = build_H(P, random_theta(rng, v), model, cfg)
        assert H.shape == (m * (n + 1),) * 2
        assert np.max(np.abs(H - H.T)) < 1e-10
        assert np.linalg.eigvalsh(H).min() > 0


class TestConstraints:
    def test_operator_shape(self):
        S = single_step_constraint(2)
        np.testing.assert_array_equal(S, [[1, 0, 0], [0, 1, 0], [-1, -1, 1], [0, 0, 1]])

    def test_default_limits(self):
        spec = ConstraintSpec([-0.6, -0.6], [3, 3, 3, 3])
        op, lo, up = build_constraints(spec, 1.0, 2, 1)
        np.testing.assert_allclose(lo, [-0.6, -0.6, -1.0, 0.0])
        np.testing.assert_allclose(up, [3.0, 3.0, 2.0, 3.0])

    def test_long_only_no_borrowing(self):
        spec = ConstraintSpec([0.0, 0.0], [1.0, 1.0, 1.0, 0.0])
        _, lo, up = build_constraints(spec, 1.0, 2, 1)
        assert lo[0] == lo[1] == lo[3] == 0.0
        assert up[3] == 0.0

    def test_scales_with_wealth(self):
        spec = ConstraintSpec.uniform(3, -0.6, 3.0)
        _, lo1, up1 = build_constraints(spec, 1.0, 3, 2)
        _, lo2, up2 = build_constraints(spec, 2.0, 3, 2)
        np.testing.assert_array_equal(lo2, 2 * lo1)
        np.testing.assert_array_equal(up2, 2 * up1)

    def test_later_blocks_unconstrained_by_default(self):
        op, lo, up = build_constraints(ConstraintSpec.uniform(2, -0.6, 3.0), 1.0, 2, 3)
        assert op.shape == (12, 9)
        assert not op[4:].any() and not lo[4:].any() and not up[4:].any()
        assert not op[:, 3:].any()

    def test_full_horizon_repeats_block(self):
        op, lo, up = build_constraints(ConstraintSpec.uniform(2, -0.6, 3.0), 1.0, 2, 3, mode="full-horizon")
        S = single_step_constraint(2)
        for b in range(3):
            np.testing.assert_array_equal(op[4 * b : 4 * b + 4, 3 * b : 3 * b + 3], S)
            np.testing.assert_array_equal(lo[4 * b : 4 * b + 4], lo[:4])

    @pytest.mark.parametrize("V", [0.0, -1.0, np.nan])
    def test_wealth_must_be_positive(self, V):
        with pytest.raises(ValueError):
            build_constraints(ConstraintSpec.uniform(1, -0.6, 3.0), V, 1, 1)

    def test_spec_validation(self):
        with pytest.raises(ValueError, match="exceeds"):
            ConstraintSpec([0.5], [0.4, 1.0, 1.0])
        with pytest.raises(ValueError, match="entries"):
            ConstraintSpec([0.0], [1.0, 1.0])
        with pytest.raises(ValueError, match="caps"):
            ConstraintSpec([0.0], [1.0, -1.0, 1.0])

    @given(
        st.integers(1, 5),
        st.floats(-2.0, 0.0),
        st.floats(0.0, 5.0),
        st.floats(1.0, 5.0),
        st.floats(0.0, 5.0),
        st.floats(0.01, 100.0),
    )
    def test_zero_control_feasible(self, n, beta, gamma, gamma0, gamma_b, V):
        spec = ConstraintSpec(np.full(n, beta), np.concatenate([np.full(n, gamma), [gamma0, gamma_b]]))
        op, lo, up = build_constraints(spec, V, n, 2, mode="full-horizon")
        zero = op @ np.zeros(op.shape[1])
        assert np.all(lo <= zero) and np.all(zero <= up)


class TestAssembly:
    def test_linear_term_example(self):
        qp = assemble_qp(ONE, [1.0], tiny_model(), tiny_cfg(), ConstraintSpec.uniform(1, -0.6, 3.0), 1.0)
        np.testing.assert_allclose(qp.linear, [-0.000103, 0.0], atol=1e-18)

    def test_no_signal_stays_in_cash(self):
        model = tiny_model(mu=0.0005, sigma=0.0, r1=0.0005, r2=0.0005)
        cfg = PredictionConfig(2, 1e-4 * np.eye(2), 0.0, lambda k: 1.0)
        qp = assemble_qp(ONE, [1.0], model, cfg, ConstraintSpec.uniform(1, -0.6, 3.0), 1.0)
        np.testing.assert_array_equal(qp.linear, np.zeros(4))
        np.testing.assert_array_equal(mpc_step(ONE, [1.0], model, cfg, ConstraintSpec.uniform(1, -0.6, 3.0), 1.0), [0.0, 0.0])

    def test_single_step_closed_form(self):
        u = mpc_step(ONE, [1.0], tiny_model(), tiny_cfg(), ConstraintSpec.uniform(1, -0.6, 3.0), 1.0)
        assert u[0] == pytest.approx(0.000103 / (2 * 2.01e-4), rel=1e-12)
        assert u[0] == pytest.approx(0.25621890547263737, rel=1e-12)
        assert u[1] == pytest.approx(0.0, abs=1e-15)

    def test_applied_control_respects_limits(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            v, n, m = 2, int(rng.integers(1, 4)), int(rng.integers(1, 6))
            P, model = random_chain(rng, v), random_model(rng, v, n)
            spec = ConstraintSpec.uniform(n, -0.6, 3.0)
            V = float(rng.uniform(0.5, 2.0))
            u = mpc_step(P, random_theta(rng, v), model, PredictionConfig.constant(m, n), spec, V)
            u0 = V - u[:n].sum() + u[n]
            slack = np.concatenate([u[:n] - spec.beta * V, 3.0 * V - u[:n], [u0, 3.0 * V - u0, u[n], 3.0 * V - u[n]]])
            assert slack.min() >= -1e-8

    def test_warm_start_reuses_solution(self):
        rng = np.random.default_rng(2)
        P, model = random_chain(rng, 2), random_model(rng, 2, 3)
        cfg, spec = PredictionConfig.constant(4, 3), ConstraintSpec.uniform(3, -0.6, 3.0)
        _, cold = solve_mpc(P, [1.0, 0.0], model, cfg, spec, 1.0)
        _, warm = solve_mpc(P, [1.0, 0.0], model, cfg, spec, 1.0, warm_start=cold)
        np.testing.assert_allclose(warm.minimizer, cold.minimizer, atol=1e-10)


class TestExtractControl:
    def test_first_block(self):
        np.testing.assert_array_equal(extract_control([1, 2, 3, 4, 5, 6], 1), [1, 2])

    def test_single_block_is_identity(self):
        np.testing.assert_array_equal(extract_control([1.0, 2.0, 3.0], 2), [1.0, 2.0, 3.0])

    def test_zero(self):
        np.testing.assert_array_equal(extract_control(np.zeros(6), 2), np.zeros(3))

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            extract_control([1, 2, 3], 1)
