from __future__ import annotations

import sys

import numpy as np
import pytest

from regime_mpc.market import MarketModel, RegimeParameters
from regime_mpc.markov import TransitionMatrix

MICEX = [[0.96, 0.24], [0.04, 0.76]]


def random_chain(rng: np.random.Generator, v: int) -> TransitionMatrix:
    return TransitionMatrix(rng.dirichlet(np.ones(v), size=v).T)


def random_model(rng: np.random.Generator, v: int, n: int, r1: float = 0.001, r2: float = 0.003) -> MarketModel:
    regimes = []
    for _ in range(v):
        mu = rng.uniform(-0.01, 0.03, n)
        sigma = rng.uniform(-0.02, 0.05, (n, n))
        regimes.append(RegimeParameters(mu, sigma))
    return MarketModel(tuple(regimes), r1=r1, r2=r2)


def random_theta(rng: np.random.Generator, v: int) -> np.ndarray:
    theta = np.zeros(v)
    theta[rng.integers(v)] = 1.0
    return theta


@pytest.fixture
def micex() -> TransitionMatrix:
    return TransitionMatrix(np.array(MICEX))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    module = sys.modules.get("test_acceptance")
    RESULTS = getattr(module, "RESULTS", None)
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(RESULTS):
        passed, detail = RESULTS[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")


def random_qp(rng: np.random.Generator, M: int, K: int | None = None):
    """SPD ``H``, linear term and two-sided rows that admit a known feasible point."""
    B = rng.normal(size=(M, M))
    H = B @ B.T + 0.1 * np.eye(M)
    c = rng.normal(scale=3.0, size=M)
    K = int(rng.integers(1, 2 * M + 1)) if K is None else K
    A = rng.normal(size=(K, M))
    inside = rng.normal(scale=0.5, size=M)
    centre = A @ inside
    lower = centre - rng.uniform(0.05, 1.0, K)
    upper = centre + rng.uniform(0.05, 1.0, K)
    # some rows one-sided
    lower[rng.random(K) < 0.2] = -np.inf
    upper[rng.random(K) < 0.2] = np.inf
    return H, c, A, lower, upper
