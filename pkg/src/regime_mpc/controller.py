"""
Receding-horizon controller for benchmark tracking under regime switching.

At step ``k`` the controller stacks the predictive controls
``U = [u(k), u(k+1), ..., u(k+m-1)]`` (each of length ``n + 1``) and solves

    minimize    (2 V(k) G - F) U + U^T H U
    subject to  lower <= S_bar U <= upper

Only ``u(k)``, the first block of the minimizer, is applied.

``H``, ``G`` and ``F`` are built from closed-form expectations over the
regime chain, using the scalar accumulators

    Q1(s) = A^2 Q1(s-1) + 1,            Q1(0) = 1
    Q2(s) = A Q2(s-1) + R1(k, m-s),     Q2(0) = R1(k, m)
    R1(k, t) = 2 V0(k+t) + rho(k, t),   A = 1 + r1

Off-diagonal blocks of ``H`` use the joint regime probabilities
``diag(P^t theta) (P^(f-t))^T`` for ``t < f``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Literal, Sequence, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray

from . import qp as qp_solver
from .errors import InfeasibleError
from .market import MarketModel
from .markov import MatrixLike, as_transition_matrix, joint_occupancy, propagate

ConstraintMode = Literal["first-block", "full-horizon"]
CostLike = Union[ArrayLike, Callable[[int, int], ArrayLike]]
WeightLike = Union[float, Callable[[int, int], float]]
BenchmarkLike = Union[Sequence[float], NDArray[np.float64], Callable[[int], float]]


@dataclass(frozen=True)
class PredictionConfig:
    """Horizon and weights of the tracking criterion.

    ``control_cost`` is either a constant ``(n+1, n+1)`` matrix or a callable
    ``(k, i) -> R(k, i)`` for offsets ``i = 0..m-1``. ``rho`` is a constant
    or a callable ``(k, i) -> rho(k, i)`` for ``i = 1..m``. ``benchmark`` is a
    precomputed series indexed by absolute step, or a callable.
    """

    horizon: int
    control_cost: CostLike
    rho: WeightLike
    benchmark: BenchmarkLike

    def __post_init__(self) -> None:
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise ValueError("prediction horizon must be a positive integer")
        if not callable(self.control_cost):
            R = np.array(self.control_cost, dtype=float)
            R.setflags(write=False)
            object.__setattr__(self, "control_cost", R)
        if not callable(self.benchmark):
            series = np.array(self.benchmark, dtype=float)
            if series.ndim != 1 or np.any(series <= 0):
                raise ValueError("benchmark series must be a 1-D array of positive values")
            series.setflags(write=False)
            object.__setattr__(self, "benchmark", series)
        if not callable(self.rho) and self.rho < 0:
            raise ValueError("rho must be non-negative")

    def R(self, k: int, i: int) -> NDArray[np.float64]:
        if callable(self.control_cost):
            return np.asarray(self.control_cost(k, i), dtype=float)
        return self.control_cost

    def rho_at(self, k: int, i: int) -> float:
        value = float(self.rho(k, i)) if callable(self.rho) else float(self.rho)
        if value < 0:
            raise ValueError(f"rho({k}, {i}) is negative")
        return value

    def v0(self, k: int) -> float:
        if callable(self.benchmark):
            value = float(self.benchmark(k))
        else:
            if not 0 <= k < self.benchmark.size:
                raise IndexError(f"benchmark series has no value for step {k}")
            value = float(self.benchmark[k])
        if value <= 0:
            raise ValueError(f"benchmark must be positive, got {value} at step {k}")
        return value

    @classmethod
    def constant(
        cls,
        horizon: int,
        n: int,
        cost: float = 1e-4,
        rho: float = 0.1,
        mu0: float = 0.0015,
        v0_init: float = 1.0,
    ) -> "PredictionConfig":
        """Constant weights ``R = cost * I`` and a geometric benchmark."""
        return cls(
            horizon=horizon,
            control_cost=cost * np.eye(n + 1),
            rho=rho,
            benchmark=lambda k: v0_init * (1.0 + mu0) ** k,
        )


@dataclass(frozen=True)
class ConstraintSpec:
    """Wealth-proportional trading limits.

    ``beta`` (n,) are lower fractions for the risky positions. ``gamma``
    (n+2,) holds the upper fractions for the risky positions, then the cap on
    the risk-free holding, then the cap on borrowing.
    """

    beta: NDArray[np.float64]
    gamma: NDArray[np.float64]

    def __post_init__(self) -> None:
        beta = np.array(self.beta, dtype=float, ndmin=1)
        gamma = np.array(self.gamma, dtype=float, ndmin=1)
        n = beta.size
        if gamma.size != n + 2:
            raise ValueError(f"gamma needs {n + 2} entries (assets, risk-free cap, borrowing cap), got {gamma.size}")
        if np.any(beta > gamma[:n]):
            bad = int(np.flatnonzero(beta > gamma[:n])[0])
            raise ValueError(f"beta[{bad}]={beta[bad]} exceeds gamma[{bad}]={gamma[bad]}")
        if gamma[n] < 0 or gamma[n + 1] < 0:
            raise ValueError("risk-free and borrowing caps must be non-negative")
        beta.setflags(write=False)
        gamma.setflags(write=False)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "gamma", gamma)

    @property
    def n(self) -> int:
        return self.beta.size

    @classmethod
    def uniform(cls, n: int, beta: float, gamma: float) -> "ConstraintSpec":
        return cls(np.full(n, beta), np.full(n + 2, gamma))


@dataclass(frozen=True)
class QuadraticProgram:
    H: NDArray[np.float64]
    linear: NDArray[np.float64]
    constraint_operator: NDArray[np.float64]
    lower: NDArray[np.float64]
    upper: NDArray[np.float64]

    def objective(self, U: ArrayLike) -> float:
        U = np.asarray(U, dtype=float)
        return float(U @ self.H @ U + self.linear @ U)

    def solve(self, **kwargs) -> qp_solver.QPSolution:
        return qp_solver.solve(self.H, self.linear, self.constraint_operator, self.lower, self.upper, **kwargs)


@dataclass(frozen=True)
class BlockRecursionState:
    """``q1[s] = Q1(s)`` for s = 0..m, ``q2[s] = Q2(s)`` for s = 0..m-1,
    ``r1_coeffs[t-1] = R1(k, t)`` for t = 1..m."""

    q1: NDArray[np.float64]
    q2: NDArray[np.float64]
    r1_coeffs: NDArray[np.float64]
    a: float


def r1_coefficient(cfg: PredictionConfig, k: int, t: int) -> float:
    if not 1 <= t <= cfg.horizon:
        raise ValueError(f"t={t} outside 1..{cfg.horizon}")
    return 2.0 * cfg.v0(k + t) + cfg.rho_at(k, t)


def q_recursions(cfg: PredictionConfig, model: MarketModel, k: int) -> BlockRecursionState:
    m = cfg.horizon
    A = model.growth
    r1 = np.array([r1_coefficient(cfg, k, t) for t in range(1, m + 1)])
    q1 = np.empty(m + 1)
    q1[0] = 1.0
    for s in range(1, m + 1):
        q1[s] = A * A * q1[s - 1] + 1.0
    q2 = np.empty(m)
    q2[0] = r1[m - 1]
    for s in range(1, m):
        q2[s] = A * q2[s - 1] + r1[m - s - 1]
    return BlockRecursionState(q1=q1, q2=q2, r1_coeffs=r1, a=A)


def _check_cost(R: NDArray[np.float64], n: int, k: int, i: int) -> None:
    if R.shape != (n + 1, n + 1):
        raise ValueError(f"R({k}, {i}) has shape {R.shape}, expected ({n + 1}, {n + 1})")
    if np.max(np.abs(R - R.T)) > 1e-12 * max(1.0, np.max(np.abs(R))):
        raise ValueError(f"R({k}, {i}) is not symmetric")
    if np.linalg.eigvalsh(R)[0] <= 0:
        raise ValueError(f"R({k}, {i}) is not positive definite")


def _blocks(chain: MatrixLike, theta: ArrayLike, model: MarketModel, cfg: PredictionConfig, k: int):
    P = as_transition_matrix(chain)
    if P.v != model.v:
        raise ValueError(f"chain has {P.v} regimes but market model has {model.v}")
    m, n = cfg.horizon, model.n
    d = n + 1
    rec = q_recursions(cfg, model, k)
    A = rec.a
    B0 = model.b0_matrix()
    second = model.second_moment_blocks()
    probs = [propagate(P, theta, t) for t in range(m + 1)]

    H = np.zeros((m * d, m * d))
    G = np.zeros(m * d)
    F = np.zeros(m * d)
    for t in range(1, m + 1):
        sl_t = slice((t - 1) * d, t * d)
        R = cfg.R(k, t - 1)
        _check_cost(R, n, k, t - 1)
        H[sl_t, sl_t] = R + rec.q1[m - t] * np.einsum("q,qij->ij", probs[t], second)
        mean_b0 = probs[t] @ B0
        G[sl_t] = A**t * rec.q1[m - t] * mean_b0
        F[sl_t] = rec.q2[m - t] * mean_b0
        for f in range(t + 1, m + 1):
            sl_f = slice((f - 1) * d, f * d)
            joint = joint_occupancy(P, theta, t, f)
            block = A ** (f - t) * rec.q1[m - f] * (B0.T @ joint @ B0)
            H[sl_t, sl_f] = block
            H[sl_f, sl_t] = block.T
    return H, G, F


def build_H(chain, theta, model, cfg, k: int = 0) -> NDArray[np.float64]:
    return _blocks(chain, theta, model, cfg, k)[0]


def build_G(chain, theta, model, cfg, k: int = 0) -> NDArray[np.float64]:
    return _blocks(chain, theta, model, cfg, k)[1]


def build_F(chain, theta, model, cfg, k: int = 0) -> NDArray[np.float64]:
    return _blocks(chain, theta, model, cfg, k)[2]


def single_step_constraint(n: int) -> NDArray[np.float64]:
    """``(n+2, n+1)`` operator: asset rows, the risk-free row, the borrowing row."""
    S = np.zeros((n + 2, n + 1))
    S[:n, :n] = np.eye(n)
    S[n, :n] = -1.0
    S[n, n] = 1.0
    S[n + 1, n] = 1.0
    return S


def build_constraints(
    spec: ConstraintSpec, V: float, n: int, m: int, mode: ConstraintMode = "first-block"
) -> tuple[NDArray[np.float64], NDArray[np.float64], NDArray[np.float64]]:
    """Stacked constraint operator and bounds for the predictive controls.

    In ``"first-block"`` mode only ``u(k)`` is constrained; later blocks get
    zero rows with zero bounds. ``"full-horizon"`` repeats the first-block
    rows (with bounds from the current wealth) for every block.
    """
    if not V > 0:
        raise ValueError(f"wealth must be positive to build constraints, got {V}")
    if spec.n != n:
        raise ValueError(f"constraint spec covers {spec.n} assets, model has {n}")
    if mode not in ("first-block", "full-horizon"):
        raise ValueError(f"unknown constraint mode {mode!r}")
    S = single_step_constraint(n)
    u_min = np.concatenate([spec.beta * V, [-V, 0.0]])
    u_max = np.concatenate([spec.gamma[:n] * V, [spec.gamma[n] * V - V, spec.gamma[n + 1] * V]])
    rows, cols = n + 2, n + 1
    op = np.zeros((m * rows, m * cols))
    lower = np.zeros(m * rows)
    upper = np.zeros(m * rows)
    blocks = range(m) if mode == "full-horizon" else range(1)
    for b in blocks:
        op[b * rows : (b + 1) * rows, b * cols : (b + 1) * cols] = S
        lower[b * rows : (b + 1) * rows] = u_min
        upper[b * rows : (b + 1) * rows] = u_max
    return op, lower, upper


def assemble_qp(
    chain,
    theta,
    model: MarketModel,
    cfg: PredictionConfig,
    spec: ConstraintSpec,
    V: float,
    k: int = 0,
    mode: ConstraintMode = "first-block",
) -> QuadraticProgram:
    H, G, F = _blocks(chain, theta, model, cfg, k)
    op, lower, upper = build_constraints(spec, V, model.n, cfg.horizon, mode)
    return QuadraticProgram(H=H, linear=2.0 * V * G - F, constraint_operator=op, lower=lower, upper=upper)


def extract_control(U: ArrayLike, n: int) -> NDArray[np.float64]:
    """First ``n + 1`` entries of the stacked predictive controls."""
    U = np.asarray(U, dtype=float).ravel()
    if U.size == 0 or U.size % (n + 1):
        raise ValueError(f"stacked control length {U.size} is not a multiple of {n + 1}")
    return U[: n + 1].copy()


def solve_mpc(
    chain,
    theta,
    model: MarketModel,
    cfg: PredictionConfig,
    spec: ConstraintSpec,
    V: float,
    k: int = 0,
    mode: ConstraintMode = "first-block",
    warm_start: qp_solver.QPSolution | None = None,
    tol: float = 1e-9,
) -> tuple[QuadraticProgram, qp_solver.QPSolution]:
    problem = assemble_qp(chain, theta, model, cfg, spec, V, k, mode)
    kwargs = {}
    if warm_start is not None and warm_start.minimizer.size == problem.linear.size:
        kwargs = {"x0": warm_start.minimizer, "working_set": warm_start.active_set}
    try:
        solution = problem.solve(tol=tol, **kwargs)
    except InfeasibleError as exc:
        raise InfeasibleError(f"trading limits admit no allocation at V={V:.6g}: {exc}") from exc
    return problem, solution


def mpc_step(chain, theta, model, cfg, spec, V, k: int = 0, mode: ConstraintMode = "first-block", warm_start=None):
    """Allocation ``u(k)`` applied by the receding-horizon policy."""
    _, solution = solve_mpc(chain, theta, model, cfg, spec, V, k, mode, warm_start)
    return extract_control(solution.minimizer, model.n)
