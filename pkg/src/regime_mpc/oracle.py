"""
Brute-force checks for the controller and the QP solver.

``mc_blocks`` builds the stacked prediction matrices ``Phi_j`` literally for
sampled regime paths and noises, and averages

    H = E[Phi_0^T Phi_0 + sum_j D_j Phi_j^T Phi_j D_j] + Delta
    G = Psi^T E[Phi_0]
    F = Delta_1 E[Phi_0]

where ``D_j`` scales the control block for step ``t`` by the noise draw
``w_j(k+t)``. No closed-form regime probabilities are used, so the results
independently check the recursive construction in :mod:`controller`.

``grid_argmin`` searches a uniform grid (or a random cloud) of feasible
points and is used to certify QP solutions. Nothing here is used on the
production path.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .controller import PredictionConfig, r1_coefficient
from .market import MarketModel, b0_row, bj_row
from .markov import MatrixLike, as_transition_matrix


@dataclass
class StackedPrediction:
    psi: NDArray[np.float64]  # (m,)
    phi: NDArray[np.float64]  # (n+1, m, M)
    xi: NDArray[np.float64]  # (m, v) sampled indicators theta(k+1..k+m)
    w: NDArray[np.float64]  # (n, m)
    delta: NDArray[np.float64]  # (M, M)
    delta1: NDArray[np.float64]  # (m,)


@dataclass
class MCBlocks:
    H: NDArray[np.float64]
    G: NDArray[np.float64]
    F: NDArray[np.float64]
    H_se: NDArray[np.float64]
    G_se: NDArray[np.float64]
    F_se: NDArray[np.float64]
    samples: int


def _channel_rows(model: MarketModel) -> NDArray[np.float64]:
    """Rows ``B_j^(q)`` stacked as (n+1, v, n+1)."""
    n, v = model.n, model.v
    rows = np.zeros((n + 1, v, n + 1))
    for q in range(1, v + 1):
        rows[0, q - 1] = b0_row(model, q)
        for j in range(1, n + 1):
            rows[j, q - 1] = bj_row(model, q, j)
    return rows


def sample_regime_paths(P: MatrixLike, theta: ArrayLike, m: int, size: int, rng: np.random.Generator):
    """Sample ``size`` regime paths of ``m`` steps after the current step.

    The current regime is drawn from ``theta``. Returns 0-based labels of
    shape (size, m).
    """
    P = as_transition_matrix(P)
    theta = np.asarray(theta, dtype=float)
    v = P.v
    start_cdf = np.cumsum(theta)
    current = np.minimum((rng.random(size)[:, None] >= start_cdf[None, :]).sum(axis=1), v - 1)
    cdf = np.cumsum(P.entries, axis=0)
    out = np.empty((size, m), dtype=np.int64)
    for t in range(m):
        draws = rng.random(size)
        nxt = (draws[:, None] >= cdf[:, current].T).sum(axis=1)
        current = np.minimum(nxt, v - 1)
        out[:, t] = current
    return out


def _phi_batch(rows, regimes, A, m):
    """Literal ``Phi_j`` for a batch: (size, n+1, m, m*(n+1))."""
    size = regimes.shape[0]
    nch, _, d = rows.shape
    picked = rows[:, regimes, :]  # (n+1, size, m, d)
    picked = np.transpose(picked, (1, 0, 2, 3))  # (size, n+1, m, d)
    phi = np.zeros((size, nch, m, m * d))
    for i in range(m):
        for t in range(i + 1):
            phi[:, :, i, t * d : (t + 1) * d] = A ** (i - t) * picked[:, :, t, :]
    return phi


def _weights(cfg: PredictionConfig, model: MarketModel, k: int):
    m, d = cfg.horizon, model.n + 1
    A = model.growth
    psi = A ** np.arange(1, m + 1)
    delta = np.zeros((m * d, m * d))
    for i in range(m):
        delta[i * d : (i + 1) * d, i * d : (i + 1) * d] = cfg.R(k, i)
    delta1 = np.array([r1_coefficient(cfg, k, t) for t in range(1, m + 1)])
    return psi, delta, delta1


def sample_stacked(chain, theta, model: MarketModel, cfg: PredictionConfig, k: int, rng: np.random.Generator) -> StackedPrediction:
    """One joint draw of the regime path, the noises and the matrices ``Phi_j``."""
    P = as_transition_matrix(chain)
    m = cfg.horizon
    regimes = sample_regime_paths(P, theta, m, 1, rng)
    w = rng.standard_normal((model.n, m))
    phi = _phi_batch(_channel_rows(model), regimes, model.growth, m)[0]
    psi, delta, delta1 = _weights(cfg, model, k)
    xi = np.eye(P.v)[regimes[0]]
    return StackedPrediction(psi=psi, phi=phi, xi=xi, w=w, delta=delta, delta1=delta1)


class _Moments:
    """Chunked mean/variance accumulator (Chan et al. pairwise merge)."""

    def __init__(self):
        self.n = 0
        self.mean = None
        self.m2 = None

    def add(self, batch: NDArray[np.float64]) -> None:
        nb = batch.shape[0]
        mb = batch.mean(axis=0)
        m2b = ((batch - mb) ** 2).sum(axis=0)
        if self.n == 0:
            self.n, self.mean, self.m2 = nb, mb, m2b
            return
        total = self.n + nb
        delta = mb - self.mean
        self.mean = self.mean + delta * nb / total
        self.m2 = self.m2 + m2b + delta**2 * self.n * nb / total
        self.n = total

    def se(self) -> NDArray[np.float64]:
        return np.sqrt(self.m2 / (self.n - 1) / self.n)


def mc_blocks(
    chain,
    theta,
    model: MarketModel,
    cfg: PredictionConfig,
    k: int,
    samples: int,
    rng: np.random.Generator,
    chunk: int = 50_000,
) -> MCBlocks:
    """Monte-Carlo estimates of ``H``, ``G``, ``F`` with per-entry standard errors."""
    if samples < 2:
        raise ValueError("need at least two samples")
    P = as_transition_matrix(chain)
    m, n = cfg.horizon, model.n
    rows = _channel_rows(model)
    psi, delta, delta1 = _weights(cfg, model, k)
    A = model.growth
    acc_h, acc_g, acc_f = _Moments(), _Moments(), _Moments()
    done = 0
    while done < samples:
        size = min(chunk, samples - done)
        regimes = sample_regime_paths(P, theta, m, size, rng)
        w = rng.standard_normal((size, n, m))
        phi = _phi_batch(rows, regimes, A, m)
        scaled = phi.copy()
        d = n + 1
        for t in range(m):
            scaled[:, 1:, :, t * d : (t + 1) * d] *= w[:, :, t][:, :, None, None]
        stacked = scaled.reshape(size, (n + 1) * m, m * d)
        acc_h.add(np.matmul(stacked.transpose(0, 2, 1), stacked))
        acc_g.add(np.einsum("i,sim->sm", psi, phi[:, 0]))
        acc_f.add(np.einsum("i,sim->sm", delta1, phi[:, 0]))
        done += size
    return MCBlocks(
        H=acc_h.mean + delta,
        G=acc_g.mean,
        F=acc_f.mean,
        H_se=acc_h.se(),
        G_se=acc_g.se(),
        F_se=acc_f.se(),
        samples=samples,
    )


def sample_criteria(
    chain,
    theta,
    model: MarketModel,
    cfg: PredictionConfig,
    k: int,
    V: float,
    controls: list[ArrayLike],
    samples: int,
    rng: np.random.Generator,
):
    """Per-path tracking criteria for open-loop control sequences.

    Wealth paths are generated step by step from sampled regimes and returns
    with the self-financing recursion, using common random numbers for every
    entry of ``controls``. Returns two arrays of shape
    (len(controls), samples): the criterion in its benchmark-error form and
    in the reduced ``V^2 - R1 V`` form.
    """
    P = as_transition_matrix(chain)
    m, n = cfg.horizon, model.n
    d = n + 1
    regimes = sample_regime_paths(P, theta, m, samples, rng)
    w = rng.standard_normal((samples, m, n))
    mus = np.stack([reg.mu for reg in model.regimes])
    sigmas = np.stack([reg.sigma for reg in model.regimes])
    eta = mus[regimes] + np.einsum("stij,stj->sti", sigmas[regimes], w)
    v0 = np.array([cfg.v0(k + i) for i in range(1, m + 1)])
    rho = np.array([cfg.rho_at(k, i) for i in range(1, m + 1)])
    r1_coeffs = 2.0 * v0 + rho
    r1, r2 = model.r1, model.r2
    tracking, reduced = [], []
    for U in controls:
        U = np.asarray(U, dtype=float).reshape(m, d)
        penalty = sum(U[i] @ cfg.R(k, i) @ U[i] for i in range(m))
        wealth = np.full(samples, float(V))
        err_sum = np.zeros(samples)
        red_sum = np.zeros(samples)
        for i in range(m):
            u = U[i]
            wealth = (1.0 + r1) * wealth + (eta[:, i, :] - r1) @ u[:n] - (r2 - r1) * u[n]
            gap = wealth - v0[i]
            err_sum += gap**2 - rho[i] * gap
            red_sum += wealth**2 - r1_coeffs[i] * wealth
        tracking.append(err_sum + penalty)
        reduced.append(red_sum + penalty)
    return np.array(tracking), np.array(reduced)


def _default_box(H, c, A, lower, upper):
    M = c.size
    centre = -0.5 * np.linalg.solve(H, c)
    width = np.maximum(1.0, 2.0 * np.abs(centre))
    lo, hi = centre - width, centre + width
    for row, a in enumerate(A):
        nz = np.flatnonzero(a)
        if nz.size == 1 and np.isfinite(lower[row]) and np.isfinite(upper[row]):
            j = nz[0]
            bounds = sorted((lower[row] / a[j], upper[row] / a[j]))
            lo[j], hi[j] = bounds
    return lo, hi


def _best_on_cloud(points, H, c, A, lower, upper, slack):
    AU = points @ A.T
    feasible = np.all((AU >= lower - slack) & (AU <= upper + slack), axis=1)
    if not np.any(feasible):
        return None, np.inf
    pts = points[feasible]
    vals = np.einsum("si,ij,sj->s", pts, H, pts) + pts @ c
    idx = int(np.argmin(vals))
    return pts[idx], float(vals[idx])


def grid_argmin(
    qp,
    resolution: int,
    box: tuple[ArrayLike, ArrayLike] | None = None,
    max_points: int = 1_000_000,
    zoom_rounds: int = 0,
    rng: np.random.Generator | None = None,
    slack: float = 1e-12,
) -> NDArray[np.float64]:
    """Best feasible point of ``qp`` over a uniform grid in ``box``.

    If ``resolution ** M`` exceeds ``max_points`` a uniform random cloud of
    ``max_points`` points is searched instead. ``zoom_rounds`` repeats the
    search on a box of two cells around the incumbent. Raises ``ValueError``
    when no candidate point is feasible.
    """
    H = np.asarray(qp.H, dtype=float)
    c = np.asarray(qp.linear, dtype=float)
    A = np.atleast_2d(np.asarray(qp.constraint_operator, dtype=float)).reshape(-1, c.size)
    lower = np.asarray(qp.lower, dtype=float)
    upper = np.asarray(qp.upper, dtype=float)
    M = c.size
    if box is None:
        lo, hi = _default_box(H, c, A, lower, upper)
    else:
        lo, hi = (np.asarray(b, dtype=float).copy() for b in box)
    rng = rng if rng is not None else np.random.default_rng(0)
    best, best_val = None, np.inf
    outer_lo, outer_hi = lo.copy(), hi.copy()
    for _ in range(zoom_rounds + 1):
        if resolution**M <= max_points:
            axes = [np.linspace(lo[j], hi[j], resolution) for j in range(M)]
            cloud = np.array(list(product(*axes))) if M > 1 else axes[0][:, None]
            cell = (hi - lo) / max(resolution - 1, 1)
        else:
            cloud = lo + (hi - lo) * rng.random((max_points, M))
            cell = (hi - lo) / max_points ** (1.0 / M)
        for start in range(0, cloud.shape[0], 200_000):
            pt, val = _best_on_cloud(cloud[start : start + 200_000], H, c, A, lower, upper, slack)
            if val < best_val:
                best, best_val = pt, val
        if best is None:
            raise ValueError("no feasible grid point; widen the search box")
        lo = np.maximum(best - 2.0 * cell, outer_lo)
        hi = np.minimum(best + 2.0 * cell, outer_hi)
    return best
