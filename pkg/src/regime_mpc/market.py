"""
Regime-modulated return model and the self-financing wealth recursion.

Allocation vectors hold ``n + 1`` money amounts: risky positions
``u_1..u_n`` followed by the borrowed amount ``u_{n+1}``. The risk-free
holding ``u_0`` is implied by the budget identity
``V = sum(u_1..u_n) + u_0 - u_{n+1}``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray


@dataclass(frozen=True)
class RegimeParameters:
    """Expected simple returns ``mu`` (n,) and volatility matrix ``sigma`` (n, n)."""

    mu: NDArray[np.float64]
    sigma: NDArray[np.float64]

    def __post_init__(self) -> None:
        mu = np.array(self.mu, dtype=float, ndmin=1)
        sigma = np.array(self.sigma, dtype=float)
        if sigma.ndim == 1:
            sigma = np.diag(sigma)
        if mu.ndim != 1 or sigma.shape != (mu.size, mu.size):
            raise ValueError(f"sigma must be ({mu.size}, {mu.size}), got {sigma.shape}")
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(sigma))):
            raise ValueError("regime parameters must be finite")
        mu.setflags(write=False)
        sigma.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)

    @property
    def n(self) -> int:
        return self.mu.size


@dataclass(frozen=True)
class MarketModel:
    """Per-regime return parameters plus lending (``r1``) and borrowing (``r2``) rates."""

    regimes: tuple[RegimeParameters, ...]
    r1: float = 0.0
    r2: float = 0.0

    def __post_init__(self) -> None:
        regimes = tuple(self.regimes)
        if not regimes:
            raise ValueError("market model needs at least one regime")
        n = regimes[0].n
        if any(reg.n != n for reg in regimes):
            raise ValueError("all regimes must share the same asset count")
        if self.r1 > self.r2:
            raise ValueError(f"lending rate r1={self.r1} exceeds borrowing rate r2={self.r2}")
        object.__setattr__(self, "regimes", regimes)

    @property
    def n(self) -> int:
        return self.regimes[0].n

    @property
    def v(self) -> int:
        return len(self.regimes)

    @property
    def growth(self) -> float:
        """Risk-free one-period growth factor ``A = 1 + r1``."""
        return 1.0 + self.r1

    def regime(self, q: int) -> RegimeParameters:
        if not 1 <= q <= self.v:
            raise IndexError(f"regime {q} outside 1..{self.v}")
        return self.regimes[q - 1]

    def b0_matrix(self) -> NDArray[np.float64]:
        """Stack of excess-return rows, shape (v, n + 1)."""
        return np.vstack([b0_row(self, q) for q in range(1, self.v + 1)])

    def second_moment_blocks(self) -> NDArray[np.float64]:
        """Per-regime ``sum_{j=0..n} B_j^T B_j``, shape (v, n + 1, n + 1)."""
        n = self.n
        out = np.zeros((self.v, n + 1, n + 1))
        for idx, reg in enumerate(self.regimes):
            b0 = b0_row(self, idx + 1)
            out[idx] = np.outer(b0, b0)
            out[idx, :n, :n] += reg.sigma @ reg.sigma.T
        return out


def b0_row(model: MarketModel, q: int) -> NDArray[np.float64]:
    """Excess-return row ``[mu_1 - r1, ..., mu_n - r1, r1 - r2]`` for regime ``q``."""
    reg = model.regime(q)
    return np.append(reg.mu - model.r1, model.r1 - model.r2)


def bj_row(model: MarketModel, q: int, j: int) -> NDArray[np.float64]:
    """Column ``j`` (1-based) of regime ``q``'s volatility matrix, padded with a trailing zero."""
    reg = model.regime(q)
    if not 1 <= j <= model.n:
        raise IndexError(f"noise channel {j} outside 1..{model.n}")
    return np.append(reg.sigma[:, j - 1], 0.0)


def simulate_returns(
    model: MarketModel, regime_path: Sequence[int], noise: ArrayLike
) -> NDArray[np.float64]:
    """Per-step returns ``eta(k) = mu^(q(k)) + sigma^(q(k)) w(k)``.

    ``noise`` has shape (len(regime_path), n) and holds standardized draws.
    """
    path = np.asarray(regime_path, dtype=int)
    w = np.asarray(noise, dtype=float)
    if w.ndim == 1 and model.n == 1:
        w = w[:, None]
    if w.shape != (path.size, model.n):
        raise ValueError(f"noise shape {w.shape} does not match ({path.size}, {model.n})")
    if path.size and (path.min() < 1 or path.max() > model.v):
        raise ValueError(f"regime labels must lie in 1..{model.v}")
    mus = np.stack([reg.mu for reg in model.regimes])
    sigmas = np.stack([reg.sigma for reg in model.regimes])
    idx = path - 1
    return mus[idx] + np.einsum("kij,kj->ki", sigmas[idx], w)


def riskfree_allocation(V: float, u: ArrayLike) -> float:
    """Implied risk-free holding ``u_0 = V - sum(u_1..u_n) + u_{n+1}``."""
    u = np.asarray(u, dtype=float)
    return float(V - u[:-1].sum() + u[-1])


def wealth_step(model: MarketModel, V: float, u: ArrayLike, eta: ArrayLike) -> float:
    """Next-period wealth of a self-financing portfolio.

    ``V' = (1 + r1) V + sum((eta_i - r1) u_i) - (r2 - r1) u_{n+1}``
    """
    u = np.asarray(u, dtype=float)
    eta = np.asarray(eta, dtype=float)
    if u.shape != (model.n + 1,) or eta.shape != (model.n,):
        raise ValueError("allocation/return dimensions do not match the model")
    if not (np.isfinite(V) and np.all(np.isfinite(u)) and np.all(np.isfinite(eta))):
        raise ValueError("wealth_step received non-finite input")
    r1, r2 = model.r1, model.r2
    return float((1.0 + r1) * V + (eta - r1) @ u[:-1] - (r2 - r1) * u[-1])


def wealth_step_gross(model: MarketModel, V: float, u: ArrayLike, eta: ArrayLike) -> float:
    """Same step written position by position, with ``u_0`` made explicit."""
    u = np.asarray(u, dtype=float)
    eta = np.asarray(eta, dtype=float)
    u0 = riskfree_allocation(V, u)
    return float((1.0 + eta) @ u[:-1] + (1.0 + model.r1) * u0 - (1.0 + model.r2) * u[-1])
