"""
Finite-state Markov chain in indicator (one-hot) state-space form.

Convention: transition matrices are COLUMN-stochastic. Entry ``P[i, j]`` is
the probability of moving from regime ``j`` to regime ``i``, so that the
regime distribution evolves as ``theta(k+1) = P @ theta(k)`` and each column
sums to one.

Regime labels exposed to callers (regime sequences, ledgers, CLI output) are
1-based, ``1..v``. Arrays are indexed from zero internally.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray

STOCHASTIC_TOL = 1e-12


class UnvisitedStateWarning(UserWarning):
    """A regime never appeared as a transition source during estimation."""


@dataclass(frozen=True)
class TransitionMatrix:
    """Column-stochastic transition matrix of a ``v``-state chain."""

    entries: NDArray[np.float64]

    def __post_init__(self) -> None:
        P = np.array(self.entries, dtype=float, copy=True)
        if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] < 1:
            raise ValueError(f"transition matrix must be square and non-empty, got shape {P.shape}")
        if not np.all(np.isfinite(P)):
            raise ValueError("transition matrix has non-finite entries")
        if np.any(P < 0.0) or np.any(P > 1.0):
            raise ValueError("transition probabilities must lie in [0, 1]")
        col_sums = P.sum(axis=0)
        if np.max(np.abs(col_sums - 1.0)) > STOCHASTIC_TOL:
            raise ValueError(f"each column must sum to 1 (column-stochastic); got column sums {col_sums}")
        P.setflags(write=False)
        object.__setattr__(self, "entries", P)

    @property
    def v(self) -> int:
        return self.entries.shape[0]

    def power(self, t: int) -> NDArray[np.float64]:
        if t < 0:
            raise ValueError("power must be non-negative")
        return np.linalg.matrix_power(self.entries, t)

    def stationary(self) -> NDArray[np.float64]:
        """Stationary distribution ``pi`` with ``P @ pi = pi``."""
        v = self.v
        # Solve (P - I) pi = 0 together with sum(pi) = 1 in least squares.
        system = np.vstack([self.entries - np.eye(v), np.ones((1, v))])
        rhs = np.zeros(v + 1)
        rhs[-1] = 1.0
        pi, *_ = np.linalg.lstsq(system, rhs, rcond=None)
        pi = np.clip(pi, 0.0, None)
        return pi / pi.sum()

    @classmethod
    def from_rows(cls, rows: ArrayLike) -> "TransitionMatrix":
        """Build from a row-stochastic matrix (``rows[i, j]`` = Pr(i -> j))."""
        return cls(np.asarray(rows, dtype=float).T)


MatrixLike = Union[TransitionMatrix, ArrayLike]


def as_transition_matrix(P: MatrixLike) -> TransitionMatrix:
    return P if isinstance(P, TransitionMatrix) else TransitionMatrix(np.asarray(P, dtype=float))


def indicator(regime: int, v: int) -> NDArray[np.float64]:
    """One-hot regime indicator for the 1-based label ``regime``."""
    if not 1 <= regime <= v:
        raise ValueError(f"regime {regime} outside 1..{v}")
    theta = np.zeros(v)
    theta[regime - 1] = 1.0
    return theta


def _check_theta(P: TransitionMatrix, theta: ArrayLike) -> NDArray[np.float64]:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (P.v,):
        raise ValueError(f"regime indicator has shape {theta.shape}, expected ({P.v},)")
    if np.any(theta < -STOCHASTIC_TOL) or abs(theta.sum() - 1.0) > 1e-9:
        raise ValueError("regime indicator must be a probability vector")
    return theta


def propagate(P: MatrixLike, theta: ArrayLike, t: int) -> NDArray[np.float64]:
    """Return ``P^t theta``, the regime distribution ``t`` steps ahead."""
    P = as_transition_matrix(P)
    theta = _check_theta(P, theta)
    if t < 0:
        raise ValueError("t must be non-negative")
    out = theta.copy()
    for _ in range(t):
        out = P.entries @ out
    return out


def martingale_covariance(P: MatrixLike, theta: ArrayLike) -> NDArray[np.float64]:
    """Conditional covariance of the indicator innovation.

    ``C = diag(P theta) - P diag(theta) P^T``.
    """
    P = as_transition_matrix(P)
    theta = _check_theta(P, theta)
    M = P.entries
    C = np.diag(M @ theta) - (M * theta) @ M.T
    return 0.5 * (C + C.T)


def joint_occupancy(P: MatrixLike, theta: ArrayLike, t: int, f: int) -> NDArray[np.float64]:
    """Joint regime probabilities ``E[theta(k+t) theta(k+f)^T | theta(k)]``.

    Entry ``[q, r]`` is Pr(regime q at step t, regime r at step f). For
    ``t <= f`` this equals ``diag(P^t theta) (P^(f-t))^T``.
    """
    P = as_transition_matrix(P)
    if t < 0 or t > f:
        raise ValueError(f"need 0 <= t <= f, got t={t}, f={f}")
    p_t = propagate(P, theta, t)
    return p_t[:, None] * P.power(f - t).T


def estimate_transition_matrix(seq: Sequence[int], v: int) -> TransitionMatrix:
    """Maximum-likelihood transition matrix from an observed regime sequence.

    Column ``j`` holds the empirical frequencies of transitions out of
    regime ``j + 1``. A regime that never occurs as a transition source gets
    a self-loop column and an :class:`UnvisitedStateWarning` is issued.
    """
    states = np.asarray(seq, dtype=int)
    if states.ndim != 1 or states.size < 2:
        raise ValueError("need at least two observations to count transitions")
    if v < 1:
        raise ValueError("v must be at least 1")
    if states.min() < 1 or states.max() > v:
        raise ValueError(f"regime labels must lie in 1..{v}")
    counts = np.zeros((v, v))
    np.add.at(counts, (states[1:] - 1, states[:-1] - 1), 1.0)
    totals = counts.sum(axis=0)
    P = np.zeros((v, v))
    for j in range(v):
        if totals[j] == 0:
            warnings.warn(
                f"regime {j + 1} never observed as a transition source; using a self-loop column",
                UnvisitedStateWarning,
                stacklevel=2,
            )
            P[j, j] = 1.0
        else:
            P[:, j] = counts[:, j] / totals[j]
    return TransitionMatrix(P)


def simulate_chain(P: MatrixLike, start: int, steps: int, rng: np.random.Generator) -> NDArray[np.int64]:
    """Sample a regime path of ``steps + 1`` 1-based labels beginning at ``start``."""
    P = as_transition_matrix(P)
    if not 1 <= start <= P.v:
        raise ValueError(f"start regime {start} outside 1..{P.v}")
    cdf = np.cumsum(P.entries, axis=0)
    cdf[-1, :] = 1.0
    draws = rng.random(steps)
    path = np.empty(steps + 1, dtype=np.int64)
    path[0] = start - 1
    for k in range(steps):
        path[k + 1] = np.searchsorted(cdf[:, path[k]], draws[k], side="right")
    return path + 1
