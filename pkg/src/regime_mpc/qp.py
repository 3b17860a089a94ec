"""
Dense, strictly convex quadratic programming.

Solves

    minimize    U^T H U + c^T U
    subject to  lower <= A U <= upper        (element-wise)

with a primal active-set method. Two-sided rows are kept as single rows; a
working-set entry is ``(row, side)`` with ``side`` either ``"lower"`` or
``"upper"``. ``2H`` is Cholesky-factored once; each iteration solves the
equality-constrained subproblem through the Schur complement
``A_W (2H)^{-1} A_W^T`` of the current working set.

Sign convention for multipliers: stationarity reads
``2 H U + c + A^T (lam_upper - lam_lower) = 0`` with both multiplier vectors
non-negative.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import linalg, optimize

from .errors import InfeasibleError, IterationLimitError, NotConvexError, SolverError

LOWER = "lower"
UPPER = "upper"


@dataclass
class QPSolution:
    minimizer: NDArray[np.float64]
    objective: float
    active_set: list[tuple[int, str]]
    kkt_residual: float
    iterations: int
    lam_lower: NDArray[np.float64] = field(repr=False)
    lam_upper: NDArray[np.float64] = field(repr=False)


def _prepare(H, c, A, lower, upper):
    H = np.asarray(H, dtype=float)
    c = np.asarray(c, dtype=float).ravel()
    M = c.size
    if H.shape != (M, M):
        raise ValueError(f"H has shape {H.shape}, expected ({M}, {M})")
    if A is None:
        A = np.zeros((0, M))
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.size == 0:
        A = np.zeros((0, M))
    K = A.shape[0]
    if A.shape[1] != M:
        raise ValueError(f"constraint matrix has {A.shape[1]} columns, expected {M}")
    lower = np.full(K, -np.inf) if lower is None else np.asarray(lower, dtype=float).ravel()
    upper = np.full(K, np.inf) if upper is None else np.asarray(upper, dtype=float).ravel()
    if lower.size != K or upper.size != K:
        raise ValueError("bound vectors must have one entry per constraint row")
    return H, c, A, lower, upper


def kkt_residual(H, c, A, lower, upper, U: ArrayLike, multipliers) -> float:
    """Max-norm of the KKT violations at ``U``.

    ``multipliers`` is the pair ``(lam_lower, lam_upper)``. The residual
    combines stationarity, primal feasibility, multiplier signs and
    complementary slackness.
    """
    H, c, A, lower, upper = _prepare(H, c, A, lower, upper)
    U = np.asarray(U, dtype=float)
    lam_lo, lam_up = (np.asarray(m, dtype=float) for m in multipliers)
    stationarity = 2.0 * H @ U + c + A.T @ (lam_up - lam_lo)
    AU = A @ U
    with np.errstate(invalid="ignore"):
        viol = np.concatenate([np.maximum(lower - AU, 0.0), np.maximum(AU - upper, 0.0)])
        comp_lo = np.where(np.isfinite(lower), lam_lo * (AU - lower), 0.0)
        comp_up = np.where(np.isfinite(upper), lam_up * (upper - AU), 0.0)
    parts = [
        np.abs(stationarity),
        viol,
        np.maximum(-lam_lo, 0.0),
        np.maximum(-lam_up, 0.0),
        np.abs(comp_lo),
        np.abs(comp_up),
    ]
    return float(max((p.max() if p.size else 0.0) for p in parts))


def _violation(A, lower, upper, U) -> float:
    if A.shape[0] == 0:
        return 0.0
    AU = A @ U
    return float(max(np.max(lower - AU), np.max(AU - upper), 0.0))


def _phase_one(A, lower, upper) -> NDArray[np.float64]:
    """Find any feasible point with an LP."""
    M = A.shape[1]
    lo_rows = np.isfinite(lower)
    up_rows = np.isfinite(upper)
    A_ub = np.vstack([A[up_rows], -A[lo_rows]])
    b_ub = np.concatenate([upper[up_rows], -lower[lo_rows]])
    res = optimize.linprog(
        np.zeros(M),
        A_ub=A_ub if A_ub.size else None,
        b_ub=b_ub if b_ub.size else None,
        bounds=[(None, None)] * M,
        method="highs",
        options={"primal_feasibility_tolerance": 1e-10},
    )
    if res.status == 2:
        raise InfeasibleError("no point satisfies all constraint rows")
    if res.status != 0:
        raise SolverError(f"phase-one LP failed: {res.message}")
    return np.asarray(res.x, dtype=float)


def solve(
    H: ArrayLike,
    c: ArrayLike,
    A: ArrayLike | None = None,
    lower: ArrayLike | None = None,
    upper: ArrayLike | None = None,
    tol: float = 1e-9,
    x0: ArrayLike | None = None,
    working_set: list[tuple[int, str]] | None = None,
) -> QPSolution:
    """Minimize ``U^T H U + c^T U`` subject to ``lower <= A U <= upper``.

    ``x0`` and ``working_set`` warm-start the iteration; both are ignored if
    ``x0`` is infeasible. Raises :class:`InfeasibleError`,
    :class:`NotConvexError` or :class:`IterationLimitError`.
    """
    H, c, A, lower, upper = _prepare(H, c, A, lower, upper)
    M, K = c.size, A.shape[0]
    if np.any(np.isnan(lower)) or np.any(np.isnan(upper)):
        raise ValueError("bounds must not be NaN")
    bad = np.flatnonzero(lower > upper)
    if bad.size:
        raise InfeasibleError(f"lower bound exceeds upper bound on row {int(bad[0])}")
    asym = np.max(np.abs(H - H.T)) if M else 0.0
    if asym > 1e-10 * max(1.0, np.max(np.abs(H))):
        raise NotConvexError(f"H is not symmetric (max asymmetry {asym:.3g})")
    H = 0.5 * (H + H.T)
    try:
        chol = linalg.cho_factor(2.0 * H, lower=True)
    except linalg.LinAlgError as exc:
        raise NotConvexError("H is not positive definite") from exc
    if np.min(np.diag(chol[0])) <= 0.0:
        raise NotConvexError("H is not positive definite")

    scale = 1.0 + max(
        np.max(np.abs(np.where(np.isfinite(lower), lower, 0.0)), initial=0.0),
        np.max(np.abs(np.where(np.isfinite(upper), upper, 0.0)), initial=0.0),
    )
    feas_tol = 1e-12 * scale

    U = None
    W: list[tuple[int, str]] = []
    if x0 is not None:
        cand = np.asarray(x0, dtype=float).ravel()
        if cand.shape == (M,) and _violation(A, lower, upper, cand) <= feas_tol:
            U = cand.copy()
            W = _tight_subset(A, lower, upper, U, working_set or [], feas_tol)
    if U is None:
        zero = np.zeros(M)
        U = zero if _violation(A, lower, upper, zero) <= feas_tol else _phase_one(A, lower, upper)

    max_iter = 50 * (M + K)
    y = np.zeros(0)
    for iteration in range(1, max_iter + 1):
        g = 2.0 * H @ U + c
        p, y = _eqp_step(chol, A, lower, upper, W, U, g)
        if np.max(np.abs(p), initial=0.0) <= 1e-11 * (1.0 + np.max(np.abs(U), initial=0.0)):
            U = U + p
            lam = np.array([y[i] if side == UPPER else -y[i] for i, (_, side) in enumerate(W)])
            dual_tol = 1e-12 * max(1.0, np.max(np.abs(y), initial=0.0))
            if lam.size == 0 or lam.min() >= -dual_tol:
                break
            order = sorted(range(len(W)), key=lambda i: (lam[i], W[i][0], W[i][1] != LOWER))
            W.pop(order[0])
            continue
        alpha, blocking = _ratio_test(A, lower, upper, W, U, p)
        U = U + alpha * p
        if blocking is not None:
            W.append(blocking)
    else:
        raise IterationLimitError(f"active-set iteration cap {max_iter} exceeded")

    lam_lo = np.zeros(K)
    lam_up = np.zeros(K)
    for i, (row, side) in enumerate(W):
        if side == UPPER:
            lam_up[row] = max(y[i], 0.0)
        else:
            lam_lo[row] = max(-y[i], 0.0)
    residual = kkt_residual(H, c, A, lower, upper, U, (lam_lo, lam_up))
    if residual > tol:
        raise SolverError(f"KKT residual {residual:.3g} above tolerance {tol:.3g}")
    active = sorted(W, key=lambda e: (e[0], e[1] != LOWER))
    return QPSolution(
        minimizer=U,
        objective=float(U @ H @ U + c @ U),
        active_set=active,
        kkt_residual=residual,
        iterations=iteration,
        lam_lower=lam_lo,
        lam_upper=lam_up,
    )


def _bound(lower, upper, row, side):
    return lower[row] if side == LOWER else upper[row]


def _tight_subset(A, lower, upper, U, candidates, tol):
    W: list[tuple[int, str]] = []
    rows: list[NDArray[np.float64]] = []
    for row, side in candidates:
        if not 0 <= row < A.shape[0] or any(r == row for r, _ in W):
            continue
        b = _bound(lower, upper, row, side)
        if not np.isfinite(b) or abs(A[row] @ U - b) > tol:
            continue
        trial = np.vstack(rows + [A[row]])
        if np.linalg.matrix_rank(trial) == trial.shape[0]:
            W.append((row, side))
            rows.append(A[row])
    return W


def _eqp_step(chol, A, lower, upper, W, U, g):
    """Step ``p`` and multipliers ``y`` of the working-set subproblem.

    Solves ``2H p + A_W^T y = -g`` and ``A_W p = b_W - A_W U``; the
    right-hand side keeps working-set rows exactly on their bounds.
    """
    hinv_g = linalg.cho_solve(chol, g)
    if not W:
        return -hinv_g, np.zeros(0)
    rows = np.array([r for r, _ in W])
    A_W = A[rows]
    resid = np.array([_bound(lower, upper, r, s) for r, s in W]) - A_W @ U
    hinv_at = linalg.cho_solve(chol, A_W.T)
    schur = A_W @ hinv_at
    rhs = -A_W @ hinv_g - resid
    try:
        y = linalg.solve(schur, rhs, assume_a="pos")
    except (linalg.LinAlgError, ValueError):
        y = np.linalg.lstsq(schur, rhs, rcond=None)[0]
    p = -hinv_g - hinv_at @ y
    return p, y


def _ratio_test(A, lower, upper, W, U, p):
    in_w = {r for r, _ in W}
    AU = A @ U
    Ap = A @ p
    row_norm = np.linalg.norm(A, axis=1)
    p_norm = np.linalg.norm(p)
    best_alpha, best = 1.0, None
    for row in range(A.shape[0]):
        if row in in_w:
            continue
        ap = Ap[row]
        if abs(ap) <= 1e-14 * row_norm[row] * p_norm:
            continue
        if ap < 0.0 and np.isfinite(lower[row]):
            alpha, side = max((lower[row] - AU[row]) / ap, 0.0), LOWER
        elif ap > 0.0 and np.isfinite(upper[row]):
            alpha, side = max((upper[row] - AU[row]) / ap, 0.0), UPPER
        else:
            continue
        # strict comparison keeps the lowest row index on ties
        if alpha < best_alpha:
            best_alpha, best = alpha, (row, side)
    return best_alpha, best
