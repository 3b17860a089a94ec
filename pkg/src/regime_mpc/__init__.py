"""Regime-switching model predictive control for benchmark-tracking portfolios."""

from .backtest import BacktestConfig, BacktestResult, LedgerRow, PriceTable, load_prices, run, track
from .controller import (
    ConstraintSpec,
    PredictionConfig,
    QuadraticProgram,
    assemble_qp,
    build_constraints,
    build_F,
    build_G,
    build_H,
    extract_control,
    mpc_step,
    q_recursions,
    r1_coefficient,
)
from .errors import BankruptcyError, ConfigError, DataError, RegimeMPCError, SolverError
from .estimation import EstimationConfig, PRESETS, classify_regimes, expected_returns, regime_volatilities
from .market import MarketModel, RegimeParameters, b0_row, bj_row, riskfree_allocation, simulate_returns, wealth_step
from .markov import (
    TransitionMatrix,
    estimate_transition_matrix,
    indicator,
    joint_occupancy,
    martingale_covariance,
    propagate,
    simulate_chain,
)
from .qp import QPSolution, kkt_residual, solve

__version__ = "0.1.0"

__all__ = [
    "BacktestConfig",
    "BacktestResult",
    "BankruptcyError",
    "ConfigError",
    "ConstraintSpec",
    "DataError",
    "EstimationConfig",
    "LedgerRow",
    "MarketModel",
    "PRESETS",
    "PredictionConfig",
    "PriceTable",
    "QPSolution",
    "QuadraticProgram",
    "RegimeMPCError",
    "RegimeParameters",
    "SolverError",
    "TransitionMatrix",
    "assemble_qp",
    "b0_row",
    "bj_row",
    "build_F",
    "build_G",
    "build_H",
    "build_constraints",
    "classify_regimes",
    "estimate_transition_matrix",
    "expected_returns",
    "extract_control",
    "indicator",
    "joint_occupancy",
    "kkt_residual",
    "load_prices",
    "martingale_covariance",
    "mpc_step",
    "propagate",
    "q_recursions",
    "r1_coefficient",
    "regime_volatilities",
    "riskfree_allocation",
    "run",
    "simulate_chain",
    "simulate_returns",
    "solve",
    "track",
    "wealth_step",
]
