"""
Seeded synthetic markets for the simulate subcommand and the test suite.

Asset closes follow the regime-modulated return model. The index column is
regime-coded: on calm days its absolute return is drawn below the
classification threshold, on turbulent days above it, with a random sign.
Classifying the index with that threshold therefore recovers the true regime
path exactly, which lets estimation round-trips be checked against known
parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .backtest import PriceTable
from .market import MarketModel, simulate_returns
from .markov import TransitionMatrix, simulate_chain

CALM_BAND = (0.05, 0.95)
TURBULENT_BAND = (1.05, 2.5)


@dataclass
class SyntheticMarket:
    table: PriceTable
    regimes: NDArray[np.int64]  # label of each row's day
    returns: NDArray[np.float64]  # returns[d - 1] earned from row d-1 to row d


def business_dates(count: int, start: str = "2000-01-03") -> tuple[str, ...]:
    first = np.busday_offset(np.datetime64(start), 0, roll="forward")
    days = np.busday_offset(first, np.arange(count), roll="forward")
    return tuple(str(d) for d in days)


def generate_market(
    model: MarketModel,
    chain: TransitionMatrix,
    days: int,
    seed: int,
    index_threshold: float = 0.015,
    start_regime: int = 1,
    initial_price: float = 100.0,
    asset_names: tuple[str, ...] | None = None,
) -> SyntheticMarket:
    """Generate ``days`` rows of closes driven by a sampled regime path."""
    if days < 2:
        raise ValueError("need at least two days")
    if chain.v != model.v:
        raise ValueError("chain and model disagree on the number of regimes")
    if model.v > 2:
        raise ValueError("regime-coded index supports at most two regimes")
    if index_threshold <= 0:
        raise ValueError("index threshold must be positive")
    rng = np.random.default_rng(seed)
    regimes = simulate_chain(chain, start_regime, days - 1, rng)
    noise = rng.standard_normal((days - 1, model.n))
    returns = simulate_returns(model, regimes[1:], noise)
    if np.any(returns <= -1.0):
        raise ValueError("simulated returns reach -100%; lower the volatilities")
    closes = initial_price * np.vstack([np.ones(model.n), np.cumprod(1.0 + returns, axis=0)])

    lo = np.where(regimes[1:] == 1, CALM_BAND[0], TURBULENT_BAND[0])
    hi = np.where(regimes[1:] == 1, CALM_BAND[1], TURBULENT_BAND[1])
    magnitude = index_threshold * (lo + (hi - lo) * rng.random(days - 1))
    sign = np.where(rng.random(days - 1) < 0.5, -1.0, 1.0)
    index = 1000.0 * np.concatenate([[1.0], np.cumprod(1.0 + sign * magnitude)])

    names = asset_names or tuple(f"A{i}" for i in range(1, model.n + 1))
    table = PriceTable(
        dates=business_dates(days),
        asset_names=names,
        closes=closes,
        index_name="INDEX",
        index_closes=index,
    )
    return SyntheticMarket(table=table, regimes=regimes, returns=returns)
