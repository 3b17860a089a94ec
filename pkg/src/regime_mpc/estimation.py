"""
Parameter pipeline: volatility-threshold regime labels, moving-average
expected returns and per-regime diagonal volatilities.

Regime 1 is the calm state and regime 2 the turbulent one. A day is calm when
its index volatility is strictly below ``vol_threshold``. By default the
daily volatility is the absolute simple return of the index; a rolling
standard deviation is available through ``vol_measure="rolling-std"``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Literal

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import DataError
from .market import MarketModel, RegimeParameters


@dataclass(frozen=True)
class EstimationConfig:
    vol_threshold: float = 0.015
    sigma_low: float = 0.01
    sigma_high: float = 0.02
    ma_window: int = 13
    mle_window: int = 200
    vol_measure: Literal["abs", "rolling-std"] = "abs"
    vol_window: int = 5
    reestimate_daily: bool = False
    regime_lag: int = 0

    def __post_init__(self) -> None:
        if not 0 < self.sigma_low < self.sigma_high:
            raise ValueError("need 0 < sigma_low < sigma_high")
        if self.vol_threshold <= 0:
            raise ValueError("vol_threshold must be positive")
        if self.ma_window < 1 or self.mle_window < 2 or self.vol_window < 1:
            raise ValueError("windows must be positive (mle_window >= 2)")
        if self.vol_measure not in ("abs", "rolling-std"):
            raise ValueError(f"unknown vol_measure {self.vol_measure!r}")
        if self.regime_lag not in (0, 1):
            raise ValueError("regime_lag must be 0 or 1")

    def with_overrides(self, **kwargs) -> "EstimationConfig":
        return replace(self, **kwargs)


PRESETS = {
    "micex": EstimationConfig(vol_threshold=0.015, sigma_low=0.01, sigma_high=0.02, ma_window=13),
    "nyse": EstimationConfig(vol_threshold=0.01, sigma_low=0.005, sigma_high=0.02, ma_window=21),
    "forex": EstimationConfig(vol_threshold=0.006, sigma_low=0.004, sigma_high=0.008, ma_window=21),
}


def simple_returns(prices: ArrayLike) -> NDArray[np.float64]:
    """Period-over-period simple returns along axis 0."""
    p = np.asarray(prices, dtype=float)
    return p[1:] / p[:-1] - 1.0


def daily_volatility(index_returns: ArrayLike, cfg: EstimationConfig) -> NDArray[np.float64]:
    r = np.asarray(index_returns, dtype=float)
    if cfg.vol_measure == "abs":
        return np.abs(r)
    out = np.empty_like(r)
    for k in range(r.size):
        window = r[max(0, k - cfg.vol_window + 1) : k + 1]
        out[k] = window.std(ddof=1) if window.size > 1 else 0.0
    return out


def classify_regimes(index_returns: ArrayLike, cfg: EstimationConfig) -> NDArray[np.int64]:
    """Label each day 1 (volatility below threshold) or 2 (at or above)."""
    r = np.asarray(index_returns, dtype=float)
    if r.ndim != 1 or r.size == 0:
        raise DataError("regime classification needs a non-empty return series")
    vol = daily_volatility(r, cfg)
    return np.where(vol < cfg.vol_threshold, 1, 2).astype(np.int64)


def expected_returns(price_history: ArrayLike, window: int, k: int) -> NDArray[np.float64]:
    """Mean of the last ``window`` simple returns using prices strictly before ``k``.

    ``price_history`` has shape (T, n) or (T,).
    """
    prices = np.asarray(price_history, dtype=float)
    if window < 1:
        raise ValueError("window must be at least 1")
    if k < window + 1 or k > prices.shape[0]:
        raise DataError(f"expected returns at step {k} need {window + 1} prior prices")
    returns = simple_returns(prices[k - window - 1 : k])
    return np.atleast_1d(returns.mean(axis=0))


def regime_volatilities(cfg: EstimationConfig, n: int) -> list[NDArray[np.float64]]:
    return [cfg.sigma_low * np.eye(n), cfg.sigma_high * np.eye(n)]


def market_model_from_estimates(mu_hat: ArrayLike, cfg: EstimationConfig, r1: float = 0.0, r2: float = 0.0) -> MarketModel:
    """Two-regime model sharing ``mu_hat``; only the volatility switches."""
    mu_hat = np.atleast_1d(np.asarray(mu_hat, dtype=float))
    sigmas = regime_volatilities(cfg, mu_hat.size)
    return MarketModel(tuple(RegimeParameters(mu_hat, s) for s in sigmas), r1=r1, r2=r2)
