"""
Day-by-day tracking backtest with proportional transaction costs.

Timing: the allocation chosen on decision day ``d`` uses closes up to and
including ``d`` and earns the returns from ``d`` to ``d + 1``. Costs for the
rebalancing on day ``d`` are paid out of the wealth carried to ``d + 1``:

    V(k+1) = (1 + r1) V(k) + sum((eta_i - r1) u_i(k))
             - sum(c_i |u_i(k) - u_i(k-1)|) - (r2 - r1) u_{n+1}(k)

with ``u(-1) = 0``. The ledger holds one row per decision day, including the
last day of the tracking window.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Callable, Sequence, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .controller import ConstraintMode, ConstraintSpec, PredictionConfig, extract_control, solve_mpc
from .errors import BankruptcyError, DataError, SolverError
from .estimation import EstimationConfig, classify_regimes, expected_returns, market_model_from_estimates, simple_returns
from .market import MarketModel, riskfree_allocation, wealth_step
from .markov import TransitionMatrix, estimate_transition_matrix, indicator

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PriceTable:
    dates: tuple[str, ...]
    asset_names: tuple[str, ...]
    closes: NDArray[np.float64]  # (T, n)
    index_name: str
    index_closes: NDArray[np.float64]  # (T,)
    filled: tuple[tuple[int, str], ...] = ()

    def __post_init__(self) -> None:
        closes = np.asarray(self.closes, dtype=float)
        index = np.asarray(self.index_closes, dtype=float)
        T = len(self.dates)
        if closes.ndim != 2 or closes.shape != (T, len(self.asset_names)) or index.shape != (T,):
            raise DataError("price series lengths do not match the date column")
        if np.any(~np.isfinite(closes)) or np.any(closes <= 0) or np.any(~np.isfinite(index)) or np.any(index <= 0):
            raise DataError("prices must be finite and positive")
        parsed = [date.fromisoformat(d) for d in self.dates]
        if any(b <= a for a, b in zip(parsed, parsed[1:])):
            raise DataError("dates must be strictly increasing")
        object.__setattr__(self, "closes", closes)
        object.__setattr__(self, "index_closes", index)

    @property
    def n(self) -> int:
        return len(self.asset_names)

    def __len__(self) -> int:
        return len(self.dates)


def load_prices(
    path: Union[str, Path],
    index_column: str = "INDEX",
    assets: Sequence[str] | None = None,
    strict: bool = True,
) -> PriceTable:
    """Read a close-price CSV.

    The first column must be ``date`` (ISO-8601). ``index_column`` names the
    regime indicator series; the remaining columns (or ``assets``) are the
    tradable closes. Missing cells raise in strict mode and are forward-filled
    in lenient mode, with every filled cell listed in ``PriceTable.filled``.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"price file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if not header or header[0].lower() != "date":
        raise DataError(f"{path}: first column must be 'date'")
    if index_column not in header:
        raise DataError(f"{path}: index column {index_column!r} not found")
    if assets is None:
        assets = [h for h in header[1:] if h != index_column]
    missing_cols = [a for a in assets if a not in header]
    if missing_cols:
        raise DataError(f"{path}: asset columns not found: {missing_cols}")
    if not assets:
        raise DataError(f"{path}: no asset columns")
    columns = list(assets) + [index_column]
    positions = [header.index(name) for name in columns]
    body = [r for r in rows[1:] if any(cell.strip() for cell in r)]
    if not body:
        raise DataError(f"{path}: no data rows")

    dates: list[str] = []
    values = np.full((len(body), len(columns)), np.nan)
    filled: list[tuple[int, str]] = []
    for i, row in enumerate(body):
        line = i + 2
        if len(row) != len(header):
            raise DataError(f"{path}: row {line} has {len(row)} fields, expected {len(header)}")
        stamp = row[0].strip()
        try:
            date.fromisoformat(stamp)
        except ValueError:
            raise DataError(f"{path}: row {line}: bad date {stamp!r}") from None
        dates.append(stamp)
        for j, (name, pos) in enumerate(zip(columns, positions)):
            cell = row[pos].strip()
            if cell == "":
                if strict:
                    raise DataError(f"{path}: row {line}, column {name!r}: missing price")
                if i == 0:
                    raise DataError(f"{path}: row {line}, column {name!r}: missing first price cannot be filled")
                values[i, j] = values[i - 1, j]
                filled.append((line, name))
                continue
            try:
                value = float(cell)
            except ValueError:
                raise DataError(f"{path}: row {line}, column {name!r}: not a number: {cell!r}") from None
            if not math.isfinite(value) or value <= 0:
                raise DataError(f"{path}: row {line}, column {name!r}: price must be positive, got {cell}")
            values[i, j] = value
    for a, b in zip(dates, dates[1:]):
        if date.fromisoformat(b) <= date.fromisoformat(a):
            raise DataError(f"{path}: dates not strictly increasing at {b}")
    if filled:
        log.warning("%s: forward-filled %d missing cells", path, len(filled))
    return PriceTable(
        dates=tuple(dates),
        asset_names=tuple(assets),
        closes=values[:, :-1],
        index_name=index_column,
        index_closes=values[:, -1],
        filled=tuple(filled),
    )


def write_prices(table: PriceTable, path: Union[str, Path]) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["date", *table.asset_names, table.index_name])
        for d, row, idx in zip(table.dates, table.closes, table.index_closes):
            writer.writerow([d, *(_fmt(x) for x in row), _fmt(idx)])


def benchmark_series(v0_init: float, mu0: float, length: int) -> NDArray[np.float64]:
    """Geometric benchmark ``V0(k) = v0_init (1 + mu0)^k`` for k < length."""
    if v0_init <= 0:
        raise ValueError("initial benchmark value must be positive")
    return v0_init * (1.0 + mu0) ** np.arange(length, dtype=float)


def wealth_with_costs(
    model: MarketModel, V: float, u_new: ArrayLike, u_prev: ArrayLike, eta: ArrayLike, costs: ArrayLike
) -> tuple[float, float]:
    """Next wealth net of proportional trading costs, and the cost paid."""
    u_new = np.asarray(u_new, dtype=float)
    u_prev = np.asarray(u_prev, dtype=float)
    n = model.n
    cost = float(np.asarray(costs, dtype=float) @ np.abs(u_new[:n] - u_prev[:n]))
    return wealth_step(model, V, u_new, eta) - cost, cost


@dataclass(frozen=True)
class BacktestConfig:
    """Backtest settings; defaults reproduce the MICEX experiment setup.

    ``beta``, ``gamma`` and ``cost_fraction`` accept a scalar (broadcast to
    every asset) or explicit vectors of length n, n + 2 and n.
    """

    horizon: int = 10
    control_cost: float = 1e-4
    rho: float = 0.1
    mu0: float = 0.0015
    beta: Union[float, Sequence[float]] = -0.6
    gamma: Union[float, Sequence[float]] = 3.0
    cost_fraction: Union[float, Sequence[float]] = 0.0006
    initial_wealth: float = 1.0
    r1: float = 0.0
    r2: float = 0.0
    estimation: EstimationConfig = field(default_factory=EstimationConfig)
    constraint_mode: ConstraintMode = "first-block"
    start: int | None = None
    days: int | None = None

    def __post_init__(self) -> None:
        if self.initial_wealth <= 0:
            raise ValueError("initial wealth must be positive")
        if np.any(np.asarray(self.cost_fraction, dtype=float) < 0):
            raise ValueError("cost fractions must be non-negative")
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if self.control_cost <= 0:
            raise ValueError("control cost must be positive")
        if self.r1 > self.r2:
            raise ValueError("r1 must not exceed r2")

    def constraint_spec(self, n: int) -> ConstraintSpec:
        beta = np.broadcast_to(np.asarray(self.beta, dtype=float), (n,))
        gamma = np.broadcast_to(np.asarray(self.gamma, dtype=float), (n + 2,))
        return ConstraintSpec(beta, gamma)

    def costs(self, n: int) -> NDArray[np.float64]:
        return np.broadcast_to(np.asarray(self.cost_fraction, dtype=float), (n,)).copy()

    def prediction(self, n: int, length: int) -> PredictionConfig:
        series = benchmark_series(self.initial_wealth, self.mu0, length + self.horizon + 1)
        return PredictionConfig(self.horizon, self.control_cost * np.eye(n + 1), self.rho, series)


@dataclass
class LedgerRow:
    date: str
    V: float
    V0: float
    u: NDArray[np.float64]
    u0: float
    regime: int
    turnover: float
    cost_paid: float


@dataclass
class BacktestResult:
    ledger: list[LedgerRow]
    metrics: dict[str, float]
    transition: TransitionMatrix
    start_index: int


ModelSource = Union[MarketModel, Callable[[int], MarketModel]]
ChainSource = Union[TransitionMatrix, Callable[[int], TransitionMatrix]]


def track(
    realized: ArrayLike,
    regimes: Sequence[int],
    model: ModelSource,
    chain: ChainSource,
    cfg: BacktestConfig,
    dates: Sequence[str] | None = None,
) -> list[LedgerRow]:
    """Run the closed feedback loop on given returns and observed regimes.

    ``realized[k]`` holds the asset returns earned by the allocation chosen
    on decision step ``k`` (``k = 0..T-1``); ``regimes`` has ``T + 1``
    1-based labels, one per decision step. ``model`` and ``chain`` are fixed
    objects or callables of the step index.
    """
    realized = np.asarray(realized, dtype=float)
    T = realized.shape[0]
    if len(regimes) != T + 1:
        raise ValueError(f"need {T + 1} regime labels, got {len(regimes)}")
    model_at = model if callable(model) else (lambda k: model)
    chain_at = chain if callable(chain) else (lambda k: chain)
    n = realized.shape[1]
    dates = list(dates) if dates is not None else [str(k) for k in range(T + 1)]
    spec = cfg.constraint_spec(n)
    costs = cfg.costs(n)
    pred = cfg.prediction(n, T)
    V = cfg.initial_wealth
    u_prev = np.zeros(n + 1)
    warm = None
    ledger: list[LedgerRow] = []
    for k in range(T + 1):
        mdl = model_at(k)
        P = chain_at(k)
        theta = indicator(int(regimes[k]), P.v)
        try:
            _, solution = solve_mpc(P, theta, mdl, pred, spec, V, k, cfg.constraint_mode, warm)
        except SolverError as exc:
            raise type(exc)(f"{dates[k]}: {exc}") from exc
        warm = solution
        u = extract_control(solution.minimizer, n)
        turnover = float(np.abs(u[:n] - u_prev[:n]).sum())
        cost = float(costs @ np.abs(u[:n] - u_prev[:n]))
        ledger.append(
            LedgerRow(
                date=dates[k],
                V=V,
                V0=pred.v0(k),
                u=u,
                u0=riskfree_allocation(V, u),
                regime=int(regimes[k]),
                turnover=turnover,
                cost_paid=cost,
            )
        )
        if k == T:
            break
        V_next, _ = wealth_with_costs(mdl, V, u, u_prev, realized[k], costs)
        if not V_next > 0:
            raise BankruptcyError(f"{dates[k + 1]}: wealth fell to {V_next:.6g}", ledger)
        V, u_prev = V_next, u
    return ledger


def observed_regimes(table: PriceTable, est: EstimationConfig) -> NDArray[np.int64]:
    """Regime label for each day ``d >= 1 + regime_lag`` (earlier entries are 0)."""
    labels = classify_regimes(simple_returns(table.index_closes), est)
    out = np.zeros(len(table), dtype=np.int64)
    lag = est.regime_lag
    out[1 + lag :] = labels[: labels.size - lag]
    return out


def run(table: PriceTable, cfg: BacktestConfig) -> BacktestResult:
    """Estimate parameters causally and run the tracking loop over the table.

    The transition matrix is estimated once from the ``mle_window`` closes
    before the tracking window (or every day when
    ``estimation.reestimate_daily`` is set); expected returns are refreshed
    each day from the last ``ma_window`` returns.
    """
    est = cfg.estimation
    N, n = len(table), table.n
    labels = observed_regimes(table, est)
    first_labelled = 1 + est.regime_lag
    start = cfg.start if cfg.start is not None else max(est.mle_window + est.regime_lag, est.ma_window)
    if start < max(est.ma_window, est.mle_window + est.regime_lag) or start >= N:
        raise DataError(
            f"tracking start {start} leaves too little warm-up for ma_window={est.ma_window}, "
            f"mle_window={est.mle_window} in a table of {N} rows"
        )
    days = cfg.days if cfg.days is not None else N - 1 - start
    if days < 0 or start + days > N - 1:
        raise DataError(f"need {start + days + 1} rows for {days} tracking days, table has {N}")

    def chain_from(end: int) -> TransitionMatrix:
        # mle_window closes ending at `end` carry mle_window - 1 labelled returns
        window = labels[max(end - est.mle_window + 2, first_labelled) : end + 1]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore" if est.reestimate_daily else "default")
            return estimate_transition_matrix(window, 2)

    initial_chain = chain_from(start - 1)
    returns = simple_returns(table.closes)

    def model_at(k: int) -> MarketModel:
        mu_hat = expected_returns(table.closes, est.ma_window, start + k + 1)
        return market_model_from_estimates(mu_hat, est, cfg.r1, cfg.r2)

    chain_at = (lambda k: chain_from(start + k)) if est.reestimate_daily else initial_chain
    ledger = track(
        realized=returns[start : start + days],
        regimes=labels[start : start + days + 1],
        model=model_at,
        chain=chain_at,
        cfg=cfg,
        dates=table.dates[start : start + days + 1],
    )
    return BacktestResult(
        ledger=ledger,
        metrics=metrics(ledger, cfg.constraint_spec(n)),
        transition=initial_chain,
        start_index=start,
    )


def constraint_violations(row: LedgerRow, spec: ConstraintSpec) -> dict[str, float]:
    """Violations of the trading limits on one row, as fractions of V (0 when satisfied)."""
    n = spec.n
    V, u, u0 = row.V, row.u, row.u0
    g = spec.gamma
    raw = {
        "asset_lower": np.max(spec.beta * V - u[:n]),
        "asset_upper": np.max(u[:n] - g[:n] * V),
        "riskfree_lower": -u0,
        "riskfree_upper": u0 - g[n] * V,
        "borrow_lower": -u[n],
        "borrow_upper": u[n] - g[n + 1] * V,
    }
    return {k: max(float(v) / V, 0.0) for k, v in raw.items()}


def metrics(ledger: Sequence[LedgerRow], spec: ConstraintSpec | None = None) -> dict[str, float]:
    if not ledger:
        raise ValueError("metrics need a non-empty ledger")
    V = np.array([r.V for r in ledger])
    V0 = np.array([r.V0 for r in ledger])
    dev = (V - V0) / V0
    out: dict[str, float] = {
        "days": len(ledger),
        "terminal_wealth": float(V[-1]),
        "terminal_benchmark": float(V0[-1]),
        "terminal_tracking_deviation": float(dev[-1]),
        "mean_tracking_deviation": float(dev.mean()),
        "mean_abs_tracking_deviation": float(np.abs(dev).mean()),
        "max_abs_tracking_deviation": float(np.abs(dev).max()),
        "fraction_days_at_or_above_benchmark": float(np.mean(V >= V0)),
        "total_cost": float(sum(r.cost_paid for r in ledger)),
        "total_turnover": float(sum(r.turnover for r in ledger)),
    }
    if spec is not None:
        worst: dict[str, float] = {}
        for row in ledger:
            for name, value in constraint_violations(row, spec).items():
                worst[name] = max(worst.get(name, 0.0), value)
        for name, value in worst.items():
            out[f"max_violation_{name}"] = value
        out["max_constraint_violation"] = max(worst.values())
    regimes = sorted({r.regime for r in ledger})
    for q in regimes:
        out[f"regime_{q}_days"] = sum(1 for r in ledger if r.regime == q)
    return out


def _fmt(x: float) -> str:
    return f"{x:.12g}"


def ledger_header(n: int) -> list[str]:
    return ["date", "V", "V0", *(f"u_{i}" for i in range(1, n + 2)), "u_0", "regime", "turnover", "cost_paid"]


def write_ledger(ledger: Sequence[LedgerRow], path: Union[str, Path]) -> None:
    n = ledger[0].u.size - 1 if ledger else 0
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ledger_header(n))
        for r in ledger:
            writer.writerow(
                [r.date, _fmt(r.V), _fmt(r.V0), *(_fmt(x) for x in r.u), _fmt(r.u0), r.regime, _fmt(r.turnover), _fmt(r.cost_paid)]
            )


def format_metrics(report: dict[str, float]) -> str:
    lines = []
    for key, value in report.items():
        text = str(value) if isinstance(value, (int, np.integer)) else _fmt(float(value))
        lines.append(f"{key} = {text}")
    return "\n".join(lines) + "\n"


def write_metrics(report: dict[str, float], path: Union[str, Path]) -> None:
    Path(path).write_text(format_metrics(report), encoding="utf-8")
