"""
Run manifests.

A manifest is a YAML file with optional sections ``data``, ``backtest``,
``estimation`` and ``simulate`` plus top-level ``seed`` and ``output``.
Command-line flags override the file, which overrides the built-in defaults
(the MICEX experiment settings).

Example::

    data:
      prices: prices.csv
      index_column: INDEX
      strict: true
    output: results
    seed: 7
    backtest:
      horizon: 10
      rho: 0.1
      mu0: 0.0015
      beta: -0.6
      gamma: 3.0
      cost_fraction: 0.0006
    estimation:
      preset: micex
      ma_window: 13
    simulate:
      days: 801
      assets: 5
      mu: [0.001, 0.0005]
      sigma: [0.01, 0.02]
      transition: [[0.96, 0.24], [0.04, 0.76]]
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .backtest import BacktestConfig
from .errors import ConfigError
from .estimation import PRESETS, EstimationConfig
from .market import MarketModel, RegimeParameters
from .markov import TransitionMatrix

MICEX_TRANSITION = [[0.96, 0.24], [0.04, 0.76]]


@dataclass(frozen=True)
class DataSource:
    prices: Path | None = None
    index_column: str = "INDEX"
    assets: tuple[str, ...] | None = None
    strict: bool = True


@dataclass(frozen=True)
class SimulationSpec:
    days: int = 801
    assets: int = 5
    mu: tuple = (0.001, 0.0005)
    sigma: tuple = (0.01, 0.02)
    transition: tuple = tuple(map(tuple, MICEX_TRANSITION))
    start_regime: int = 1
    initial_price: float = 100.0
    index_threshold: float | None = None
    r1: float = 0.0
    r2: float = 0.0

    def market_model(self) -> MarketModel:
        n = self.assets
        if len(self.mu) != len(self.sigma):
            raise ConfigError("simulate.mu and simulate.sigma need one entry per regime")
        regimes = []
        for q, (mu, sigma) in enumerate(zip(self.mu, self.sigma), start=1):
            mu_vec = np.broadcast_to(np.asarray(mu, dtype=float), (n,))
            sig = np.asarray(sigma, dtype=float)
            if sig.ndim == 0:
                sig = np.full(n, float(sig))
            try:
                regimes.append(RegimeParameters(mu_vec, sig))
            except ValueError as exc:
                raise ConfigError(f"simulate regime {q}: {exc}") from exc
        try:
            return MarketModel(tuple(regimes), r1=self.r1, r2=self.r2)
        except ValueError as exc:
            raise ConfigError(f"simulate: {exc}") from exc

    def chain(self) -> TransitionMatrix:
        try:
            return TransitionMatrix(np.asarray(self.transition, dtype=float))
        except ValueError as exc:
            raise ConfigError(f"simulate.transition: {exc}") from exc


@dataclass(frozen=True)
class RunManifest:
    data: DataSource = field(default_factory=DataSource)
    backtest: BacktestConfig = field(default_factory=BacktestConfig)
    simulate: SimulationSpec = field(default_factory=SimulationSpec)
    seed: int = 0
    output: Path = Path("output")


def _build(cls, section: dict[str, Any], name: str, **extra):
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(section) - known)
    if unknown:
        raise ConfigError(f"unknown keys in [{name}]: {', '.join(unknown)}")
    try:
        return cls(**{**section, **extra})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{name}]: {exc}") from exc


def _estimation(section: dict[str, Any]) -> EstimationConfig:
    section = dict(section)
    preset = section.pop("preset", None)
    if preset is None:
        return _build(EstimationConfig, section, "estimation")
    if preset not in PRESETS:
        raise ConfigError(f"unknown estimation preset {preset!r}; choose from {sorted(PRESETS)}")
    try:
        return PRESETS[preset].with_overrides(**section)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[estimation]: {exc}") from exc


def _tupled(value):
    if isinstance(value, list):
        return tuple(_tupled(v) for v in value)
    return value


def load_manifest(path: str | Path | None = None, overrides: dict[str, Any] | None = None) -> RunManifest:
    """Read a manifest (or start from defaults) and apply flag overrides.

    ``overrides`` keys: ``prices``, ``output``, ``seed``, ``horizon``,
    ``strict``, ``constraint_mode``. ``None`` values are ignored.
    """
    raw: dict[str, Any] = {}
    base = Path.cwd()
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        base = path.parent
    unknown = sorted(set(raw) - {"data", "backtest", "estimation", "simulate", "seed", "output"})
    if unknown:
        raise ConfigError(f"unknown manifest sections: {', '.join(unknown)}")

    data_raw = dict(raw.get("data") or {})
    if "assets" in data_raw and data_raw["assets"] is not None:
        data_raw["assets"] = tuple(data_raw["assets"])
    if data_raw.get("prices") is not None:
        data_raw["prices"] = base / data_raw["prices"]
    data = _build(DataSource, data_raw, "data")

    estimation = _estimation(raw.get("estimation") or {})
    bt_raw = {k: _tupled(v) for k, v in (raw.get("backtest") or {}).items()}
    backtest = _build(BacktestConfig, bt_raw, "backtest", estimation=estimation)

    sim_raw = {k: _tupled(v) for k, v in (raw.get("simulate") or {}).items()}
    simulate = _build(SimulationSpec, sim_raw, "simulate")

    seed = raw.get("seed", 0)
    output = Path(raw["output"]) if raw.get("output") is not None else Path("output")
    if path is not None and not output.is_absolute():
        output = base / output

    ov = {k: v for k, v in (overrides or {}).items() if v is not None}
    if "prices" in ov:
        data = replace(data, prices=Path(ov["prices"]))
    if "strict" in ov:
        data = replace(data, strict=bool(ov["strict"]))
    if "output" in ov:
        output = Path(ov["output"])
    if "seed" in ov:
        seed = ov["seed"]
    bt_over = {}
    if "horizon" in ov:
        bt_over["horizon"] = ov["horizon"]
    if "constraint_mode" in ov:
        bt_over["constraint_mode"] = ov["constraint_mode"]
    if bt_over:
        try:
            backtest = replace(backtest, **bt_over)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    if not isinstance(seed, int) or seed < 0 or seed >= 2**64:
        raise ConfigError(f"seed must be an unsigned 64-bit integer, got {seed!r}")
    manifest = RunManifest(data=data, backtest=backtest, simulate=simulate, seed=seed, output=output)
    validate(manifest)
    return manifest


def validate(manifest: RunManifest) -> None:
    """Reject parameter combinations before any computation starts."""
    bt = manifest.backtest
    if bt.rho <= 0:
        raise ConfigError("backtest.rho must be positive")
    if bt.constraint_mode not in ("first-block", "full-horizon"):
        raise ConfigError(f"unknown constraint mode {bt.constraint_mode!r}")
    beta = np.atleast_1d(np.asarray(bt.beta, dtype=float))
    gamma = np.atleast_1d(np.asarray(bt.gamma, dtype=float))
    n = beta.size if beta.size > 1 else max(gamma.size - 2, 1)
    try:
        bt.constraint_spec(n)
    except ValueError as exc:
        raise ConfigError(f"invalid trading limits: {exc}") from exc
