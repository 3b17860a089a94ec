"""Command-line front end: ``regime-mpc {backtest,simulate,estimate}``."""

from __future__ import annotations

import argparse
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import backtest as bt
from .config import RunManifest, load_manifest
from .errors import ConfigError, DataError, RegimeMPCError
from .estimation import classify_regimes, expected_returns, simple_returns
from .markov import estimate_transition_matrix
from .synthetic import generate_market

log = logging.getLogger("regime_mpc")

EXIT_CODES = "exit codes: 0 ok, 2 config error, 3 data error, 4 solver error, 5 bankruptcy"


def _load_table(manifest: RunManifest) -> bt.PriceTable:
    if manifest.data.prices is None:
        raise ConfigError("no price file given (set data.prices or pass --prices)")
    return bt.load_prices(
        manifest.data.prices,
        index_column=manifest.data.index_column,
        assets=manifest.data.assets,
        strict=manifest.data.strict,
    )


def cmd_backtest(manifest: RunManifest) -> int:
    table = _load_table(manifest)
    try:
        manifest.backtest.constraint_spec(table.n)
        manifest.backtest.costs(table.n)
    except ValueError as exc:
        raise ConfigError(f"trading limits do not fit {table.n} assets: {exc}") from exc
    result = bt.run(table, manifest.backtest)
    out = manifest.output
    out.mkdir(parents=True, exist_ok=True)
    bt.write_ledger(result.ledger, out / "ledger.csv")
    bt.write_metrics(result.metrics, out / "metrics.txt")
    print(f"wrote {len(result.ledger)} ledger rows to {out / 'ledger.csv'}")
    print(bt.format_metrics(result.metrics), end="")
    return 0


def cmd_simulate(manifest: RunManifest) -> int:
    spec = manifest.simulate
    threshold = spec.index_threshold or manifest.backtest.estimation.vol_threshold
    try:
        market = generate_market(
            spec.market_model(),
            spec.chain(),
            days=spec.days,
            seed=manifest.seed,
            index_threshold=threshold,
            start_regime=spec.start_regime,
            initial_price=spec.initial_price,
        )
    except ValueError as exc:
        raise ConfigError(f"cannot simulate: {exc}") from exc
    out = manifest.output
    out.mkdir(parents=True, exist_ok=True)
    bt.write_prices(market.table, out / "prices.csv")
    with (out / "regimes.csv").open("w", encoding="utf-8") as fh:
        fh.write("date,regime\n")
        for d, q in zip(market.table.dates, market.regimes):
            fh.write(f"{d},{q}\n")
    counts = np.bincount(market.regimes, minlength=market.regimes.max() + 1)[1:]
    print(f"wrote {len(market.table)} days to {out / 'prices.csv'}")
    print("regime occupancy: " + ", ".join(f"{q}: {c}" for q, c in enumerate(counts, start=1)))
    return 0


def _format_matrix(P: np.ndarray) -> str:
    return "\n".join("  " + "  ".join(f"{x:.6f}" for x in row) for row in P)


def cmd_estimate(manifest: RunManifest) -> int:
    table = _load_table(manifest)
    est = manifest.backtest.estimation
    if len(table) < max(est.ma_window + 1, 3):
        raise DataError(f"need at least {max(est.ma_window + 1, 3)} rows to estimate, got {len(table)}")
    labels = classify_regimes(simple_returns(table.index_closes), est)
    counts = np.bincount(labels, minlength=3)[1:]
    lines = [f"days classified: {labels.size}"]
    lines += [f"regime {q} days: {c}" for q, c in enumerate(counts, start=1)]
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        P_full = estimate_transition_matrix(labels, 2)
        recent = labels[-(est.mle_window - 1) :] if labels.size >= est.mle_window - 1 else labels
        P_recent = estimate_transition_matrix(recent, 2)
    lines.append("transition matrix, full sample (column j = from regime j):")
    lines.append(_format_matrix(P_full.entries))
    lines.append(f"transition matrix, last {recent.size + 1} closes:")
    lines.append(_format_matrix(P_recent.entries))
    mu_hat = expected_returns(table.closes, est.ma_window, len(table))
    lines.append(f"expected returns ({est.ma_window}-day mean, latest):")
    lines += [f"  {name}: {value:.12g}" for name, value in zip(table.asset_names, mu_hat)]
    print("\n".join(lines))
    for w in dict.fromkeys(str(w.message) for w in caught):
        print(f"warning: {w}", file=sys.stderr)
    return 0


COMMANDS = {"backtest": cmd_backtest, "simulate": cmd_simulate, "estimate": cmd_estimate}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML run manifest")
    common.add_argument("--out", type=Path, help="output directory (overrides manifest 'output')")
    common.add_argument("--seed", type=int, help="random seed for synthetic data (unsigned 64-bit)")
    common.add_argument("--horizon", type=int, help="prediction horizon m")
    common.add_argument("--prices", type=Path, help="price CSV (overrides data.prices)")
    data = common.add_mutually_exclusive_group()
    data.add_argument("--strict-data", dest="strict", action="store_const", const=True, help="reject rows with missing prices (default)")
    data.add_argument("--lenient-data", dest="strict", action="store_const", const=False, help="forward-fill missing prices")
    common.add_argument("--constraint-mode", choices=["first-block", "full-horizon"], help="which predictive blocks carry the trading limits")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(
        prog="regime-mpc",
        description="Regime-switching MPC portfolio tracking.",
        epilog="Precedence: flags > manifest file > defaults (MICEX settings). " + EXIT_CODES,
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("backtest", parents=[common], help="run the tracking backtest on a price CSV", epilog=EXIT_CODES)
    sub.add_parser("simulate", parents=[common], help="write a seeded synthetic price CSV", epilog=EXIT_CODES)
    sub.add_parser("estimate", parents=[common], help="report regimes, transition matrix and expected returns", epilog=EXIT_CODES)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    overrides = {
        "prices": args.prices,
        "output": args.out,
        "seed": args.seed,
        "horizon": args.horizon,
        "strict": args.strict,
        "constraint_mode": args.constraint_mode,
    }
    try:
        manifest = load_manifest(args.config, overrides)
        return COMMANDS[args.command](manifest)
    except RegimeMPCError as exc:
        kind = type(exc).__name__
        print(f"error ({kind}): {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
