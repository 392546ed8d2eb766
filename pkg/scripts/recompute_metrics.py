#!/usr/bin/env python3
"""Recompute pooled backtest metrics directly from the predictions CSVs.

Independent of the library: plain csv parsing and explicit formulas, used
to cross-check the numbers stored in report.json.

    python3 scripts/recompute_metrics.py <run_dir>

Reads <run_dir>/predictions.csv (contemporaneous reconstructions, backs
total R2) and <run_dir>/premium_predictions.csv (premium forecasts, backs
predictive R2 and the long-short Sharpe).
"""

import csv
import math
import sys
from collections import defaultdict
from pathlib import Path


def read_predictions(path):
    """date -> list of (asset_id, predicted, realized), in file order."""
    months = defaultdict(list)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            months[row["date"]].append(
                (row["asset_id"], float(row["predicted"]), float(row["realized"]))
            )
    return months


def pooled_r2_pct(months):
    sse = 0.0
    denom = 0.0
    for rows in months.values():
        for _, pred, realized in rows:
            sse += (realized - pred) ** 2
            denom += realized**2
    return 100.0 * (1.0 - sse / denom)


def sharpe_from_premium(months, min_assets=10):
    spreads = []
    for date in sorted(months):
        rows = months[date]
        if len(rows) < min_assets:
            continue
        ranked = sorted(rows, key=lambda row: (-row[1], row[0]))
        n_dec = max(1, len(rows) // 10)
        long_leg = sum(r[2] for r in ranked[:n_dec]) / n_dec
        short_leg = sum(r[2] for r in ranked[-n_dec:]) / n_dec
        spreads.append(long_leg - short_leg)
    mean = sum(spreads) / len(spreads)
    var = sum((s - mean) ** 2 for s in spreads) / len(spreads)
    return mean / math.sqrt(var) * math.sqrt(12.0)


def recompute(run_dir):
    run_dir = Path(run_dir)
    fitted = read_predictions(run_dir / "predictions.csv")
    premium = read_predictions(run_dir / "premium_predictions.csv")
    return {
        "total_r2_pct": pooled_r2_pct(fitted),
        "predictive_r2_pct": pooled_r2_pct(premium),
        "sharpe_annualized": sharpe_from_premium(premium),
    }


def main(argv):
    if len(argv) != 2:
        print(__doc__, file=sys.stderr)
        return 1
    for key, value in recompute(argv[1]).items():
        print(f"{key} {value!r}")
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv))
