"""Regenerate the synthetic trade-income stand-in shipped with the package.

Columns follow the country-level workflow: income per capita, trade share of
GDP (percent) and renewable freshwater per capita. Log income and log
freshwater enter linearly; trade share carries a skewed (non-Gaussian) shock.
"""
from pathlib import Path

import numpy as np

from eunc.dgp import make_rng

N = 154
SEED = 20240


def main(out=Path(__file__).resolve().parents[1] / "src/eunc/data/trade_income.csv"):
    rng = make_rng(SEED)
    zu = rng.multivariate_normal([0.0, 0.0], [[1.0, 0.5], [0.5, 1.0]], size=N)
    log_water = 8.0 + 1.5 * zu[:, 0]
    u = zu[:, 1]
    trade = 30.0 + 6.0 * zu[:, 0] + 6.0 * u + rng.exponential(25.0, size=N)
    log_income = 7.0 + 0.02 * trade + 0.15 * log_water + 0.6 * u + rng.normal(0.0, 0.3, size=N)
    with open(out, "w") as fh:
        fh.write("income,trade_share,freshwater\n")
        for inc, tr, wa in zip(np.exp(log_income), trade, np.exp(log_water)):
            fh.write(f"{inc:.2f},{tr:.3f},{wa:.1f}\n")


if __name__ == "__main__":
    main()
