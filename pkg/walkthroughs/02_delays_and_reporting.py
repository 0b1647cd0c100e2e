"""
Reporting delays and the probability that a sample is already reported.

A delay ECDF built from (collection, report) date pairs gives r(t), the chance
that a sample collected t days before the analysis date has been reported.

    python walkthroughs/02_delays_and_reporting.py
"""
import numpy as np

from phylodelay.delays import fit_ecdf, quantile, recent_records, reporting_probs
from phylodelay.grid import build_grid
from phylodelay.simulate import delay_records, washington_like_delays

# Synthetic delays with a median near 15 days and a long right tail
dist = washington_like_delays(2000, seed=1)
print(f"median {quantile(dist, 0.5):g} days, 90th percentile {quantile(dist, 0.9):g} days")

# The same delays as dated records; only reports from the last 30 days count
records = delay_records(dist, analysis_date="2021-08-01", seed=0)
recent = recent_records(records, "2021-08-01", window_days=30)
print(len(recent), "records reported in the 30 days before 2021-08-01")
ecdf = fit_ecdf(recent)

grid = build_grid(0.0, 70.0, 7.0)
for method in ("midpoint", "average"):
    r = reporting_probs(ecdf, grid, method=method)
    print(f"{method:>8}: " + " ".join(f"{v:.2f}" for v in r))

# Samples from the last few days are almost never visible yet
print("r at day 2:", float(np.round(ecdf.ecdf(2.0), 3)))
