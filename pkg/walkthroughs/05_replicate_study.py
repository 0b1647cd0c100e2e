"""
A small replicate study with period tables and moving-average plots.

Ten replicates take about a minute; the acceptance suite runs the same
protocol with 100.

    python walkthroughs/05_replicate_study.py [outdir] [n_replicates]
"""
import os
import sys

from phylodelay.evaluate import METRICS, period_table, svg_line_plot, write_period_table
from phylodelay.simulate import SimConfig, scenario, washington_like_delays
from phylodelay.study import METHOD_LABELS, run_study

out = sys.argv[1] if len(sys.argv) > 1 else "study_out"
n = int(sys.argv[2]) if len(sys.argv) > 2 else 10
os.makedirs(out, exist_ok=True)

res = run_study(scenario("a-like"), n, SimConfig(delays=washington_like_delays(2000, seed=1)), seed=11,
                methods=("bnpr", "bnpr-ps", "bnpr-ps-rp-offset", "bnpr-truncated"),
                progress=lambda k, total: print(f"\r{k}/{total}", end="", flush=True))
print()
series = {METHOD_LABELS[m]: s for m, s in res.all_series().items()}
for metric in METRICS:
    tab = period_table(series, metric=metric)
    write_period_table(os.path.join(out, f"{metric}_table.csv"), tab, list(series))
    smooth = {k: s.smoothed() for k, s in series.items()}
    first = next(iter(smooth.values()))
    svg_line_plot(os.path.join(out, f"{metric}.svg"), first.points,
                  {k: s.get(metric) for k, s in smooth.items()}, title=metric,
                  reference=0.0 if metric == "mrd" else None)
    print(metric)
    print(open(os.path.join(out, f"{metric}_table.csv")).read())
print(f"truncation cutoff {res.truncation_days:g} days; outputs in {out}/")
