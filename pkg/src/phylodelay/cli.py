"""
Command-line front end: ``simulate``, ``infer``, ``evaluate``, ``delays fit``
and ``delays quantile``.

Settings are resolved as flags, then the ``--config`` file (TOML or JSON,
optionally with a table per subcommand), then built-in defaults.

Exit codes: 0 success, 2 usage/configuration, 3 data, 4 non-convergence.
"""
from __future__ import annotations

import argparse
import glob
import json
import logging
import os
import sys
import warnings

import numpy as np

from . import __version__
from .errors import AlignmentError, ConfigurationError, ConvergenceWarning, DataError, PhylodelayError

log = logging.getLogger("phylodelay")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_UNCONVERGED = 0, 2, 3, 4

DEFAULTS = {
    "simulate": {
        "scenario": "a-like", "replicates": 1, "seed": 0, "target_n": 300, "beta1": 2.0,
        "delays": None, "n_delays": 2000, "analysis_date": "2021-08-01",
        "truncation_days": None, "jobs": 1,
    },
    "infer": {
        "model": "bnpr", "tree": None, "times": None, "replicate": None, "out": None,
        "delays": None, "rcurve": None, "analysis_date": None, "delay_window": 30.0,
        "seed": 0, "iterations": 50000, "burn_in": 10000, "thin": 10, "chains": 4,
        "cell_width": 2.0, "start": 0.0, "truncate": None, "rp_method": "midpoint",
        "allow_unconverged": False, "keep_draws": False, "jobs": 1,
    },
    "evaluate": {
        "study": None, "replicate": None, "methods": None, "periods": None, "window": 7,
    },
    "delays fit": {
        "analysis_date": None, "delay_window": None, "grid_end": None, "tree": None,
        "cell_width": 2.0, "start": 0.0, "rp_method": "midpoint",
    },
    "delays quantile": {"q": 0.9, "analysis_date": None, "delay_window": None},
}


class UsageError(ConfigurationError):
    pass


class Unconverged(Exception):
    pass


# --------------------------------------------------------------------------- #
# Parser

def _opt(p, *flags, **kw):
    kw.setdefault("default", argparse.SUPPRESS)
    p.add_argument(*flags, **kw)


def build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(prog="phylodelay", description=__doc__.splitlines()[1])
    top.add_argument("--version", action="version", version=f"phylodelay {__version__}")
    top.add_argument("-v", "--verbose", action="store_true")
    sub = top.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="simulate replicate datasets")
    _opt(s, "--config")
    _opt(s, "--scenario", choices=["a-like", "b-like", "c-like"])
    _opt(s, "--replicates", type=int)
    _opt(s, "--seed", type=int)
    _opt(s, "--target-n", dest="target_n", type=int)
    _opt(s, "--beta1", type=float)
    _opt(s, "--delays", help="delay records CSV; synthetic delays when omitted")
    _opt(s, "--n-delays", dest="n_delays", type=int)
    _opt(s, "--analysis-date", dest="analysis_date")
    _opt(s, "--truncation-days", dest="truncation_days", type=float)
    _opt(s, "--jobs", type=int)
    _opt(s, "--out", required=True)

    i = sub.add_parser("infer", help="sample the posterior of one model variant")
    _opt(i, "--config")
    _opt(i, "--model", choices=["bnpr", "bnpr-ps", "bnpr-ps-rp-offset", "bnpr-ps-rp-covariate"])
    _opt(i, "--tree")
    _opt(i, "--times")
    _opt(i, "--replicate", nargs="+", help="replicate directories written by simulate")
    _opt(i, "--out")
    _opt(i, "--delays", help="delay records CSV (label,collection_date,report_date)")
    _opt(i, "--rcurve", help="reporting-probability CSV (cell_start,cell_end,reporting_prob)")
    _opt(i, "--analysis-date", dest="analysis_date")
    _opt(i, "--delay-window", dest="delay_window", type=float)
    _opt(i, "--seed", type=int)
    _opt(i, "--iterations", type=int)
    _opt(i, "--burn-in", dest="burn_in", type=int)
    _opt(i, "--thin", type=int)
    _opt(i, "--chains", type=int)
    _opt(i, "--cell-width", dest="cell_width", type=float)
    _opt(i, "--start", type=float)
    _opt(i, "--truncate", type=float, help="drop tips sampled less than this many days ago")
    _opt(i, "--rp-method", dest="rp_method", choices=["midpoint", "average"])
    _opt(i, "--allow-unconverged", dest="allow_unconverged", action="store_true")
    _opt(i, "--keep-draws", dest="keep_draws", action="store_true")
    _opt(i, "--jobs", type=int)

    e = sub.add_parser("evaluate", help="metric tables and plots across replicates")
    _opt(e, "--config")
    _opt(e, "--study", help="directory holding rep_* replicate directories")
    _opt(e, "--replicate", nargs="+")
    _opt(e, "--methods", nargs="+")
    _opt(e, "--periods", help="comma-separated day ranges, e.g. 0-7,7-14")
    _opt(e, "--window", type=int)
    _opt(e, "--out", required=True)

    d = sub.add_parser("delays", help="reporting-delay utilities")
    dsub = d.add_subparsers(dest="delays_command", required=True)
    f = dsub.add_parser("fit", help="fit the delay ECDF and write an r-curve")
    _opt(f, "--config")
    _opt(f, "--records", required=True)
    _opt(f, "--analysis-date", dest="analysis_date")
    _opt(f, "--delay-window", dest="delay_window", type=float)
    _opt(f, "--grid-end", dest="grid_end", type=float)
    _opt(f, "--tree")
    _opt(f, "--cell-width", dest="cell_width", type=float)
    _opt(f, "--start", type=float)
    _opt(f, "--rp-method", dest="rp_method", choices=["midpoint", "average"])
    _opt(f, "--out", required=True)
    q = dsub.add_parser("quantile", help="empirical delay quantile")
    _opt(q, "--config")
    _opt(q, "--records", required=True)
    _opt(q, "--q", type=float)
    _opt(q, "--analysis-date", dest="analysis_date")
    _opt(q, "--delay-window", dest="delay_window", type=float)
    return top


def load_config_file(path) -> dict:
    if path is None:
        return {}
    if not os.path.isfile(path):
        raise UsageError(f"config file not found: {path}")
    with open(path, "rb") as fh:
        raw = fh.read()
    if path.endswith(".json"):
        data = json.loads(raw)
    else:
        try:
            import tomllib
        except ModuleNotFoundError:  # Python < 3.11
            import tomli as tomllib
        data = tomllib.loads(raw.decode())
    return data


def resolve(command: str, args: argparse.Namespace) -> dict:
    """Merge defaults, config file and flags (flags win)."""
    given = {k: v for k, v in vars(args).items() if k not in ("command", "delays_command", "verbose")}
    cfg = load_config_file(given.pop("config", None))
    section = cfg.get(command.replace(" ", "_"), cfg.get(command, {}))
    flat = {k: v for k, v in cfg.items() if not isinstance(v, dict)}
    merged = dict(DEFAULTS[command])
    for src in (flat, section):
        for k, v in src.items():
            merged[k.replace("-", "_")] = v
    merged.update(given)
    return merged


# --------------------------------------------------------------------------- #
# simulate

def _load_delays(path, analysis_date=None, window=None):
    from .delays import fit_ecdf, read_delay_records, recent_records

    if not os.path.isfile(path):
        raise FileNotFoundError(f"delay records not found: {path}")
    records = read_delay_records(path)
    if analysis_date is not None and window is not None:
        records = recent_records(records, analysis_date, window)
    return fit_ecdf(records), records


def cmd_simulate(cfg: dict) -> int:
    from .delays import write_delay_records
    from .manifest import build_manifest, write_manifest
    from .simulate import SimConfig, delay_records, scenario, simulate_replicate, washington_like_delays, write_replicate

    if cfg["replicates"] < 1:
        raise UsageError("--replicates must be at least 1")
    out = cfg["out"]
    _ensure_writable(out)
    spec = scenario(cfg["scenario"])
    seeds = np.random.SeedSequence(cfg["seed"]).spawn(2)
    if cfg["delays"]:
        dist, records = _load_delays(cfg["delays"])
    else:
        dist = washington_like_delays(cfg["n_delays"], seed=np.random.default_rng(seeds[0]))
        records = delay_records(dist, cfg["analysis_date"], seed=np.random.default_rng(seeds[0]))
    write_delay_records(os.path.join(out, "delays.csv"), records)
    sim = SimConfig(beta1=cfg["beta1"], target_n=cfg["target_n"], delays=dist,
                    truncation_days=cfg["truncation_days"], seed=cfg["seed"])
    rep_seeds = [int(c.generate_state(1)[0]) for c in seeds[1].spawn(cfg["replicates"])]
    study_cfg = {k: v for k, v in cfg.items() if k not in ("out", "jobs")}

    def one(k):
        rep = simulate_replicate(spec, sim, seed=rep_seeds[k])
        write_replicate(rep, os.path.join(out, f"rep_{k:03d}"), study_cfg, index=k)
        return rep.metadata

    meta = _map(one, range(cfg["replicates"]), cfg["jobs"])
    write_manifest(os.path.join(out, "manifest.json"),
                   build_manifest("simulate", study_cfg, cfg["seed"], replicates=len(meta),
                                  replicate_seeds=rep_seeds))
    log.info("wrote %d replicate(s) to %s", len(meta), out)
    return EXIT_OK


def _map(fn, items, jobs):
    items = list(items)
    if jobs and jobs > 1 and len(items) > 1:
        from joblib import Parallel, delayed
        return Parallel(n_jobs=jobs, prefer="threads")(delayed(fn)(x) for x in items)
    return [fn(x) for x in items]


def _ensure_writable(path):
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {path}: {exc}") from None
    if not os.access(path, os.W_OK):
        raise UsageError(f"output directory is not writable: {path}")


# --------------------------------------------------------------------------- #
# infer

def _load_observed(tree_path, times_path):
    from .genealogy import parse_newick
    from .simulate import read_times

    for p in (tree_path, times_path):
        if p is None:
            raise UsageError("infer needs --tree and --times, or --replicate")
        if not os.path.isfile(p):
            raise FileNotFoundError(f"input not found: {p}")
    labels, times, reported = read_times(times_path)
    tmap = dict(zip(labels, times))
    with open(tree_path) as fh:
        return parse_newick(fh.read(), tip_times=tmap)


def cmd_infer(cfg: dict) -> int:
    from .delays import reporting_probs, rcurve_on_grid
    from .inference import McmcConfig, ModelVariant, Tag, run_mcmc
    from .inference.mcmc import inference_grid
    from .manifest import build_manifest, write_manifest
    from .simulate import OBSERVED_TREE_FILE, TIMES_FILE, truncate_dataset

    try:
        tag = Tag(cfg["model"])
    except ValueError:
        raise UsageError(f"unknown model {cfg['model']!r}") from None
    variant = ModelVariant(tag)
    if not variant.uses_reporting and (cfg["delays"] or cfg["rcurve"]):
        warnings.warn(f"--model {tag.value} does not use reporting delays; --delays/--rcurve ignored",
                      UserWarning, stacklevel=2)
    if variant.uses_reporting and not (cfg["delays"] or cfg["rcurve"]):
        raise UsageError(f"--model {tag.value} needs --delays (delay records CSV) or --rcurve")

    jobs = []
    if cfg["replicate"]:
        for rd in cfg["replicate"]:
            if not os.path.isdir(rd):
                raise FileNotFoundError(f"replicate directory not found: {rd}")
            out = cfg["out"] or os.path.join(rd, "fits", _fit_name(cfg))
            if cfg["out"] and len(cfg["replicate"]) > 1:
                out = os.path.join(cfg["out"], os.path.basename(os.path.normpath(rd)))
            jobs.append((os.path.join(rd, OBSERVED_TREE_FILE), os.path.join(rd, TIMES_FILE), out))
    else:
        if cfg["out"] is None:
            raise UsageError("infer needs --out when --tree/--times are given")
        jobs.append((cfg["tree"], cfg["times"], cfg["out"]))
    for _, _, out in jobs:
        _ensure_writable(out)

    dist = None
    if variant.uses_reporting and cfg["delays"] and not cfg["rcurve"]:
        dist, _ = _load_delays(cfg["delays"], cfg["analysis_date"],
                               cfg["delay_window"] if cfg["analysis_date"] else None)
    mcmc = McmcConfig(iterations=cfg["iterations"], burn_in=cfg["burn_in"], thin=cfg["thin"],
                      chains=cfg["chains"], seed=cfg["seed"])
    run_cfg = {k: v for k, v in cfg.items() if k not in ("out", "replicate", "tree", "times", "jobs")}

    def one(job):
        tree_path, times_path, out = job
        tree = _load_observed(tree_path, times_path)
        start = cfg["start"]
        if cfg["truncate"] is not None:
            tree, _ = truncate_dataset(tree, None, cfg["truncate"])
            start = max(start, cfg["truncate"])
        grid = inference_grid(tree, start=start, cell_width=cfg["cell_width"])
        v = variant
        if v.uses_reporting:
            if cfg["rcurve"]:
                r = rcurve_on_grid(cfg["rcurve"], grid)
            else:
                r = reporting_probs(dist, grid, method=cfg["rp_method"])
            v = v.with_reporting(r)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", ConvergenceWarning)
            summ = run_mcmc(mcmc, v, tree, grid=grid, keep_draws=cfg["keep_draws"])
        for w in caught:
            log.warning("%s: %s", out, w.message)
        summ.write_csv(os.path.join(out, "summary.csv"))
        summ.write_json(os.path.join(out, "summary.json"))
        summ.write_diagnostics(os.path.join(out, "diagnostics.json"))
        if cfg["keep_draws"]:
            summ.write_draws(os.path.join(out, "draws.csv"))
        write_manifest(os.path.join(out, "manifest.json"),
                       build_manifest("infer", run_cfg, cfg["seed"],
                                      inputs={"tree": tree_path, "times": times_path},
                                      converged=summ.converged))
        return summ.converged

    results = _map(one, jobs, cfg["jobs"])
    if not all(results) and not cfg["allow_unconverged"]:
        raise Unconverged(f"{results.count(False)} fit(s) failed the convergence diagnostics "
                          "(rerun with more iterations or pass --allow-unconverged)")
    return EXIT_OK


def _fit_name(cfg):
    return "bnpr-truncated" if cfg["truncate"] is not None and cfg["model"] == "bnpr" else cfg["model"]


# --------------------------------------------------------------------------- #
# evaluate

def _parse_periods(text):
    from .evaluate import DEFAULT_PERIODS

    if text is None:
        return list(DEFAULT_PERIODS)
    if isinstance(text, list):
        return [tuple(map(float, p)) for p in text]
    out = []
    for part in str(text).split(","):
        try:
            a, b = part.split("-")
            out.append((float(a), float(b)))
        except ValueError:
            raise UsageError(f"cannot parse period {part!r}; use e.g. 0-7,7-14") from None
    return out


def cmd_evaluate(cfg: dict) -> int:
    from .evaluate import (METRIC_TITLES, METRICS, aggregate, period_table, replicate_metrics,
                           svg_line_plot, write_period_table, write_series_csv)
    from .inference.mcmc import PosteriorSummary
    from .manifest import build_manifest, write_manifest
    from .simulate import TRUTH_FILE, read_truth
    from .study import METHOD_LABELS

    if cfg["study"]:
        if not os.path.isdir(cfg["study"]):
            raise FileNotFoundError(f"study directory not found: {cfg['study']}")
        reps = sorted(glob.glob(os.path.join(cfg["study"], "rep_*")))
    elif cfg["replicate"]:
        reps = list(cfg["replicate"])
    else:
        raise UsageError("evaluate needs --study or --replicate")
    if not reps:
        raise DataError("no replicate directories found")
    out = cfg["out"]
    _ensure_writable(out)
    periods = _parse_periods(cfg["periods"])

    methods = cfg["methods"]
    if methods is None:
        found = set()
        for rd in reps:
            found.update(os.path.basename(p) for p in glob.glob(os.path.join(rd, "fits", "*")))
        methods = sorted(found)
    if not methods:
        raise DataError("no fitted methods found under <replicate>/fits/")

    per_method = {m: [] for m in methods}
    for rd in reps:
        truth_path = os.path.join(rd, TRUTH_FILE)
        if not os.path.isfile(truth_path):
            raise FileNotFoundError(f"replicate {rd}: missing truth file {TRUTH_FILE}")
        days, ne = read_truth(truth_path)
        for m in methods:
            path = os.path.join(rd, "fits", m, "summary.csv")
            if not os.path.isfile(path):
                raise FileNotFoundError(f"replicate {rd}: missing fit {m} ({path})")
            summ = PosteriorSummary.read_csv(path, m)
            g = summ.grid
            if days.size and (g.boundaries[-1] < days.min() or g.boundaries[0] > days.max()):
                raise AlignmentError(f"replicate {rd}: grid of {m} does not overlap the truth days")
            per_method[m].append(replicate_metrics(summ, ne, days))

    labels = {m: METHOD_LABELS.get(m, m) for m in methods}
    raw = {labels[m]: aggregate(v) for m, v in per_method.items()}
    smooth = {k: s.smoothed(cfg["window"]) for k, s in raw.items()}
    for metric in METRICS:
        tab = period_table(raw, periods, metric)
        write_period_table(os.path.join(out, f"{metric}_table.csv"), tab, list(raw))
        write_series_csv(os.path.join(out, f"{metric}_ma{cfg['window']}.csv"), smooth, metric)
        first = next(iter(smooth.values()))
        svg_line_plot(os.path.join(out, f"{metric}.svg"), first.points,
                      {k: s.get(metric) for k, s in smooth.items()},
                      title=f"{METRIC_TITLES[metric]} ({cfg['window']}-day moving average)",
                      ylabel=metric, reference=0.0 if metric == "mrd" else None)
    eval_cfg = {k: v for k, v in cfg.items() if k != "out"}
    eval_cfg["replicates"] = [os.path.basename(os.path.normpath(r)) for r in reps]
    eval_cfg["methods"] = list(methods)
    write_manifest(os.path.join(out, "manifest.json"), build_manifest("evaluate", eval_cfg, None))
    return EXIT_OK


# --------------------------------------------------------------------------- #
# delays

def cmd_delays_fit(cfg: dict) -> int:
    from .delays import quantile, reporting_probs, write_rcurve
    from .genealogy import read_newick
    from .grid import build_grid

    dist, _ = _load_delays(cfg["records"], cfg["analysis_date"],
                           cfg["delay_window"] or (30.0 if cfg["analysis_date"] else None))
    end = cfg["grid_end"]
    if end is None and cfg["tree"]:
        end = read_newick(cfg["tree"]).root_time + cfg["start"]
    if end is None:
        end = quantile(dist, 1.0) + cfg["cell_width"]
    grid = build_grid(cfg["start"], end, cfg["cell_width"])
    r = reporting_probs(dist, grid, method=cfg["rp_method"])
    parent = os.path.dirname(os.path.abspath(cfg["out"]))
    _ensure_writable(parent)
    write_rcurve(cfg["out"], grid, r)
    print(f"n={dist.n} median={quantile(dist, 0.5):g} p90={quantile(dist, 0.9):g}")
    return EXIT_OK


def cmd_delays_quantile(cfg: dict) -> int:
    from .delays import quantile

    dist, _ = _load_delays(cfg["records"], cfg["analysis_date"],
                           cfg["delay_window"] or (30.0 if cfg["analysis_date"] else None))
    print(f"{quantile(dist, cfg['q']):g}")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "infer": cmd_infer,
    "evaluate": cmd_evaluate,
    "delays fit": cmd_delays_fit,
    "delays quantile": cmd_delays_quantile,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    command = args.command
    if command == "delays":
        command = f"delays {args.delays_command}"
    try:
        cfg = resolve(command, args)
        return COMMANDS[command](cfg)
    except Unconverged as exc:
        print(f"phylodelay: {exc}", file=sys.stderr)
        return EXIT_UNCONVERGED
    except ConfigurationError as exc:
        print(f"phylodelay: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError, PhylodelayError) as exc:
        print(f"phylodelay: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
