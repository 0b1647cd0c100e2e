"""
Synthetic data following the real-time preferential-sampling protocol:
a trajectory, Poisson sampling times with intensity ``exp(beta_0) Ne(t)^beta_1``,
a coalescent genealogy, Bernoulli reporting by the analysis time, and the
pruned observed dataset.

The trajectories are parametric stand-ins labelled "scenario-A/B/C-like";
they mimic a two-wave epidemic viewed from three analysis times and are not
a reproduction of any published curve.
"""
from __future__ import annotations

import datetime as _dt
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .delays import DelayDistribution
from .errors import ConfigurationError, DegenerateTreeError
from .genealogy import Genealogy, prune_unreported

DESK_N_SAMPLES = 300
DESK_REPLICATES = 100
FULL_SCALE_N_SAMPLES = 1500
FULL_SCALE_REPLICATES = 500

KINDS = ("constant", "exponential", "boom-bust", "double-peak")


@dataclass(frozen=True)
class TrajectorySpec:
    """
    Analytic Ne(t), ``t`` in days before the analysis time.

    ``kind`` and ``params``:

    * ``constant``: ``value``
    * ``exponential``: ``n0`` (Ne at t = 0), ``rate`` (growth per day towards the present)
    * ``boom-bust``: ``base``, ``peak``, ``peak_time``, ``rate_up``, ``rate_down``
    * ``double-peak``: ``base``, ``h1``, ``c1``, ``w1``, ``h2``, ``c2``, ``w2``, ``anchor``;
      two Gaussian waves in forward time ``tau = anchor - t``.

    ``span`` is the sampling window ``(start, end)``.
    """

    kind: str
    params: dict
    span: tuple = (0.0, 100.0)
    name: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown trajectory kind {self.kind!r}; choose from {KINDS}")
        a, b = self.span
        if not b > a:
            raise ConfigurationError("trajectory span must have end > start")
        lo, _ = self.bounds()
        if not lo > 0:
            raise ConfigurationError("trajectory must stay strictly positive")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        p = self.params
        if self.kind == "constant":
            out = np.full_like(t, float(p["value"]))
        elif self.kind == "exponential":
            out = p["n0"] * np.exp(-p["rate"] * t)
        elif self.kind == "boom-bust":
            dt = t - p["peak_time"]
            rate = np.where(dt > 0, p["rate_up"], p["rate_down"])
            out = p["base"] + (p["peak"] - p["base"]) * np.exp(-rate * np.abs(dt))
        else:
            tau = p["anchor"] - t
            out = (p["base"]
                   + p["h1"] * np.exp(-0.5 * ((tau - p["c1"]) / p["w1"]) ** 2)
                   + p["h2"] * np.exp(-0.5 * ((tau - p["c2"]) / p["w2"]) ** 2))
        return float(out) if out.ndim == 0 else out

    def bounds(self, lo: float | None = None, hi: float | None = None) -> tuple:
        """Analytic ``(inf, sup)`` of Ne over ``[lo, hi]`` (default: the span)."""
        lo = self.span[0] if lo is None else lo
        hi = self.span[1] if hi is None else hi
        p = self.params
        if self.kind == "constant":
            v = float(p["value"])
            return v, v
        if self.kind == "exponential":
            ends = [p["n0"] * math.exp(-p["rate"] * x) for x in (lo, hi)]
            return min(ends), max(ends)
        if self.kind == "boom-bust":
            return float(p["base"]), float(p["peak"])
        return float(p["base"]), float(p["base"] + p["h1"] + p["h2"])

    def intensity_integral(self, beta1: float) -> float:
        """``int Ne(t)^beta1 dt`` over the span."""
        a, b = self.span
        val, _ = integrate.quad(lambda t: self(t) ** beta1, a, b, limit=200,
                                epsabs=0.0, epsrel=1e-10)
        return float(val)


def _double_peak(anchor: float, span_end: float, name: str) -> TrajectorySpec:
    params = dict(base=5.0, h1=45.0, c1=165.0, w1=30.0, h2=60.0, c2=270.0, w2=25.0,
                  anchor=anchor)
    return TrajectorySpec("double-peak", params, (0.0, span_end), name)


SCENARIOS = {
    # rising through the first wave at analysis time
    "a-like": lambda: _double_peak(154.0, 154.0, "scenario-A-like"),
    # climbing out of the trough into the second wave
    "b-like": lambda: _double_peak(228.0, 228.0, "scenario-B-like"),
    # declining after the second peak
    "c-like": lambda: _double_peak(307.0, 307.0, "scenario-C-like"),
}


def scenario(name: str) -> TrajectorySpec:
    key = name.lower()
    if key not in SCENARIOS:
        raise ConfigurationError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}")
    return SCENARIOS[key]()


@dataclass(frozen=True)
class SimConfig:
    beta0: float | None = None
    beta1: float = 2.0
    target_n: int | None = DESK_N_SAMPLES
    analysis_time: float = 0.0
    delays: DelayDistribution | None = None
    truncation_days: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.beta0 is None and self.target_n is None:
            raise ConfigurationError("give beta0 or target_n")
        if self.target_n is not None and self.target_n < 2:
            raise ConfigurationError("target_n must be at least 2")
        if not math.isfinite(self.beta1):
            raise ConfigurationError("beta1 must be a real number")

    def resolved_beta0(self, spec: TrajectorySpec) -> float:
        if self.target_n is not None:
            return math.log(self.target_n / spec.intensity_integral(self.beta1))
        return float(self.beta0)


def _rng(seed_or_rng):
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return np.random.default_rng(seed_or_rng)


def simulate_sampling_times(spec: TrajectorySpec, config: SimConfig, rng=None,
                            intensity_scale=None) -> np.ndarray:
    """
    Sampling times by Lewis-Shedler thinning on the span.

    :param intensity_scale: optional ``t -> [0, 1]`` multiplying the intensity
        (e.g. a reporting-probability curve).
    :returns: sorted times (days before analysis).
    """
    rng = _rng(config.seed if rng is None else rng)
    beta0 = config.resolved_beta0(spec)
    lo, hi = spec.bounds()
    b1 = config.beta1
    if b1 < 0 and lo <= 0:
        raise ConfigurationError("intensity is unbounded: Ne reaches 0 with beta1 < 0")
    peak = hi ** b1 if b1 >= 0 else lo ** b1
    bound = math.exp(beta0) * peak
    if not math.isfinite(bound):
        raise ConfigurationError("intensity bound is not finite")
    a, b = spec.span
    n_cand = rng.poisson(bound * (b - a))
    cand = a + (b - a) * rng.random(n_cand)
    lam = np.exp(beta0) * np.asarray(spec(cand), dtype=float) ** b1
    if intensity_scale is not None:
        lam = lam * np.asarray(intensity_scale(cand), dtype=float)
    keep = rng.random(n_cand) * bound < lam
    return np.sort(cand[keep])


class _CumulativeRate:
    """Tabulated ``Lambda(t) = int_{t0}^{t} du / Ne(u)`` with its inverse, extended on demand."""

    def __init__(self, ne, t0, step=0.01, chunk=200.0, horizon=2e4):
        self.ne = ne
        self.horizon = horizon
        self.step = step
        self.chunk = chunk
        self.t = np.array([t0])
        self.cum = np.array([0.0])
        self._extend(t0 + chunk)

    def _extend(self, until):
        while self.t[-1] < until:
            t_last = self.t[-1]
            n = int(math.ceil(self.chunk / self.step))
            new_t = t_last + self.step * np.arange(1, n + 1)
            pts = np.concatenate([[t_last], new_t])
            with np.errstate(over="ignore"):
                inv = 1.0 / np.asarray(self.ne(pts), dtype=float)
            inc = 0.5 * (inv[1:] + inv[:-1]) * self.step
            self.t = np.concatenate([self.t, new_t])
            self._last_inc = float(inc.sum())
            self.cum = np.concatenate([self.cum, self.cum[-1] + np.cumsum(inc)])

    def at(self, t):
        self._extend(t)
        return float(np.interp(t, self.t, self.cum))

    def inverse(self, target):
        while self.cum[-1] < target:
            if self.t[-1] - self.t[0] > self.horizon or (len(self.cum) > 1 and self._last_inc == 0):
                raise DegenerateTreeError(
                    f"lineages fail to coalesce within {self.horizon:g} days; "
                    "the trajectory grows too fast into the past")
            self._extend(self.t[-1] + self.chunk)
        return float(np.interp(target, self.cum, self.t))


def simulate_coalescent(sampling_times, spec, seed=None, labels=None) -> Genealogy:
    """
    Heterochronous coalescent genealogy by time transformation.

    Going back in time, the next coalescence is where ``int A(t)/Ne(t) dt``
    reaches an Exp(1) draw; a sampling event before that point resets the
    clock. A uniformly chosen pair merges at each coalescence.

    :param spec: trajectory or any callable ``t -> Ne(t)``.
    """
    rng = _rng(seed)
    times = np.asarray(sampling_times, dtype=float)
    n = times.size
    if n < 2:
        raise DegenerateTreeError("need at least two samples to simulate a genealogy")
    labels = list(labels) if labels is not None else [f"s{i:05d}" for i in range(n)]
    order = np.argsort(times, kind="stable")
    clock = _CumulativeRate(spec, float(times[order[0]]))

    node_times = np.empty(2 * n - 1)
    node_times[:n] = times
    parent = np.full(2 * n - 1, -1, dtype=np.int64)
    children = np.full((2 * n - 1, 2), -1, dtype=np.int64)

    active = []
    next_sample = 0
    t = float(times[order[0]])
    new_node = n
    while True:
        while next_sample < n and times[order[next_sample]] <= t:
            active.append(int(order[next_sample]))
            next_sample += 1
        t_next_sample = times[order[next_sample]] if next_sample < n else math.inf
        k = len(active)
        if k < 2:
            if next_sample >= n:
                break
            t = float(t_next_sample)
            continue
        a_factor = k * (k - 1) / 2.0
        target = clock.at(t) + rng.exponential() / a_factor
        t_coal = clock.inverse(target)
        if t_coal >= t_next_sample:
            t = float(t_next_sample)
            continue
        i, j = rng.choice(k, size=2, replace=False)
        left, right = active[i], active[j]
        for idx in sorted((i, j), reverse=True):
            active.pop(idx)
        t_coal = max(t_coal, np.nextafter(max(node_times[left], node_times[right]), math.inf))
        node_times[new_node] = t_coal
        children[new_node] = (left, right)
        parent[left] = parent[right] = new_node
        active.append(new_node)
        new_node += 1
        t = t_coal
    return Genealogy(tuple(labels), node_times, parent, children)


def simulate_reporting(sampling_times, delays: DelayDistribution, analysis_time: float = 0.0,
                       seed=None) -> np.ndarray:
    """Bernoulli reported flags with probability ``F(t - analysis_time)``."""
    rng = _rng(seed)
    tau = np.asarray(sampling_times, dtype=float) - analysis_time
    return rng.random(tau.size) < delays.ecdf(tau)


def make_observed_dataset(tree: Genealogy, flags) -> tuple:
    """Prune unreported tips; returns ``(genealogy, observed sampling times)``."""
    flags = np.asarray(flags, dtype=bool)
    if flags.sum() < 2:
        raise DegenerateTreeError(f"only {int(flags.sum())} sample(s) reported")
    reported = [lab for lab, f in zip(tree.labels, flags) if f]
    observed = prune_unreported(tree, reported)
    return observed, np.asarray(observed.tip_times, dtype=float).copy()


def truncate_dataset(tree: Genealogy, times=None, cutoff_days: float = 0.0) -> tuple:
    """Drop every tip sampled less than ``cutoff_days`` before the analysis time."""
    keep = [lab for lab, t in zip(tree.labels, tree.tip_times) if t >= cutoff_days]
    if len(keep) < 2:
        raise DegenerateTreeError(f"cutoff {cutoff_days} leaves {len(keep)} tip(s)")
    pruned = prune_unreported(tree, keep)
    return pruned, np.asarray(pruned.tip_times, dtype=float).copy()


# --------------------------------------------------------------------------- #
# Synthetic reporting delays

WASHINGTON_LIKE_MEDIAN = 15.0
WASHINGTON_LIKE_P90 = 41.0


def washington_like_delays(n: int = 2000, seed=None) -> DelayDistribution:
    """
    Integer-day delays from a log-normal with median 15 days and 90th
    percentile 41 days, the shape used for the synthetic real-time studies.
    """
    rng = _rng(seed)
    sigma = math.log(WASHINGTON_LIKE_P90 / WASHINGTON_LIKE_MEDIAN) / 1.2815515655446004
    raw = rng.lognormal(math.log(WASHINGTON_LIKE_MEDIAN), sigma, size=n)
    return DelayDistribution(np.maximum(np.round(raw), 1.0))


def delay_records(dist: DelayDistribution, analysis_date="2021-08-01", seed=None) -> list:
    """
    Turn delays into ``(collection_date, report_date)`` records whose report
    dates fall within the 30 days before ``analysis_date``.
    """
    rng = _rng(seed)
    end = _dt.date.fromisoformat(str(analysis_date))
    out = []
    for d in dist.delays:
        report = end - _dt.timedelta(days=int(rng.integers(0, 31)))
        out.append((report - _dt.timedelta(days=int(d)), report))
    return out


# --------------------------------------------------------------------------- #
# Replicates

@dataclass
class Replicate:
    trajectory: TrajectorySpec
    full_tree: Genealogy
    times: np.ndarray
    reported: np.ndarray
    observed_tree: Genealogy
    observed_times: np.ndarray
    beta0: float
    seed: int
    metadata: dict = field(default_factory=dict)


def simulate_replicate(spec: TrajectorySpec, config: SimConfig, seed: int | None = None) -> Replicate:
    """One full-protocol replicate; ``seed`` overrides ``config.seed``."""
    if config.delays is None:
        raise ConfigurationError("SimConfig.delays is required to simulate reporting")
    seed = config.seed if seed is None else seed
    s_times, s_tree, s_report = np.random.SeedSequence(seed).spawn(3)
    times = simulate_sampling_times(spec, config, rng=np.random.default_rng(s_times))
    if times.size < 2:
        raise DegenerateTreeError("fewer than two samples were simulated")
    tree = simulate_coalescent(times, spec, seed=np.random.default_rng(s_tree))
    flags = simulate_reporting(times, config.delays, config.analysis_time,
                               seed=np.random.default_rng(s_report))
    observed, obs_times = make_observed_dataset(tree, flags)
    meta = {
        "n_samples": int(times.size),
        "n_reported": int(flags.sum()),
        "desk_scale_factor_samples": (config.target_n or times.size) / FULL_SCALE_N_SAMPLES,
    }
    return Replicate(spec, tree, times, flags, observed, obs_times,
                     config.resolved_beta0(spec), seed, meta)


# --------------------------------------------------------------------------- #
# Replicate files

TREE_FILE = "tree.nwk"
OBSERVED_TREE_FILE = "observed.nwk"
TIMES_FILE = "times.csv"
TRUTH_FILE = "truth.csv"
MANIFEST_FILE = "manifest.json"


def trajectory_to_dict(spec: TrajectorySpec) -> dict:
    return {"kind": spec.kind, "params": dict(spec.params), "span": list(spec.span), "name": spec.name}


def trajectory_from_dict(d: dict) -> TrajectorySpec:
    return TrajectorySpec(d["kind"], dict(d["params"]), tuple(d["span"]), d.get("name", ""))


def write_replicate(rep: Replicate, directory, config: dict, index: int = 0) -> None:
    """
    Write ``tree.nwk`` (full genealogy), ``observed.nwk`` (reported tips only),
    ``times.csv`` (``label,time,reported``), ``truth.csv`` (``day,ne`` at daily
    points) and ``manifest.json``.
    """
    import csv
    import os

    from .evaluate import evaluation_points
    from .genealogy import serialize_newick
    from .manifest import build_manifest, write_manifest

    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, TREE_FILE), "w") as fh:
        fh.write(serialize_newick(rep.full_tree, precision=17) + "\n")
    with open(os.path.join(directory, OBSERVED_TREE_FILE), "w") as fh:
        fh.write(serialize_newick(rep.observed_tree, precision=17) + "\n")
    with open(os.path.join(directory, TIMES_FILE), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label", "time", "reported"])
        for lab, t, f in zip(rep.full_tree.labels, rep.times, rep.reported):
            w.writerow([lab, repr(float(t)), int(f)])
    pts = evaluation_points(*rep.trajectory.span)
    with open(os.path.join(directory, TRUTH_FILE), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["day", "ne"])
        for t, v in zip(pts, rep.trajectory(pts)):
            w.writerow([repr(float(t)), repr(float(v))])
    manifest = build_manifest(
        "replicate", config, rep.seed, replicate=index,
        trajectory=trajectory_to_dict(rep.trajectory), beta0=rep.beta0, **rep.metadata,
    )
    write_manifest(os.path.join(directory, MANIFEST_FILE), manifest)


def read_times(path) -> tuple:
    """``label,time[,reported]`` CSV into ``(labels, times, reported)``; reported defaults to 1."""
    import csv

    from .errors import DataError

    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"label", "time"} <= set(reader.fieldnames):
            raise DataError(f"{path}: expected columns label,time[,reported]")
        rows = list(reader)
    labels = [r["label"] for r in rows]
    try:
        times = np.array([float(r["time"]) for r in rows])
        reported = np.array([bool(int(r.get("reported") or 1)) for r in rows])
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    return labels, times, reported


def read_truth(path) -> tuple:
    import csv

    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return (np.array([float(r["day"]) for r in rows]), np.array([float(r["ne"]) for r in rows]))
