"""
Independent reference computations used by the tests.

Nothing here imports the package's likelihood, summary or evaluation code;
each oracle takes a different route to the same quantity (event sweeps,
brute-force quadrature, explicit loops).
"""
import math

import numpy as np


# --------------------------------------------------------------------------- #
# Random trees

def random_tree_arrays(n, rng, spread=3.0, lattice=None, ne=1.0):
    """
    Random heterochronous binary tree as raw arrays ``(times, parent, children)``.

    Tips are nodes ``0..n-1``. With ``lattice`` every node time is a distinct
    multiple of ``lattice`` (tips may share a time).
    """
    tip_t = rng.uniform(0.0, spread, size=n)
    tip_t[rng.integers(n)] = 0.0
    if lattice:
        tip_t = np.round(tip_t / lattice) * lattice
    order = list(np.argsort(tip_t, kind="stable"))
    times = np.zeros(2 * n - 1)
    times[:n] = tip_t
    parent = np.full(2 * n - 1, -1)
    children = np.full((2 * n - 1, 2), -1)
    active = []
    t = tip_t[order[0]]
    nxt = 0
    node = n
    used = set()
    while node < 2 * n - 1:
        while nxt < n and tip_t[order[nxt]] <= t:
            active.append(order[nxt])
            nxt += 1
        k = len(active)
        if k < 2:
            t = tip_t[order[nxt]]
            continue
        wait = rng.exponential(ne / (k * (k - 1) / 2))
        t_new = t + wait
        if nxt < n and t_new > tip_t[order[nxt]]:
            t = tip_t[order[nxt]]
            continue
        if lattice:
            t_new = math.ceil(t_new / lattice) * lattice
            floor = max(times[a] for a in active)
            while t_new <= floor or round(t_new / lattice) in used or (t_new <= t):
                t_new += lattice
            used.add(round(t_new / lattice))
        i, j = rng.choice(k, size=2, replace=False)
        a, b = active[i], active[j]
        for idx in sorted((i, j), reverse=True):
            active.pop(idx)
        times[node] = t_new
        children[node] = (a, b)
        parent[a] = parent[b] = node
        active.append(node)
        node += 1
        t = t_new
        # tips that arrived during a lattice bump
        while nxt < n and tip_t[order[nxt]] <= t:
            active.append(order[nxt])
            nxt += 1
    return times, parent, children


def arrays_to_newick(times, parent, children, labels):
    n = len(labels)
    root = int(np.flatnonzero(parent < 0)[0])

    def rec(v):
        if v < n:
            s = labels[v]
        else:
            s = "(" + ",".join(rec(int(c)) for c in children[v]) + ")"
        if parent[v] >= 0:
            s += f":{float(times[parent[v]] - times[v])!r}"
        return s

    return rec(root) + ";"


# --------------------------------------------------------------------------- #
# Coalescent

def _cell_of(t, boundaries):
    """Half-open (x_d, x_{d+1}] lookup by linear scan; the start maps to cell 0."""
    for d in range(len(boundaries) - 1):
        if t <= boundaries[d + 1] and (t > boundaries[d] or d == 0):
            return d
    raise ValueError(f"{t} outside grid")


def direct_coalescent_loglik(tip_times, coal_times, boundaries, gamma):
    """
    Likelihood of a dated genealogy by sweeping events backwards in time:
    for every inter-event segment add ``-int A / Ne``; at every coalescence
    add ``log A - log Ne(t)``.
    """
    events = [(float(t), 1) for t in tip_times] + [(float(t), -1) for t in coal_times]
    # coalescences before samplings at equal times
    events.sort(key=lambda e: (e[0], e[1]))
    ll = 0.0
    lineages = 0
    prev = events[0][0]
    for t, kind in events:
        if lineages >= 2 and t > prev:
            a = lineages * (lineages - 1) / 2.0
            for d in range(len(boundaries) - 1):
                lo = max(prev, boundaries[d])
                hi = min(t, boundaries[d + 1])
                if hi > lo:
                    ll -= a * (hi - lo) * math.exp(-gamma[d])
        if kind == -1:
            a = lineages * (lineages - 1) / 2.0
            ll += math.log(a) - gamma[_cell_of(t, boundaries)]
            lineages -= 1
        else:
            lineages += 1
        prev = t
    return ll


def constant_ne_loglik(tip_times, coal_times, ne):
    """Closed-form log density for a constant Ne (segment sums of A / Ne)."""
    events = sorted([(float(t), 1) for t in tip_times] + [(float(t), -1) for t in coal_times],
                    key=lambda e: (e[0], e[1]))
    ll, lineages, prev = 0.0, 0, events[0][0]
    for t, kind in events:
        a = lineages * (lineages - 1) / 2.0
        ll -= a * (t - prev) / ne
        if kind == -1:
            ll += math.log(a / ne)
            lineages -= 1
        else:
            lineages += 1
        prev = t
    return ll


def quadrature_exposure(times, parent, boundaries, h=1e-4):
    """
    Midpoint-rule ``int A(t) dt`` per cell with ``A`` counted from branch spans
    (a branch is active on ``(t_child, t_parent)``). Exact when every node time
    and boundary is a multiple of ``h``.
    """
    child_t = times[parent >= 0]
    parent_t = times[parent[parent >= 0]]
    out = np.zeros(len(boundaries) - 1)
    for d in range(len(boundaries) - 1):
        a, b = boundaries[d], boundaries[d + 1]
        m = int(round((b - a) / h))
        mids = a + h * (np.arange(m) + 0.5)
        l = ((child_t[None, :] < mids[:, None]) & (mids[:, None] < parent_t[None, :])).sum(axis=1)
        out[d] = float(np.sum(l * (l - 1) / 2.0) * h)
    return out


# --------------------------------------------------------------------------- #
# Sampling

def direct_sampling_loglik(m, w, offset, beta, gamma, F=None):
    ll = 0.0
    for d in range(len(m)):
        if w[d] <= 0 or not math.isfinite(offset[d]):
            continue
        eta = offset[d] + beta[0] + beta[1] * gamma[d]
        if F is not None:
            for j in range(F.shape[1]):
                eta += beta[2 + j] * F[d, j]
        ll += m[d] * eta - w[d] * math.exp(eta)
    return ll


# --------------------------------------------------------------------------- #
# Posterior for a single-cell cherry

def cherry_posterior_mean_exp_neg_gamma(exposure, count=1.0, sigma_sq=100.0, n=1_000_000):
    """``E[exp(-gamma)]`` under ``exp(-C gamma - E e^-gamma) N(gamma; 0, sigma_sq)`` by quadrature."""
    g = np.linspace(-40.0, 40.0, n)
    logp = -count * g - exposure * np.exp(-g) - 0.5 * g * g / sigma_sq
    logp -= logp.max()
    p = np.exp(logp)
    return float(np.trapezoid(np.exp(-g) * p, g) / np.trapezoid(p, g))


# --------------------------------------------------------------------------- #
# Genealogy

def mrca_depths(times, parent, n, keep_idx):
    """All-pairs MRCA time among ``keep_idx`` tips via explicit ancestor walks."""
    def ancestors(v):
        out = []
        while v >= 0:
            out.append(v)
            v = parent[v]
        return out

    out = {}
    for i in keep_idx:
        anc_i = ancestors(i)
        for j in keep_idx:
            if j <= i:
                continue
            set_j = set(ancestors(j))
            m = next(a for a in anc_i if a in set_j)
            out[(i, j)] = float(times[m])
    return out


# --------------------------------------------------------------------------- #
# Evaluation

def brute_moving_average(x, window):
    n = len(x)
    lo = (window - 1) // 2
    hi = window - 1 - lo
    out = []
    for i in range(n):
        vals = [x[j] for j in range(max(0, i - lo), min(n, i + hi + 1)) if math.isfinite(x[j])]
        out.append(sum(vals) / len(vals) if vals else float("nan"))
    return np.array(out)
