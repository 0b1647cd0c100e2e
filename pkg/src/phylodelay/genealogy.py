"""
Dated genealogies: Newick ingestion, pruning of unreported tips, and the
interval decomposition consumed by the coalescent likelihood.

Node times are measured backwards (days before present). Tips occupy node ids
``0 .. n-1`` and internal nodes ``n .. 2n-2``.
"""
from __future__ import annotations

import csv
import datetime as _dt
import warnings
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .errors import (
    DataError,
    DateParseError,
    DegenerateTreeError,
    MissingBranchLengthError,
    NewickParseError,
    NonBinaryNodeError,
    TieWarning,
    UnbalancedParenthesesError,
)

SAMPLING = 1
COALESCENT = 0
TIE_JITTER = 1e-9
_RESERVED = set("(),:;[]")


@dataclass(frozen=True, eq=False)
class Genealogy:
    """
    Rooted binary tree with dated tips.

    :param labels: tip labels, tip ``i`` is node ``i``.
    :param times: node times (days before present), length ``2n - 1``.
    :param parent: parent id per node, ``-1`` at the root.
    :param children: ``(2n - 1, 2)`` child ids, ``-1`` rows for tips.
    """

    labels: tuple
    times: np.ndarray
    parent: np.ndarray
    children: np.ndarray

    def __post_init__(self):
        times = np.array(self.times, dtype=float)
        parent = np.array(self.parent, dtype=np.int64)
        children = np.array(self.children, dtype=np.int64).reshape(-1, 2)
        object.__setattr__(self, "labels", tuple(str(x) for x in self.labels))
        n = len(self.labels)
        if n < 2:
            raise DegenerateTreeError("a genealogy needs at least two tips")
        n_nodes = 2 * n - 1
        if times.shape != (n_nodes,) or parent.shape != (n_nodes,) or children.shape != (n_nodes, 2):
            raise DataError(f"expected {n} tips and {n - 1} internal nodes")
        if len(set(self.labels)) != n:
            raise DataError("tip labels must be unique")
        if not np.all(np.isfinite(times)):
            raise DataError("node times must be finite")
        if np.any(children[:n] != -1):
            raise DataError("tips cannot have children")
        if np.any(children[n:] < 0):
            raise DataError("every internal node needs exactly two children")
        roots = np.flatnonzero(parent == -1)
        if roots.size != 1 or roots[0] < n:
            raise DataError("genealogy must have exactly one internal root")
        for node in range(n, n_nodes):
            for child in children[node]:
                if parent[child] != node:
                    raise DataError("parent and child arrays disagree")
                if not times[node] > times[child]:
                    raise DataError(
                        f"node {node} at time {times[node]} is not older than child "
                        f"{child} at time {times[child]}"
                    )
        for arr in (times, parent, children):
            arr.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "parent", parent)
        object.__setattr__(self, "children", children)

    @property
    def n_tips(self) -> int:
        return len(self.labels)

    @property
    def root(self) -> int:
        return int(np.flatnonzero(self.parent == -1)[0])

    @property
    def root_time(self) -> float:
        return float(self.times[self.root])

    @property
    def tip_times(self) -> np.ndarray:
        return self.times[: self.n_tips]

    @property
    def coalescent_times(self) -> np.ndarray:
        return self.times[self.n_tips:]

    def tip_time(self, label: str) -> float:
        return float(self.times[self.labels.index(label)])

    def branch_lengths(self) -> np.ndarray:
        """Branch length above each node (0 for the root)."""
        out = np.zeros(self.times.size)
        nonroot = self.parent >= 0
        out[nonroot] = self.times[self.parent[nonroot]] - self.times[nonroot]
        return out

    def postorder(self) -> list:
        order, stack = [], [(self.root, False)]
        while stack:
            node, seen = stack.pop()
            if node < self.n_tips or seen:
                order.append(node)
                continue
            stack.append((node, True))
            stack.extend((int(c), False) for c in self.children[node][::-1])
        return order

    def clade_times(self) -> dict:
        """Map from frozenset of tip labels below each node to that node's time."""
        below = {}
        out = {}
        for node in self.postorder():
            if node < self.n_tips:
                below[node] = frozenset([self.labels[node]])
            else:
                a, b = self.children[node]
                below[node] = below[int(a)] | below[int(b)]
            out[below[node]] = float(self.times[node])
        return out

    def same_as(self, other: "Genealogy", tol: float = 1e-9) -> bool:
        """Equal topology, labels, and node times within ``tol``."""
        mine, theirs = self.clade_times(), other.clade_times()
        if mine.keys() != theirs.keys():
            return False
        return all(abs(mine[k] - theirs[k]) <= tol for k in mine)

    def shifted(self, delta: float) -> "Genealogy":
        """Same tree with every node time moved by ``delta`` days."""
        return Genealogy(self.labels, self.times + delta, self.parent, self.children)


def coalescent_factor(l: int) -> int:
    """Number of lineage pairs, ``l choose 2``."""
    if l < 0:
        raise ValueError("lineage count must be non-negative")
    return l * (l - 1) // 2


# --------------------------------------------------------------------------- #
# Newick I/O

class _Node:
    __slots__ = ("label", "length", "children", "offset")

    def __init__(self, offset):
        self.label = ""
        self.length = None
        self.children = []
        self.offset = offset


def _skip_space_and_comments(text, i):
    n = len(text)
    while i < n:
        c = text[i]
        if c.isspace():
            i += 1
        elif c == "[":
            j = text.find("]", i)
            if j < 0:
                raise NewickParseError("unterminated comment", i)
            i = j + 1
        else:
            break
    return i


def _read_label(text, i):
    n = len(text)
    if i < n and text[i] in "'\"":
        quote = text[i]
        j = i + 1
        buf = []
        while True:
            if j >= n:
                raise NewickParseError("unterminated quoted label", i)
            if text[j] == quote:
                if j + 1 < n and text[j + 1] == quote:
                    buf.append(quote)
                    j += 2
                    continue
                return "".join(buf), j + 1
            buf.append(text[j])
            j += 1
    j = i
    while j < n and text[j] not in _RESERVED and not text[j].isspace():
        j += 1
    return text[i:j], j


def _read_length(text, i):
    j = i
    n = len(text)
    while j < n and (text[j].isdigit() or text[j] in "+-.eE"):
        j += 1
    try:
        value = float(text[i:j])
    except ValueError:
        raise MissingBranchLengthError("branch length is not a number", i) from None
    if not np.isfinite(value) or value < 0:
        raise NewickParseError(f"invalid branch length {text[i:j]!r}", i)
    return value, j


def _parse_tokens(text: str) -> _Node:
    i = _skip_space_and_comments(text, 0)
    if i >= len(text):
        raise NewickParseError("empty Newick text", 0)
    root = _Node(i)
    stack = []
    current = root
    n = len(text)
    expect_node = True
    while True:
        i = _skip_space_and_comments(text, i)
        if i >= n:
            if stack:
                raise UnbalancedParenthesesError("missing ')'", i)
            raise NewickParseError("missing terminating ';'", i)
        c = text[i]
        if c == "(":
            if not expect_node:
                raise NewickParseError("unexpected '('", i)
            stack.append(current)
            child = _Node(i + 1)
            current.children.append(child)
            current = child
            i += 1
            continue
        if c == ",":
            if not stack:
                raise UnbalancedParenthesesError("',' outside parentheses", i)
            sibling = _Node(i + 1)
            stack[-1].children.append(sibling)
            current = sibling
            expect_node = True
            i += 1
            continue
        if c == ")":
            if not stack:
                raise UnbalancedParenthesesError("unmatched ')'", i)
            current = stack.pop()
            current.offset = i
            expect_node = False
            i += 1
            continue
        if c == ";":
            if stack:
                raise UnbalancedParenthesesError("missing ')' before ';'", i)
            rest = _skip_space_and_comments(text, i + 1)
            if rest < n:
                raise NewickParseError("trailing text after ';'", rest)
            return root
        if c == ":":
            value, i = _read_length(text, _skip_space_and_comments(text, i + 1))
            if current.length is not None:
                raise NewickParseError("duplicate branch length", i)
            current.length = value
            expect_node = False
            continue
        label, j = _read_label(text, i)
        if j == i:
            raise NewickParseError(f"unexpected character {c!r}", i)
        current.label = label
        if not current.children:
            current.offset = i
        expect_node = False
        i = j


def _parse_date(token: str, offset=None) -> _dt.date:
    try:
        return _dt.date.fromisoformat(token.strip())
    except ValueError:
        raise DateParseError(f"cannot parse date {token!r}", offset) from None


def read_date_table(path) -> dict:
    """Read a ``label,date`` CSV into ``{label: datetime.date}``."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"label", "date"} <= set(reader.fieldnames):
            raise DataError(f"{path}: expected header 'label,date'")
        return {row["label"]: _parse_date(row["date"]) for row in reader}


def parse_newick(
    text: str,
    dates: Mapping | None = None,
    tip_times: Mapping | None = None,
    present: _dt.date | str | None = None,
    branch_scale: float = 1.0,
    date_tolerance: float = 1.0,
    labels_carry_dates: bool | None = None,
) -> Genealogy:
    """
    Parse a rooted binary Newick tree with branch lengths.

    Node times are rebuilt from branch lengths with the most recent tip at
    time 0. Tip dates, from ``dates`` or from ``label|YYYY-MM-DD`` suffixes,
    are checked against those times to within ``date_tolerance`` days; with
    ``present`` the tree is shifted so that time 0 is that date. ``tip_times``
    (days before present per label) anchors the tree the same way.

    :param branch_scale: multiplier taking branch lengths to days.
    :param labels_carry_dates: force (or forbid) reading ``|date`` suffixes;
        by default they are read when every tip label has one.
    """
    root = _parse_tokens(text)

    tips, internals = [], []
    stack = [(root, None, 0.0)]
    depth = {}
    parent_of = {}
    while stack:
        node, par, d = stack.pop()
        if par is not None:
            if node.length is None:
                raise MissingBranchLengthError(
                    f"node {node.label or '<internal>'} has no branch length", node.offset
                )
            d = d + node.length * branch_scale
        depth[id(node)] = d
        parent_of[id(node)] = par
        if node.children:
            if len(node.children) != 2:
                raise NonBinaryNodeError(
                    f"internal node has {len(node.children)} children", node.offset
                )
            internals.append(node)
            for child in reversed(node.children):
                stack.append((child, node, d))
        else:
            if not node.label:
                raise NewickParseError("tip without a label", node.offset)
            tips.append(node)

    n = len(tips)
    if n < 2:
        raise DegenerateTreeError("tree has fewer than two tips")
    ids = {id(t): k for k, t in enumerate(tips)}
    ids.update({id(v): n + k for k, v in enumerate(internals)})
    max_depth = max(depth[id(t)] for t in tips)
    times = np.empty(2 * n - 1)
    parent = np.full(2 * n - 1, -1, dtype=np.int64)
    children = np.full((2 * n - 1, 2), -1, dtype=np.int64)
    for node in tips + internals:
        k = ids[id(node)]
        times[k] = max_depth - depth[id(node)]
        par = parent_of[id(node)]
        if par is not None:
            parent[k] = ids[id(par)]
        if node.children:
            children[k] = [ids[id(c)] for c in node.children]

    _break_zero_branches(times, parent, children, n)
    labels = [t.label for t in tips]

    tip_dates = None
    if dates is not None:
        missing = [lab for lab in labels if lab not in dates]
        if missing:
            raise DateParseError(f"no date for tip(s) {missing[:5]}")
        tip_dates = [_coerce_date(dates[lab]) for lab in labels]
    else:
        has_bar = ["|" in lab for lab in labels]
        use_labels = all(has_bar) if labels_carry_dates is None else labels_carry_dates
        if use_labels:
            tip_dates = []
            for t in tips:
                if "|" not in t.label:
                    raise DateParseError(f"label {t.label!r} has no '|date' suffix", t.offset)
                token = t.label.rsplit("|", 1)[1]
                tip_dates.append(_parse_date(token, t.offset))

    shift = 0.0
    if tip_dates is not None:
        latest = max(tip_dates)
        from_dates = np.array([(latest - d).days for d in tip_dates], dtype=float)
        gap = np.abs(from_dates - times[:n])
        if np.max(gap) >= date_tolerance:
            worst = int(np.argmax(gap))
            raise DataError(
                f"tip {labels[worst]!r}: date implies {from_dates[worst]} days before the "
                f"latest tip but branch lengths give {times[worst]:.6g}"
            )
        if present is not None:
            shift = float((_coerce_date(present) - latest).days)
            if shift < 0:
                raise DataError("present date precedes the latest tip date")
    if tip_times is not None:
        missing = [lab for lab in labels if lab not in tip_times]
        if missing:
            raise DataError(f"no sampling time for tip(s) {missing[:5]}")
        target = np.array([float(tip_times[lab]) for lab in labels])
        offsets = target - times[:n]
        if np.ptp(offsets) > date_tolerance:
            raise DataError("tip times are inconsistent with branch lengths")
        shift = float(np.mean(offsets))
    if shift:
        times = times + shift
    return Genealogy(tuple(labels), times, parent, children)


def _coerce_date(value) -> _dt.date:
    if isinstance(value, _dt.datetime):
        return value.date()
    if isinstance(value, _dt.date):
        return value
    return _parse_date(str(value))


def _break_zero_branches(times, parent, children, n):
    # Zero-length branches make a parent as young as its child; nudge such
    # parents up by TIE_JITTER. Internal ids are in preorder, so walking them
    # backwards visits children before parents.
    bumped = 0
    for node in range(times.size - 1, n - 1, -1):
        youngest_allowed = max(times[c] for c in children[node]) + TIE_JITTER
        if times[node] < youngest_allowed:
            times[node] = youngest_allowed
            bumped += 1
    if bumped:
        warnings.warn(
            f"{bumped} zero-length branch(es) perturbed by {TIE_JITTER:g}", TieWarning,
            stacklevel=3,
        )


def _quote(label: str) -> str:
    if any(c in _RESERVED or c.isspace() or c in "'\"" for c in label):
        return "'" + label.replace("'", "''") + "'"
    return label


def serialize_newick(g: Genealogy, precision: int = 9) -> str:
    """Newick text with branch lengths written to ``precision`` significant digits."""
    bl = g.branch_lengths()
    fmt = f"{{:.{precision}g}}"
    parts = {}
    for node in g.postorder():
        if node < g.n_tips:
            s = _quote(g.labels[node])
        else:
            a, b = g.children[node]
            s = f"({parts.pop(int(a))},{parts.pop(int(b))})"
        if node != g.root:
            s += ":" + fmt.format(bl[node])
        parts[node] = s
    return parts[g.root] + ";"


def read_newick(path, **kwargs) -> Genealogy:
    with open(path) as fh:
        return parse_newick(fh.read(), **kwargs)


# --------------------------------------------------------------------------- #
# Interval decomposition

@dataclass(frozen=True, eq=False)
class CoalescentSummary:
    """
    Event list and intervals of constant lineage count.

    Events are sorted by increasing time before present; at equal times
    coalescences come first. ``factors`` are ``l choose 2`` per interval and
    ``coalescent_factors`` the factor of the interval ending at each
    coalescence.
    """

    event_times: np.ndarray
    event_kinds: np.ndarray
    event_counts: np.ndarray
    interval_start: np.ndarray
    interval_end: np.ndarray
    lineages: np.ndarray
    factors: np.ndarray
    ends_with: np.ndarray
    coalescent_times: np.ndarray
    coalescent_factors: np.ndarray
    n_tips: int
    n_jittered: int = 0

    @property
    def root_time(self) -> float:
        return float(self.event_times[-1])


def _jitter_ties(values: np.ndarray) -> tuple:
    order = np.argsort(values, kind="stable")
    out = values[order].copy()
    jittered = 0
    k = 1
    while k < out.size:
        if out[k] <= out[k - 1]:
            start = k - 1
            while k < out.size and out[k] == out[start]:
                k += 1
            for rank in range(1, k - start):
                out[start + rank] = out[start] + TIE_JITTER * rank
                jittered += 1
        else:
            k += 1
    return out, jittered


def summarize_events(tip_times, coalescent_times, origin: float = 0.0) -> CoalescentSummary:
    """Build a :class:`CoalescentSummary` from raw tip and coalescence times."""
    tip_times = np.asarray(tip_times, dtype=float)
    coal, n_jit = _jitter_ties(np.asarray(coalescent_times, dtype=float))
    if n_jit:
        warnings.warn(f"{n_jit} tied coalescent time(s) perturbed by {TIE_JITTER:g}·rank",
                      TieWarning, stacklevel=2)
    n = tip_times.size
    if coal.size != n - 1:
        raise DataError(f"{n} tips need {n - 1} coalescences, got {coal.size}")
    samp_t, samp_c = np.unique(tip_times, return_counts=True)

    times = np.concatenate([coal, samp_t])
    kinds = np.concatenate([np.full(coal.size, COALESCENT), np.full(samp_t.size, SAMPLING)])
    counts = np.concatenate([np.ones(coal.size, dtype=np.int64), samp_c])
    order = np.lexsort((kinds, times))
    times, kinds, counts = times[order], kinds[order], counts[order]
    if kinds[0] != SAMPLING:
        raise DataError("a coalescence precedes the most recent sample")
    if kinds[-1] != COALESCENT:
        raise DataError("a sample is older than the root")

    delta = np.where(kinds == SAMPLING, counts, -1)
    after = np.cumsum(delta)
    if after[-1] != 1 or np.any(after[:-1] < 1):
        raise DataError("lineage count drops below one before the root")

    starts, ends, lins, ends_with = [], [], [], []
    if times[0] > origin:
        starts.append(origin)
        ends.append(times[0])
        lins.append(0)
        ends_with.append(SAMPLING)
    for k in range(1, times.size):
        if times[k] > times[k - 1]:
            starts.append(times[k - 1])
            ends.append(times[k])
            lins.append(after[k - 1])
            ends_with.append(kinds[k])
    before_coal = after - delta
    coal_mask = kinds == COALESCENT
    coal_lins = before_coal[coal_mask]
    if np.any(coal_lins < 2):
        raise DataError("a coalescence happens with fewer than two lineages")

    lins = np.asarray(lins, dtype=np.int64)
    factors = lins * (lins - 1) // 2
    return CoalescentSummary(
        event_times=times,
        event_kinds=kinds,
        event_counts=counts,
        interval_start=np.asarray(starts, dtype=float),
        interval_end=np.asarray(ends, dtype=float),
        lineages=lins,
        factors=factors.astype(float),
        ends_with=np.asarray(ends_with, dtype=np.int64),
        coalescent_times=times[coal_mask],
        coalescent_factors=(coal_lins * (coal_lins - 1) // 2).astype(float),
        n_tips=n,
        n_jittered=n_jit,
    )


def summarize(g: Genealogy, origin: float = 0.0) -> CoalescentSummary:
    """
    Interval decomposition of a genealogy.

    Intervals partition ``[origin, t_root]``; a leading interval with no
    lineages is included when the most recent tip is older than ``origin``.
    """
    return summarize_events(g.tip_times, g.coalescent_times, origin=origin)


# --------------------------------------------------------------------------- #
# Pruning

def prune_unreported(g: Genealogy, reported: Iterable[str]) -> Genealogy:
    """
    Keep only the ``reported`` tips, suppressing the unary nodes this leaves.

    Surviving node times are unchanged; the root moves down when one side of
    the original root loses all of its tips.
    """
    keep = set(reported)
    unknown = keep - set(g.labels)
    if unknown:
        raise DataError(f"unknown tip label(s): {sorted(unknown)[:5]}")
    if len(keep) < 2:
        raise DegenerateTreeError(f"only {len(keep)} tip(s) would remain after pruning")
    if len(keep) == g.n_tips:
        return g

    kept_tips = [i for i in range(g.n_tips) if g.labels[i] in keep]
    new_id = {old: k for k, old in enumerate(kept_tips)}
    n = len(kept_tips)
    times = list(g.times[kept_tips])
    parent = [-1] * n
    children = [[-1, -1] for _ in range(n)]
    # representative surviving node for each old node (None if no tips survive)
    rep = {}
    for node in g.postorder():
        if node < g.n_tips:
            rep[node] = new_id.get(node)
            continue
        a, b = (rep[int(c)] for c in g.children[node])
        if a is None or b is None:
            rep[node] = a if b is None else b
            continue
        k = len(times)
        times.append(float(g.times[node]))
        parent.append(-1)
        children.append([a, b])
        parent[a] = k
        parent[b] = k
        rep[node] = k
    return Genealogy(tuple(g.labels[i] for i in kept_tips), np.array(times),
                     np.array(parent), np.array(children))
