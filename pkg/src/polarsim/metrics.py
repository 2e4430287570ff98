"""Response variables measured on bots: exposure PCR, word frequencies,
followings attributes and personal-network structure.

Conventions worth knowing:

* ``n_a(i)`` counts arcs incident to node i (in + out), ``n_e(i)`` counts the
  reciprocal *pairs* at i. A node whose every link is mutual therefore has
  ``n_e / n_a = 0.5``, not 1.
* The node-mean reciprocal ratio is normalized by the number of nodes with
  ``n_a > 0``; the global reciprocity is the fraction of arcs whose reverse
  arc exists. Both are reported.
* Correlations with zero variance come back as ``degenerate`` instead of NaN.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Protocol, Sequence

import numpy as np
from scipy import sparse

from .errors import UndefinedMetricError
from .stats import Correlation, pearson

PREFERRED = "preferred"
OTHER = "other"


class Digraph:
    """Immutable directed graph snapshot with sorted nodes and arcs."""

    def __init__(self, nodes: Iterable[int] = (), arcs: Iterable[tuple[int, int]] = ()):
        arc_set = {(int(s), int(d)) for s, d in arcs if s != d}
        node_set = {int(n) for n in nodes}
        for s, d in arc_set:
            node_set.add(s)
            node_set.add(d)
        self.nodes: tuple[int, ...] = tuple(sorted(node_set))
        self.arcs: tuple[tuple[int, int], ...] = tuple(sorted(arc_set))
        self.succ: dict[int, set[int]] = {n: set() for n in self.nodes}
        self.pred: dict[int, set[int]] = {n: set() for n in self.nodes}
        for s, d in self.arcs:
            self.succ[s].add(d)
            self.pred[d].add(s)

    def __len__(self) -> int:
        return len(self.nodes)

    def has_arc(self, s: int, d: int) -> bool:
        return d in self.succ.get(s, ())

    def in_degree(self, n: int) -> int:
        return len(self.pred[n])

    def out_degree(self, n: int) -> int:
        return len(self.succ[n])


# -- reciprocity ------------------------------------------------------------------

@dataclass(frozen=True)
class ReciprocityResult:
    mean_ratio: float
    global_reciprocity: float
    table: tuple[tuple[int, int, int], ...]  # (node, n_e, n_a) for nodes with n_a > 0


def reciprocal_table(g: Digraph) -> list[tuple[int, int, int]]:
    rows = []
    for n in g.nodes:
        out, inn = g.succ[n], g.pred[n]
        n_a = len(out) + len(inn)
        if n_a:
            rows.append((n, len(out & inn), n_a))
    return rows


def reciprocal_metrics(g: Digraph) -> ReciprocityResult:
    if not g.arcs:
        raise UndefinedMetricError("reciprocity is undefined on a graph without arcs")
    table = reciprocal_table(g)
    mean_ratio = math.fsum(e / a for _, e, a in table) / len(table)
    mutual_arcs = sum(1 for s, d in g.arcs if g.has_arc(d, s))
    return ReciprocityResult(mean_ratio, mutual_arcs / len(g.arcs), tuple(table))


def reciprocal_degree_correlation(g: Digraph, variant: str = "positive_only") -> Correlation:
    """Pearson correlation of ``n_e / n_a`` against ``n_a``.

    ``all_nodes`` uses every node with ``n_a > 0``; ``positive_only`` further
    requires ``n_e > 0``.
    """
    if variant not in ("all_nodes", "positive_only"):
        raise ValueError(f"unknown variant {variant!r}")
    rows = reciprocal_table(g)
    if variant == "positive_only":
        rows = [r for r in rows if r[1] > 0]
    if len(rows) < 3:
        raise UndefinedMetricError(f"{len(rows)} qualifying nodes; need at least 3")
    return pearson([e / a for _, e, a in rows], [a for _, _, a in rows])


# -- clustering ---------------------------------------------------------------------

def node_clustering(g: Digraph) -> dict[int, float]:
    """Total directed clustering per node, for nodes where it is defined.

    Counts every orientation of every triangle through the node against the
    maximum possible given its in/out/reciprocal degrees. Nodes with total
    degree below 2, or whose only links are one mutual pair, are omitted.
    """
    n = len(g.nodes)
    if n == 0:
        return {}
    index = {v: i for i, v in enumerate(g.nodes)}
    if g.arcs:
        rows = np.fromiter((index[s] for s, _ in g.arcs), dtype=np.int64, count=len(g.arcs))
        cols = np.fromiter((index[d] for _, d in g.arcs), dtype=np.int64, count=len(g.arcs))
        a = sparse.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
        s = (a + a.T).tocsr()
        closed = np.asarray((s @ s).multiply(s).sum(axis=1)).ravel()
    else:
        closed = np.zeros(n)
    result = {}
    for v in g.nodes:
        out, inn = g.succ[v], g.pred[v]
        d_tot = len(out) + len(inn)
        if d_tot < 2:
            continue
        denom = d_tot * (d_tot - 1) - 2 * len(out & inn)
        if denom <= 0:
            continue
        triangles = int(round(closed[index[v]])) // 2
        result[v] = triangles / denom
    return result


def directed_clustering(g: Digraph) -> float:
    """Mean total directed clustering over nodes where it is defined."""
    if len(g.nodes) < 3:
        raise UndefinedMetricError("clustering needs at least 3 nodes")
    per_node = node_clustering(g)
    if not per_node:
        raise UndefinedMetricError("no node has total degree >= 2")
    return math.fsum(per_node.values()) / len(per_node)


# -- degrees -----------------------------------------------------------------------

def inverse_cdf(values: Iterable[int]) -> list[tuple[int, float]]:
    """``(k, P(K >= k))`` at every distinct value k, ascending."""
    vals = sorted(values)
    n = len(vals)
    out = []
    i = 0
    while i < n:
        out.append((vals[i], (n - i) / n))
        j = i
        while j < n and vals[j] == vals[i]:
            j += 1
        i = j
    return out


@dataclass(frozen=True)
class DegreeStats:
    in_ccdf: list[tuple[int, float]]
    out_ccdf: list[tuple[int, float]]
    in_out: Correlation


def degree_stats(g: Digraph) -> DegreeStats:
    if len(g.nodes) < 2:
        raise UndefinedMetricError("degree statistics need at least 2 nodes")
    ins = [g.in_degree(v) for v in g.nodes]
    outs = [g.out_degree(v) for v in g.nodes]
    if len(g.nodes) >= 3:
        corr = pearson(ins, outs)
    else:
        corr = Correlation(None, None, len(g.nodes), degenerate=True)
    return DegreeStats(inverse_cdf(ins), inverse_cdf(outs), corr)


# -- network report ------------------------------------------------------------------

@dataclass
class NetworkReport:
    node_count: int
    arc_count: int
    in_ccdf: list[tuple[int, float]]
    out_ccdf: list[tuple[int, float]]
    mean_clustering: float | None
    in_out: Correlation
    mean_reciprocal_ratio: float | None
    global_reciprocity: float | None
    reciprocal_corr_all: Correlation | None
    reciprocal_corr_positive: Correlation | None
    per_node: tuple[tuple[int, int, int], ...] = ()


def _maybe(fn, *args):
    try:
        return fn(*args)
    except UndefinedMetricError:
        return None


def network_report(g: Digraph) -> NetworkReport:
    if len(g.nodes) >= 2:
        ds = degree_stats(g)
    else:
        ds = DegreeStats(inverse_cdf(g.in_degree(v) for v in g.nodes),
                         inverse_cdf(g.out_degree(v) for v in g.nodes),
                         Correlation(None, None, len(g.nodes), degenerate=True))
    rec = _maybe(reciprocal_metrics, g)
    return NetworkReport(
        node_count=len(g.nodes),
        arc_count=len(g.arcs),
        in_ccdf=ds.in_ccdf,
        out_ccdf=ds.out_ccdf,
        mean_clustering=_maybe(directed_clustering, g),
        in_out=ds.in_out,
        mean_reciprocal_ratio=rec.mean_ratio if rec else None,
        global_reciprocity=rec.global_reciprocity if rec else None,
        reciprocal_corr_all=_maybe(reciprocal_degree_correlation, g, "all_nodes"),
        reciprocal_corr_positive=_maybe(reciprocal_degree_correlation, g, "positive_only"),
        per_node=rec.table if rec else (),
    )


# -- personal networks and followings --------------------------------------------------

class _Adjacency(Protocol):
    def followings(self, user: int) -> Iterable[int]: ...
    def followers(self, user: int) -> Iterable[int]: ...


def extract_personal_network(graph: _Adjacency, followings: Iterable[int],
                             bot_id: int | None = None, followings_only: bool = False) -> Digraph:
    """Followings (plus, by default, everyone they follow) and all arcs among them."""
    core = [f for f in followings if f != bot_id]
    nodes = set(core)
    if not followings_only:
        for f in core:
            nodes.update(graph.followings(f))
    nodes.discard(bot_id)
    arcs = [(u, v) for u in nodes for v in graph.followings(u) if v in nodes]
    return Digraph(nodes, arcs)


@dataclass(frozen=True)
class FollowingsAttributes:
    same_preference_fraction: float
    mean_followings_of_followings: float
    mean_followers_of_followings: float
    followings_counts: tuple[int, ...] = ()
    followers_counts: tuple[int, ...] = ()


def followings_attributes(graph: _Adjacency, followings: Sequence[int],
                          topic_of: Mapping[int, str] | Sequence[str], preference: str) -> FollowingsAttributes:
    if not followings:
        return FollowingsAttributes(0.0, 0.0, 0.0)
    same = sum(1 for f in followings if topic_of[f] == preference)
    outs = tuple(len(graph.followings(f)) for f in followings)
    ins = tuple(len(graph.followers(f)) for f in followings)
    return FollowingsAttributes(same / len(followings), sum(outs) / len(outs),
                                sum(ins) / len(ins), outs, ins)


# -- exposure-based metrics ------------------------------------------------------------

class _Exposure(Protocol):
    wake_time: float
    messages: Sequence[tuple[int, str, str]]


@dataclass(frozen=True)
class PcrSeries:
    points: tuple[tuple[float, float], ...]
    preference: str

    @property
    def initial(self) -> float:
        return self.points[0][1]

    @property
    def final(self) -> float:
        return self.points[-1][1]


def first_exposures(log: Iterable[_Exposure]) -> list[tuple[float, int, str]]:
    """``(wake_time, message_id, verdict)`` for each message at its first exposure."""
    seen: set[int] = set()
    out = []
    for rec in log:
        for mid, _topic, verdict in rec.messages:
            if mid not in seen:
                seen.add(mid)
                out.append((rec.wake_time, mid, verdict))
    return out


def pcr_series(exposure_log: Sequence[_Exposure], preference: str, bin_count: int = 21) -> PcrSeries:
    """Cumulative preferred-content ratio on an evenly spaced normalized clock.

    Each message counts once, at the wake where it was first exposed. Time 0
    is the first wake that exposed anything and time 1 the last wake.
    """
    if bin_count < 2:
        raise ValueError("bin_count must be >= 2")
    firsts = first_exposures(exposure_log)
    if not firsts:
        raise UndefinedMetricError("exposure log contains no messages")
    t0 = firsts[0][0]
    t1 = exposure_log[-1].wake_time
    span = t1 - t0
    # cumulative counts at the end of each distinct wake time
    marks: list[tuple[float, int, int]] = []
    n_pref = n_all = 0
    for t, _mid, verdict in firsts:
        n_all += 1
        n_pref += verdict == PREFERRED
        tau = 0.0 if span <= 0 else (t - t0) / span
        if marks and marks[-1][0] == tau:
            marks[-1] = (tau, n_pref, n_all)
        else:
            marks.append((tau, n_pref, n_all))
    points = []
    k = 0
    for j in range(bin_count):
        t = j / (bin_count - 1)
        while k + 1 < len(marks) and marks[k + 1][0] <= t:
            k += 1
        _, p, a = marks[k]
        points.append((t, p / a))
    return PcrSeries(tuple(points), preference)


@dataclass(frozen=True)
class WordFrequencyTable:
    entries: dict[str, float]
    total_messages: int

    def top(self, k: int = 10) -> list[tuple[str, float]]:
        return sorted(self.entries.items(), key=lambda kv: (-kv[1], kv[0]))[:k]

    @property
    def max_frequency(self) -> float:
        return max(self.entries.values(), default=0.0)


def word_frequencies(exposure_log: Iterable[_Exposure],
                     words_of: Callable[[int], Iterable[str]] | Mapping[int, Iterable[str]],
                     scope: str = "all") -> WordFrequencyTable:
    """Share of exposed messages containing each word (once per message)."""
    if scope not in ("all", "preferred_only"):
        raise ValueError(f"unknown scope {scope!r}")
    lookup = words_of.__getitem__ if isinstance(words_of, Mapping) else words_of
    counts: dict[str, int] = {}
    total = 0
    for _t, mid, verdict in first_exposures(exposure_log):
        if scope == "preferred_only" and verdict != PREFERRED:
            continue
        total += 1
        for w in set(lookup(mid)):
            counts[w] = counts.get(w, 0) + 1
    if total == 0:
        return WordFrequencyTable({}, 0)
    return WordFrequencyTable({w: c / total for w, c in sorted(counts.items())}, total)
