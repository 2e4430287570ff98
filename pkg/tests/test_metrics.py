from __future__ import annotations

import math
import random

import pytest
from hypothesis import given, strategies as st

import oracles
from polarsim.bots import ExposureRecord
from polarsim.engine import FollowGraph
from polarsim.errors import UndefinedMetricError
from polarsim.metrics import (Digraph, degree_stats, directed_clustering, extract_personal_network,
                              followings_attributes, inverse_cdf, network_report, node_clustering, pcr_series,
                              reciprocal_degree_correlation, reciprocal_metrics, word_frequencies)

digraphs = st.integers(1, 8).flatmap(
    lambda n: st.sets(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1))
                      .filter(lambda a: a[0] != a[1])).map(lambda arcs: (list(range(n)), sorted(arcs))))


def star(n_leaves=3):
    return Digraph(range(n_leaves + 1), [(0, i) for i in range(1, n_leaves + 1)])


class TestReciprocity:
    def test_two_node_mutual(self):
        r = reciprocal_metrics(Digraph([0, 1], [(0, 1), (1, 0)]))
        assert r.mean_ratio == 0.5 and r.global_reciprocity == 1.0
        assert r.table == ((0, 1, 2), (1, 1, 2))

    def test_star(self):
        r = reciprocal_metrics(star())
        assert r.mean_ratio == 0.0 and r.global_reciprocity == 0.0

    def test_arcless_is_undefined(self):
        with pytest.raises(UndefinedMetricError):
            reciprocal_metrics(Digraph([0, 1, 2]))

    def test_matches_pair_enumeration_on_12_nodes(self):
        rng = random.Random(12)
        for _ in range(50):
            nodes = list(range(12))
            p = rng.random()
            arcs = [(s, d) for s in nodes for d in nodes if s != d and rng.random() < p]
            if not arcs:
                continue
            mean, glob, table = oracles.reciprocity(nodes, arcs)
            r = reciprocal_metrics(Digraph(nodes, arcs))
            assert r.mean_ratio == pytest.approx(mean, abs=1e-15)
            assert r.global_reciprocity == glob
            assert list(r.table) == table

    @given(digraphs)
    def test_symmetrized_and_acyclic_extremes(self, g):
        nodes, arcs = g
        if not arcs:
            return
        sym = Digraph(nodes, arcs + [(d, s) for s, d in arcs])
        assert reciprocal_metrics(sym).global_reciprocity == 1.0
        dag = Digraph(nodes, [(min(s, d), max(s, d)) for s, d in arcs])
        assert reciprocal_metrics(dag).global_reciprocity == 0.0

    @given(digraphs)
    def test_bounds(self, g):
        nodes, arcs = g
        if not arcs:
            return
        r = reciprocal_metrics(Digraph(nodes, arcs))
        assert 0.0 <= r.mean_ratio <= 0.5 and 0.0 <= r.global_reciprocity <= 1.0
        assert all(e <= a for _, e, a in r.table)


class TestReciprocalCorrelation:
    def test_clique_is_degenerate(self):
        g = Digraph(range(4), [(s, d) for s in range(4) for d in range(4) if s != d])
        assert reciprocal_degree_correlation(g, "all_nodes").degenerate

    def test_mutual_spokes_on_the_busiest_leaves(self):
        arcs = [(0, i) for i in range(1, 6)] + [(1, 0), (2, 0), (1, 3), (1, 4), (2, 3), (2, 5)]
        c = reciprocal_degree_correlation(Digraph(range(6), arcs), "positive_only")
        # qualifying nodes: hub (2/7, 7) and leaves 1, 2 at (1/4, 4)
        assert c.n == 3 and c.value == pytest.approx(1.0)

    def test_matches_textbook_formula(self):
        rng = random.Random(3)
        checked = 0
        for _ in range(100):
            nodes, arcs = oracles.random_digraph(rng, 10)
            _, _, table = oracles.reciprocity(nodes, arcs)
            for variant, rows in (("all_nodes", table), ("positive_only", [r for r in table if r[1] > 0])):
                g = Digraph(nodes, arcs)
                if len(rows) < 3:
                    with pytest.raises(UndefinedMetricError):
                        reciprocal_degree_correlation(g, variant)
                    continue
                expect = oracles.pearson([e / a for _, e, a in rows], [a for *_, a in rows])
                got = reciprocal_degree_correlation(g, variant)
                if expect is None:
                    assert got.degenerate
                else:
                    assert got.value == pytest.approx(expect, abs=1e-12)
                    checked += 1
        assert checked > 20


class TestClustering:
    def test_complete_triad(self):
        g = Digraph(range(3), [(s, d) for s in range(3) for d in range(3) if s != d])
        assert node_clustering(g) == {0: 1.0, 1: 1.0, 2: 1.0}
        assert directed_clustering(g) == 1.0

    def test_star_has_none(self):
        assert node_clustering(star()) == {0: 0.0}
        assert directed_clustering(star()) == 0.0

    def test_too_small(self):
        with pytest.raises(UndefinedMetricError):
            directed_clustering(Digraph([0, 1], [(0, 1)]))
        with pytest.raises(UndefinedMetricError):
            directed_clustering(Digraph([0, 1, 2], [(0, 1)]))

    def test_matches_triangle_enumeration_on_10_nodes(self):
        rng = random.Random(10)
        for _ in range(40):
            nodes, arcs = oracles.random_digraph(rng, 10)
            expect = oracles.node_clustering(nodes, arcs)
            got = node_clustering(Digraph(nodes, arcs))
            assert got.keys() == expect.keys()
            for v in expect:
                assert got[v] == pytest.approx(expect[v], abs=1e-15)

    @given(digraphs)
    def test_coefficients_in_unit_interval(self, g):
        for v in node_clustering(Digraph(*g)).values():
            assert 0.0 <= v <= 1.0


class TestDegrees:
    def test_regular_digraph(self):
        n, k = 7, 2
        g = Digraph(range(n), [(i, (i + j) % n) for i in range(n) for j in range(1, k + 1)])
        ds = degree_stats(g)
        assert ds.in_ccdf == [(k, 1.0)] and ds.out_ccdf == [(k, 1.0)]
        assert ds.in_out.degenerate

    def test_in_equals_out(self):
        g = Digraph(range(5), [(0, 1), (1, 0), (1, 2), (2, 1), (2, 3), (3, 2), (0, 2), (2, 0)])
        assert degree_stats(g).in_out.value == pytest.approx(1.0)

    @given(st.lists(st.integers(0, 20), min_size=1, max_size=40))
    def test_inverse_cdf_recount(self, values):
        assert inverse_cdf(values) == oracles.inverse_cdf(values)


class TestPersonalNetwork:
    def test_isolated_followings(self):
        g = extract_personal_network(FollowGraph([(9, 1), (9, 2)]), [1, 2], bot_id=9)
        assert g.nodes == (1, 2) and g.arcs == ()

    def test_arcs_and_neighbors(self):
        world = FollowGraph([(1, 2), (2, 3), (3, 4), (9, 1), (9, 2), (4, 9)])
        g = extract_personal_network(world, [1, 2], bot_id=9)
        assert g.nodes == (1, 2, 3)
        assert (1, 2) in g.arcs and (2, 3) in g.arcs
        assert 9 not in g.nodes
        core = extract_personal_network(world, [1, 2], bot_id=9, followings_only=True)
        assert core.nodes == (1, 2) and core.arcs == ((1, 2),)

    def test_followings_attributes(self):
        arcs = [(100 + i, 1) for i in range(10)] + [(200 + i, 2) for i in range(30)] + [(1, 7), (1, 8), (2, 7)]
        attrs = followings_attributes(FollowGraph(arcs), [1, 2], {1: "a", 2: "a"}, "a")
        assert attrs.same_preference_fraction == 1.0
        assert attrs.mean_followers_of_followings == 20.0
        assert attrs.mean_followings_of_followings == 1.5
        attrs = followings_attributes(FollowGraph(arcs), [1, 2], {1: "a", 2: "b"}, "a")
        assert attrs.same_preference_fraction == 0.5


class TestPcr:
    def test_all_preferred(self):
        log = [ExposureRecord(float(t), [(t, "x", "preferred")]) for t in range(5)]
        s = pcr_series(log, "x", 11)
        assert all(p == 1.0 for _, p in s.points)

    def test_three_then_one(self):
        log = [ExposureRecord(1.0, [(2, "x", "preferred"), (1, "x", "preferred"), (0, "x", "preferred")]),
               ExposureRecord(2.0, [(3, "y", "other")])]
        s = pcr_series(log, "x", 3)
        assert s.initial == 1.0 and s.final == 0.75

    def test_empty_is_undefined(self):
        with pytest.raises(UndefinedMetricError):
            pcr_series([], "x")
        with pytest.raises(UndefinedMetricError):
            pcr_series([ExposureRecord(1.0, [])], "x")

    def test_matches_recount_at_every_bin(self):
        rng = random.Random(5)
        for _ in range(30):
            log = oracles.random_log(rng)
            if not any(r.messages for r in log):
                continue
            s = pcr_series(log, "x", 21)
            ts = [t for t, _ in s.points]
            assert ts[0] == 0.0 and ts[-1] == 1.0 and all(a < b for a, b in zip(ts, ts[1:]))
            for t, p in s.points:
                assert p == pytest.approx(oracles.pcr_recount(log, t), abs=1e-12)
                assert 0.0 <= p <= 1.0

    @given(st.integers(0, 10 ** 6), st.integers(1, 20), st.sampled_from(["preferred", "other"]))
    def test_adding_one_kind_moves_final_pcr_one_way(self, seed, extra, kind):
        log = oracles.random_log(random.Random(seed), 60, 10)
        if not any(r.messages for r in log):
            return
        before = pcr_series(log, "x").final
        top = max(m for r in log for m, _, _ in r.messages) + 1
        more = log + [ExposureRecord(log[-1].wake_time + 3.0, [(top + i, "x", kind) for i in range(extra)])]
        after = pcr_series(more, "x").final
        assert after >= before if kind == "preferred" else after <= before


class TestWordFrequencies:
    def test_dedup_within_message(self):
        log = [ExposureRecord(1.0, [(0, "x", "preferred")])]
        t = word_frequencies(log, {0: ["a", "b", "a"]})
        assert t.entries == {"a": 1.0, "b": 1.0} and t.total_messages == 1

    def test_two_of_five(self):
        words = {i: ["w"] if i < 2 else ["v"] for i in range(5)}
        log = [ExposureRecord(1.0, [(i, "x", "preferred") for i in range(5)])]
        assert word_frequencies(log, words).entries["w"] == 0.4

    def test_empty_scope(self):
        log = [ExposureRecord(1.0, [(0, "x", "other")])]
        t = word_frequencies(log, {0: ["a"]}, scope="preferred_only")
        assert t.entries == {} and t.total_messages == 0

    def test_matches_set_recount(self):
        rng = random.Random(8)
        for _ in range(20):
            log = oracles.random_log(rng)
            words = {m: [f"w{rng.randrange(15)}" for _ in range(rng.randint(1, 8))]
                     for r in log for m, _, _ in r.messages}
            for scope, pref_only in (("all", False), ("preferred_only", True)):
                got = word_frequencies(log, words, scope).entries
                expect = oracles.word_frequencies(log, words, pref_only)
                assert got.keys() == expect.keys()
                for w in got:
                    assert got[w] == pytest.approx(expect[w], abs=1e-15)
                    assert 0.0 < got[w] <= 1.0


def test_network_report_on_tiny_graphs():
    rep = network_report(Digraph([5]))
    assert rep.node_count == 1 and rep.mean_clustering is None and rep.global_reciprocity is None
    rep = network_report(Digraph(range(3), [(0, 1), (1, 0), (1, 2)]))
    assert rep.arc_count == 3 and rep.global_reciprocity == pytest.approx(2 / 3)
    assert math.isclose(rep.mean_reciprocal_ratio, (1 / 2 + 1 / 3 + 0) / 3)
