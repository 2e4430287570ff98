from __future__ import annotations

import math
import random

import numpy as np
import pytest
from hypothesis import given, strategies as st

from polarsim.engine import ZipfSampler
from polarsim.errors import ConfigError
from polarsim.metrics import reciprocal_metrics
from polarsim.stats import fit_power_law
from polarsim.worldgen import (TopicSettings, TopologyRegime, WorldConfig, community_graph, generate_world,
                               hub_arcs, load_world_config, read_world, validate_world, write_world)


def one_topic(regime: TopologyRegime, n: int = 400, seed: int = 0, **kw) -> WorldConfig:
    return WorldConfig(user_count=n, topic_mix={"t": 1.0}, topics={"t": TopicSettings(regime=regime)},
                       rng_seed=seed, cross_follow_density=0.0, **kw)


def two_topics(seed: int = 0, n: int = 300) -> WorldConfig:
    return WorldConfig(
        user_count=n, topic_mix={"a": 0.5, "b": 0.5}, rng_seed=seed, posting_rate=0.2,
        topics={"a": TopicSettings(regime=TopologyRegime("broadcast", 2.3, 0.2)),
                "b": TopicSettings(regime=TopologyRegime("mutual", target_reciprocity=0.6, out_degree=3,
                                                         rewiring_prob=0.1))})


class TestConfigValidation:
    def test_mix_must_sum_to_one(self):
        with pytest.raises(ConfigError) as exc:
            WorldConfig(user_count=10, topic_mix={"a": 0.5, "b": 0.4}, topics={})
        assert exc.value.field == "topic_mix"

    @pytest.mark.parametrize("key,value", [("repost_prob", 1.5), ("cross_topic_repost_prob", -0.1),
                                           ("posting_rate", -1.0), ("user_count", 0)])
    def test_bad_scalar_names_field(self, key, value):
        kw = dict(user_count=10, topic_mix={"a": 1.0}, topics={})
        kw[key] = value
        with pytest.raises(ConfigError) as exc:
            WorldConfig(**kw)
        assert exc.value.field == key

    def test_bad_regime_fields(self):
        with pytest.raises(ConfigError) as exc:
            one_topic(TopologyRegime("lattice"))
        assert exc.value.field == "topics.t.regime"
        with pytest.raises(ConfigError) as exc:
            one_topic(TopologyRegime("mutual", target_reciprocity=2.0))
        assert exc.value.field == "topics.t.target_reciprocity"
        with pytest.raises(ConfigError) as exc:
            one_topic(TopologyRegime("broadcast", hub_exponent=1.0))
        assert exc.value.field == "topics.t.hub_exponent"

    def test_cross_density_table_must_name_other_topics(self):
        with pytest.raises(ConfigError) as exc:
            WorldConfig(user_count=10, topic_mix={"a": 0.5, "b": 0.5},
                        topics={"a": TopicSettings(cross_follow_density={"a": 1.0})})
        assert exc.value.field == "topics.a.cross_follow_density.a"

    def test_unknown_key_in_file(self, tmp_path):
        p = tmp_path / "w.toml"
        p.write_text('user_count = 10\nbogus = 1\n[topic_mix]\na = 1.0\n')
        with pytest.raises(ConfigError) as exc:
            load_world_config(p)
        assert exc.value.field == "bogus"

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_world_config(tmp_path / "nope.toml")

    def test_shipped_config_loads(self, w1_config_path):
        cfg = load_world_config(w1_config_path)
        assert cfg.user_count == 5000
        assert cfg.topic_mix == {"entertainment": 0.5, "scitech": 0.3, "other": 0.2}


class TestTopologies:
    def test_fully_mutual(self):
        w = generate_world(one_topic(TopologyRegime("mutual", target_reciprocity=1.0, out_degree=3)))
        rep = validate_world(w)
        assert rep.communities[0].reciprocity == 1.0
        assert rep.passed

    def test_broadcast_without_reciprocity(self):
        w = generate_world(one_topic(TopologyRegime("broadcast", 2.5, 0.0)))
        assert reciprocal_metrics(community_graph(w, "t")).global_reciprocity == 0.0

    @pytest.mark.parametrize("r", [0.2, 0.5, 0.8])
    def test_mutual_reciprocity_on_average(self, r):
        vals = []
        for seed in range(10):
            w = generate_world(one_topic(TopologyRegime("mutual", target_reciprocity=r, out_degree=4,
                                                        rewiring_prob=0.1), n=200, seed=seed))
            vals.append(reciprocal_metrics(community_graph(w, "t")).global_reciprocity)
        assert abs(np.mean(vals) - r) <= 0.05

    def test_hub_in_degrees_follow_the_power_law(self):
        members = list(range(5000))
        arcs = hub_arcs(members, 2.3, 0.25, random.Random(1))
        indeg = np.bincount([d for _, d in arcs], minlength=len(members))
        fit = fit_power_law(indeg[indeg > 0], x_min="auto", discrete=True)
        assert abs(fit.alpha - 2.3) <= 0.1
        assert len(set(arcs)) == len(arcs)
        assert all(s != d for s, d in arcs)

    @given(st.integers(0, 2 ** 32), st.sampled_from(["broadcast", "mutual"]), st.floats(0, 1))
    def test_no_self_loops_or_duplicates(self, seed, kind, r):
        w = generate_world(one_topic(TopologyRegime(kind, 2.2, r, 0.2, 3), n=60, seed=seed))
        arcs = w.graph.arcs()
        assert len(arcs) == len(set(arcs))
        assert all(s != d for s, d in arcs)
        w.graph.check()

    def test_empty_community_is_skipped(self):
        cfg = WorldConfig(user_count=100, topic_mix={"a": 1.0, "b": 0.0},
                          topics={"a": TopicSettings(regime=TopologyRegime("mutual", target_reciprocity=0.5))})
        rep = validate_world(generate_world(cfg))
        b = [c for c in rep.communities if c.topic == "b"][0]
        assert b.skipped and b.reciprocity is None and b.clustering is None

    def test_hub_users_post_faster(self):
        cfg = two_topics()
        w = generate_world(cfg)
        rates = {u.posting_rate for u in w.users}
        assert rates == {0.2, 0.2 * cfg.hub_posting_factor}


class TestDeterminism:
    def test_same_seed_same_bytes(self, tmp_path):
        for name in ("x", "y"):
            write_world(generate_world(two_topics(seed=5)), tmp_path / name)
        for f in ("users.csv", "follows.edges", "world_config.json"):
            assert (tmp_path / "x" / f).read_bytes() == (tmp_path / "y" / f).read_bytes()

    def test_different_seed_differs(self):
        assert generate_world(two_topics(seed=1)).graph.arcs() != generate_world(two_topics(seed=2)).graph.arcs()

    def test_read_world_replays(self, tmp_path):
        w = generate_world(two_topics(seed=3))
        write_world(w, tmp_path)
        w2 = read_world(tmp_path)
        assert w2.graph.arcs() == w.graph.arcs()
        assert w2.step_until(10.0) == w.step_until(10.0)

    def test_edges_file_format(self, tmp_path):
        write_world(generate_world(two_topics(seed=3)), tmp_path)
        lines = (tmp_path / "follows.edges").read_text("ascii").splitlines()
        assert lines[0].startswith("#")
        pairs = [tuple(map(int, ln.split())) for ln in lines[1:]]
        assert pairs == sorted(pairs)
        assert (tmp_path / "users.csv").read_text().splitlines()[0] == "user_id,topic,posting_rate,repost_prob"


@pytest.mark.parametrize("s", [0.8, 1.0, 1.5])
def test_zipf_rank_frequency_slope(s):
    ranks = ZipfSampler(5000, s, seed=42).draw(10 ** 6)
    counts = np.bincount(ranks, minlength=100)[:100]
    slope = np.polyfit(np.log(np.arange(1, 101)), np.log(counts), 1)[0]
    assert abs(slope + s) <= 0.2


@pytest.mark.slow
def test_reference_world_contrast_and_validation(w1_config_path):
    cfg = load_world_config(w1_config_path)
    for seed in range(1, 11):
        w = generate_world(cfg.with_seed(seed))
        rep = validate_world(w, cfg)
        assert rep.passed, (seed, rep.failures)
        by = {c.topic: c for c in rep.communities}
        assert by["scitech"].reciprocity - by["entertainment"].reciprocity >= 0.15
        assert math.isclose(by["entertainment"].tail_exponent, 2.3, abs_tol=0.1)
