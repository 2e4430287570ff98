"""Synthetic platform populations with per-topic follow topologies.

Each topic community is wired by one of two regimes:

``broadcast``
    Hub-and-spoke wiring. Follower counts are drawn from a discrete power
    law with exponent ``hub_exponent`` and followers are picked uniformly,
    so a few hubs collect most arcs. A ``target_reciprocity`` share of the
    follower slots is filled by two-way pairs; ``out_degree`` and
    ``rewiring_prob`` do not apply.
``mutual``
    A directed ring lattice (each member follows the next ``out_degree``
    members) with uniform target rewiring.

In the mutual regime a reverse arc is then added to each arc with
probability ``r / (2 - r)``, which makes the expected fraction of
reciprocated arcs equal to ``target_reciprocity = r``.

Cross-topic arcs are added on top: each member makes a Poisson number of
follows to uniformly drawn users of other topics, either with one overall
mean or with a mean per target topic. Users above the 95th in-degree
percentile post ``hub_posting_factor`` times faster.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from ._toml import load_toml
from .classify import default_standard
from .engine import FollowGraph, TopicContent, UserProfile, World, ZipfSampler, read_edges, write_edges
from .errors import ConfigError, FitError, UndefinedMetricError
from .rng import derive_seed

REGIMES = ("broadcast", "mutual")


@dataclass(frozen=True)
class TopologyRegime:
    kind: str = "mutual"
    hub_exponent: float = 2.5
    target_reciprocity: float = 0.0
    rewiring_prob: float = 0.0
    out_degree: int = 5
    target_clustering: float | None = None


@dataclass(frozen=True)
class ZipfParams:
    vocab_size: int = 2000
    zipf_exponent: float = 1.0


@dataclass(frozen=True)
class TopicSettings:
    """Per-topic structure and optional overrides of the population-wide rates."""

    regime: TopologyRegime = field(default_factory=TopologyRegime)
    zipf: ZipfParams = field(default_factory=ZipfParams)
    # mean cross-topic follows per member: one number spreads them uniformly
    # over all other-topic users, a {topic: mean} table sets each target topic
    cross_follow_density: float | dict[str, float] | None = None
    posting_rate: float | None = None
    repost_prob: float | None = None
    cross_topic_repost_prob: float | None = None
    reject_tag_prob: float | None = None


@dataclass(frozen=True)
class WorldConfig:
    user_count: int
    topic_mix: dict[str, float]
    topics: dict[str, TopicSettings]
    posting_rate: float = 0.1
    repost_prob: float = 0.5
    cross_topic_repost_prob: float = 0.2
    rng_seed: int = 0
    cross_follow_density: float = 1.0
    hub_posting_factor: float = 3.0
    hub_percentile: float = 95.0
    shared_vocab_fraction: float = 0.2
    message_length: tuple[int, int] = (8, 40)
    ad_prob: float = 0.01
    reject_tag_prob: float = 0.02

    def __post_init__(self):
        validate_config(self)

    def topic(self, name: str) -> TopicSettings:
        return self.topics.get(name, TopicSettings())

    def resolved(self, name: str, key: str):
        """Per-topic override of ``key`` if set, else the population-wide value."""
        value = getattr(self.topic(name), key)
        return getattr(self, key) if value is None else value

    def with_seed(self, seed: int) -> "WorldConfig":
        return replace(self, rng_seed=int(seed))

    def to_mapping(self) -> dict[str, Any]:
        d = asdict(self)
        d["message_length"] = list(self.message_length)
        topics = {}
        for name, t in self.topics.items():
            flat = {k: v for k, v in asdict(t.regime).items()}
            flat["regime"] = flat.pop("kind")
            flat.update(asdict(t.zipf))
            for key in ("cross_follow_density", "posting_rate", "repost_prob",
                        "cross_topic_repost_prob", "reject_tag_prob"):
                flat[key] = getattr(t, key)
            topics[name] = {k: v for k, v in flat.items() if v is not None}
        d["topics"] = topics
        d["version"] = 1
        return d

    @classmethod
    def from_mapping(cls, d: Mapping[str, Any]) -> "WorldConfig":
        d = dict(d)
        d.pop("version", None)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown keys {sorted(unknown)}", sorted(unknown)[0])
        if "user_count" not in d:
            raise ConfigError("missing", "user_count")
        if "topic_mix" not in d:
            raise ConfigError("missing", "topic_mix")
        topics = {}
        for name, t in dict(d.get("topics", {})).items():
            topics[name] = _topic_from_mapping(name, t)
        d["topics"] = topics
        d["topic_mix"] = {str(k): float(v) for k, v in dict(d["topic_mix"]).items()}
        if "message_length" in d:
            ml = d["message_length"]
            if not isinstance(ml, (list, tuple)) or len(ml) != 2:
                raise ConfigError("must be [min, max]", "message_length")
            d["message_length"] = (int(ml[0]), int(ml[1]))
        return cls(**d)


_REGIME_KEYS = {"regime", "hub_exponent", "target_reciprocity", "rewiring_prob", "out_degree",
                "target_clustering"}
_ZIPF_KEYS = {"vocab_size", "zipf_exponent"}
_OVERRIDE_KEYS = {"cross_follow_density", "posting_rate", "repost_prob", "cross_topic_repost_prob",
                  "reject_tag_prob"}


def _topic_from_mapping(name: str, t: Mapping[str, Any]) -> TopicSettings:
    unknown = set(t) - _REGIME_KEYS - _ZIPF_KEYS - _OVERRIDE_KEYS
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)}", f"topics.{name}.{sorted(unknown)[0]}")
    regime_kw = {k: t[k] for k in _REGIME_KEYS if k in t}
    if "regime" in regime_kw:
        regime_kw["kind"] = regime_kw.pop("regime")
    return TopicSettings(
        regime=TopologyRegime(**regime_kw),
        zipf=ZipfParams(**{k: t[k] for k in _ZIPF_KEYS if k in t}),
        **{k: t[k] for k in _OVERRIDE_KEYS if k in t},
    )


def _check_fraction(value, name: str) -> None:
    if not isinstance(value, (int, float)) or not 0.0 <= value <= 1.0:
        raise ConfigError(f"must be a fraction in [0, 1], got {value!r}", name)


def validate_config(cfg: WorldConfig) -> None:
    if not isinstance(cfg.user_count, int) or cfg.user_count <= 0:
        raise ConfigError("must be a positive integer", "user_count")
    if not cfg.topic_mix:
        raise ConfigError("must name at least one topic", "topic_mix")
    for name, frac in cfg.topic_mix.items():
        _check_fraction(frac, f"topic_mix.{name}")
    if abs(sum(cfg.topic_mix.values()) - 1.0) > 1e-9:
        raise ConfigError(f"fractions sum to {sum(cfg.topic_mix.values())}, not 1", "topic_mix")
    extra = set(cfg.topics) - set(cfg.topic_mix)
    if extra:
        raise ConfigError(f"topics {sorted(extra)} missing from topic_mix", "topics")
    for key in ("repost_prob", "cross_topic_repost_prob", "shared_vocab_fraction", "ad_prob",
                "reject_tag_prob"):
        _check_fraction(getattr(cfg, key), key)
    for key in ("posting_rate", "cross_follow_density"):
        if getattr(cfg, key) < 0:
            raise ConfigError("must be >= 0", key)
    if cfg.hub_posting_factor <= 0:
        raise ConfigError("must be > 0", "hub_posting_factor")
    if not 0 < cfg.hub_percentile <= 100:
        raise ConfigError("must be in (0, 100]", "hub_percentile")
    lo, hi = cfg.message_length
    if lo < 0 or hi < lo:
        raise ConfigError("need 0 <= min <= max", "message_length")
    if not isinstance(cfg.rng_seed, int) or not 0 <= cfg.rng_seed < 2 ** 64:
        raise ConfigError("must be a 64-bit unsigned integer", "rng_seed")
    for name, t in cfg.topics.items():
        p = f"topics.{name}"
        r = t.regime
        if r.kind not in REGIMES:
            raise ConfigError(f"must be one of {REGIMES}", f"{p}.regime")
        if r.hub_exponent <= 1:
            raise ConfigError("must be > 1", f"{p}.hub_exponent")
        _check_fraction(r.target_reciprocity, f"{p}.target_reciprocity")
        _check_fraction(r.rewiring_prob, f"{p}.rewiring_prob")
        if r.target_clustering is not None:
            _check_fraction(r.target_clustering, f"{p}.target_clustering")
        if not isinstance(r.out_degree, int) or r.out_degree < 1:
            raise ConfigError("must be a positive integer", f"{p}.out_degree")
        if not isinstance(t.zipf.vocab_size, int) or t.zipf.vocab_size <= 0:
            raise ConfigError("must be a positive integer", f"{p}.vocab_size")
        if t.zipf.zipf_exponent <= 0:
            raise ConfigError("must be > 0", f"{p}.zipf_exponent")
        for key in ("repost_prob", "cross_topic_repost_prob", "reject_tag_prob"):
            v = getattr(t, key)
            if v is not None:
                _check_fraction(v, f"{p}.{key}")
        if t.posting_rate is not None and t.posting_rate < 0:
            raise ConfigError("must be >= 0", f"{p}.posting_rate")
        density = t.cross_follow_density
        if isinstance(density, Mapping):
            for target, v in density.items():
                if target not in cfg.topic_mix or target == name:
                    raise ConfigError("must name another topic", f"{p}.cross_follow_density.{target}")
                if not isinstance(v, (int, float)) or v < 0:
                    raise ConfigError("must be >= 0", f"{p}.cross_follow_density.{target}")
        elif density is not None and density < 0:
            raise ConfigError("must be >= 0", f"{p}.cross_follow_density")


def load_world_config(path: str | Path) -> WorldConfig:
    """Read a world config from TOML (or the JSON written next to a world)."""
    path = Path(path)
    if path.suffix == ".json":
        try:
            d = json.loads(path.read_text("utf-8"))
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read config: {exc}", str(path)) from exc
    else:
        d = load_toml(path)
    try:
        return WorldConfig.from_mapping(d)
    except TypeError as exc:
        raise ConfigError(str(exc), str(path)) from exc


# -- graph construction ------------------------------------------------------------------

def _allocate(total: int, mix: Mapping[str, float]) -> dict[str, int]:
    """Largest-remainder split of ``total`` by the mix fractions."""
    raw = {k: total * v for k, v in mix.items()}
    counts = {k: int(math.floor(v)) for k, v in raw.items()}
    left = total - sum(counts.values())
    order = sorted(mix, key=lambda k: (-(raw[k] - counts[k]), list(mix).index(k)))
    for k in order[:left]:
        counts[k] += 1
    return counts


def hub_arcs(members: list[int], hub_exponent: float, reciprocity: float,
             rng: random.Random) -> list[tuple[int, int]]:
    """Star-like wiring with a power-law in-degree sequence.

    Each member gets ``k ~ P(k) ∝ k ** -hub_exponent`` (k >= 1, capped at a
    fifth of the community) follower slots, drawn by stratified inverse
    transform. Two-way pairs are formed first, filling a
    ``reciprocity`` share of all slots; both ends are drawn uniformly among
    members with a free slot, so pairs mostly join ordinary users and hubs
    follow few accounts. The remaining slots take one-way followers drawn
    uniformly. Every arc fills a slot of its target, so in-degrees
    equal the drawn sequence.
    """
    from .stats import sample_discrete_power_law

    n = len(members)
    gen = np.random.default_rng(rng.getrandbits(64))
    cap = max(1, min(n - 1, n // 5))  # no hub is followed by most of its community
    remaining = [int(k) for k in np.minimum(sample_discrete_power_law(hub_exponent, n, 1, gen, stratified=True), cap)]
    present: set[tuple[int, int]] = set()
    pairs = int(round(reciprocity * sum(remaining) / 2))
    open_ = [v for v in range(n) if remaining[v] > 0]
    made = tries = 0
    while made < pairs and tries < 20 * pairs + 100 and len(open_) >= 2:
        tries += 1
        i, j = rng.randrange(len(open_)), rng.randrange(len(open_))
        u, v = open_[i], open_[j]
        if remaining[u] == 0 or remaining[v] == 0:
            # lazily drop exhausted members
            k = i if remaining[u] == 0 else j
            open_[k] = open_[-1]
            open_.pop()
            continue
        if u != v and (u, v) not in present:
            present.add((u, v))
            present.add((v, u))
            remaining[u] -= 1
            remaining[v] -= 1
            made += 1
    for v in range(n):
        if remaining[v] * 8 > n:
            # large hubs: draw from the explicit candidate list
            free = [u for u in range(n) if u != v and (u, v) not in present and (v, u) not in present]
            present.update((u, v) for u in rng.sample(free, min(remaining[v], len(free))))
            continue
        while remaining[v] > 0:
            u = rng.randrange(n)
            if u != v and (u, v) not in present and (v, u) not in present:
                present.add((u, v))
                remaining[v] -= 1
    return [(members[u], members[v]) for u, v in sorted(present)]


def ring_arcs(members: list[int], out_degree: int) -> list[tuple[int, int]]:
    n = len(members)
    seen: set[tuple[int, int]] = set()
    arcs = []
    for i, v in enumerate(members):
        for j in range(1, out_degree + 1):
            u = members[(i + j) % n]
            if u != v and (v, u) not in seen and (u, v) not in seen:
                seen.add((v, u))
                arcs.append((v, u))
    return arcs


def _rewire(arcs: list[tuple[int, int]], members: list[int], prob: float,
            rng: random.Random) -> list[tuple[int, int]]:
    if prob <= 0 or len(members) < 3:
        return arcs
    present = set(arcs)
    out = []
    for s, d in arcs:
        if rng.random() < prob:
            for _ in range(10):
                nd = members[rng.randrange(len(members))]
                if nd != s and (s, nd) not in present and (nd, s) not in present:
                    present.discard((s, d))
                    present.add((s, nd))
                    d = nd
                    break
        out.append((s, d))
    return out


def _reciprocate(arcs: list[tuple[int, int]], target: float, rng: random.Random) -> list[tuple[int, int]]:
    if target <= 0:
        return arcs
    q = target / (2.0 - target)
    present = set(arcs)
    extra = []
    for s, d in arcs:
        if rng.random() < q and (d, s) not in present:
            present.add((d, s))
            extra.append((d, s))
    return arcs + extra


def community_arcs(members: list[int], regime: TopologyRegime, rng: random.Random) -> list[tuple[int, int]]:
    if len(members) < 2:
        return []
    if regime.kind == "broadcast":
        return hub_arcs(members, regime.hub_exponent, regime.target_reciprocity, rng)
    arcs = ring_arcs(members, min(regime.out_degree, (len(members) - 1) // 2 or 1))
    arcs = _rewire(arcs, members, regime.rewiring_prob, rng)
    return _reciprocate(arcs, regime.target_reciprocity, rng)


def build_vocabularies(cfg: WorldConfig, names: list[str]) -> tuple[list[str], dict[str, np.ndarray]]:
    """Global token list and, per topic, the rank-ordered global word ids.

    Each topic shares ``shared_vocab_fraction`` of its words with a common
    pool; shared words sit at random ranks.
    """
    shared_n = {n: int(round(cfg.shared_vocab_fraction * cfg.topic(n).zipf.vocab_size)) for n in names}
    pool = max(shared_n.values(), default=0)
    next_id = pool
    vocab = {}
    for n in names:
        size = cfg.topic(n).zipf.vocab_size
        ids = np.concatenate([np.arange(shared_n[n]), np.arange(next_id, next_id + size - shared_n[n])])
        next_id += size - shared_n[n]
        gen = np.random.default_rng(derive_seed(cfg.rng_seed, "vocab", n))
        vocab[n] = gen.permutation(ids).astype(np.int64)
    tokens = [f"w{i}" for i in range(next_id)]
    return tokens, vocab


def generate_world(config: WorldConfig) -> World:
    """Build a world deterministically from ``config`` (including its seed)."""
    validate_config(config)
    seed = config.rng_seed
    names = list(config.topic_mix)
    rng = random.Random(derive_seed(seed, "graph"))
    counts = _allocate(config.user_count, config.topic_mix)
    slots = [n for n in names for _ in range(counts[n])]
    rng.shuffle(slots)
    members = {n: [] for n in names}
    for uid, n in enumerate(slots):
        members[n].append(uid)
    arcs: set[tuple[int, int]] = set()
    for n in names:
        order = list(members[n])
        rng.shuffle(order)
        arcs.update(community_arcs(order, config.topic(n).regime, rng))
    gen = np.random.default_rng(derive_seed(seed, "cross"))
    for n in names:
        density = config.resolved(n, "cross_follow_density")
        if isinstance(density, Mapping):
            pools = [(members[t], float(density[t])) for t in names if t in density and t != n]
        else:
            pools = [([u for u in range(config.user_count) if slots[u] != n], float(density))]
        for pool, lam in pools:
            if not pool:
                continue
            for u in members[n]:
                k = min(int(gen.poisson(lam)), len(pool))
                placed = 0
                tries = 0
                while placed < k and tries < 20 * k:
                    tries += 1
                    v = pool[int(gen.integers(len(pool)))]
                    if (u, v) not in arcs:
                        arcs.add((u, v))
                        placed += 1
    graph = FollowGraph(sorted(arcs))
    indeg = np.array([graph.in_degree(u) for u in range(config.user_count)])
    threshold = float(np.percentile(indeg, config.hub_percentile)) if len(indeg) else 0.0
    users = []
    for uid, n in enumerate(slots):
        rate = config.resolved(n, "posting_rate")
        if indeg[uid] > threshold:
            rate *= config.hub_posting_factor
        users.append(UserProfile(uid, n, float(rate), float(config.resolved(n, "repost_prob")),
                                 float(config.resolved(n, "cross_topic_repost_prob"))))
    tokens, vocab = build_vocabularies(config, names)
    standard = default_standard()
    topics = [
        TopicContent(
            name=n,
            vocabulary=vocab[n],
            sampler=ZipfSampler(config.topic(n).zipf.vocab_size, config.topic(n).zipf.zipf_exponent,
                                derive_seed(seed, "words", n)),
            reject_tags=standard.reject_flags_for(n),
            reject_tag_prob=float(config.resolved(n, "reject_tag_prob")),
        )
        for n in names
    ]
    world = World(users, graph, topics, tokens, derive_seed(seed, "events"),
                  length_range=config.message_length, ad_prob=config.ad_prob)
    world.config = config
    return world


# -- serialization ---------------------------------------------------------------------------

def write_world(world: World, outdir: str | Path) -> list[Path]:
    """Write ``users.csv``, ``follows.edges`` and ``world_config.json``."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "users.csv", out / "follows.edges", out / "world_config.json"]
    with open(paths[0], "w", encoding="utf-8", newline="\n") as fh:
        world.write_users(fh)
    user_arcs = [(s, d) for s, d in world.graph.arcs() if s < world.user_count and d < world.user_count]
    with open(paths[1], "w", encoding="ascii", newline="\n") as fh:
        write_edges(user_arcs, fh, seed=world.config.rng_seed)
    paths[2].write_text(json.dumps(world.config.to_mapping(), indent=2, sort_keys=True) + "\n",
                        encoding="utf-8")
    return paths


def read_world(indir: str | Path) -> World:
    """Rebuild a world written by :func:`write_world`.

    The follow graph and user table come from the files; content samplers and
    event streams are re-derived from the stored config, so a loaded world
    replays exactly like the generated one.
    """
    d = Path(indir)
    cfg = load_world_config(d / "world_config.json")
    world = generate_world(cfg)
    with open(d / "follows.edges", encoding="ascii") as fh:
        arcs = read_edges(fh)
    if sorted(arcs) != world.graph.arcs():
        raise ConfigError("follows.edges does not match the stored config", str(d / "follows.edges"))
    return world


# -- validation ----------------------------------------------------------------------------------

@dataclass
class CommunityCheck:
    topic: str
    node_count: int
    reciprocity: float | None
    clustering: float | None
    tail_exponent: float | None
    checks: dict[str, bool] = field(default_factory=dict)
    skipped: bool = False

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


@dataclass
class ValidationReport:
    communities: list[CommunityCheck]
    tolerance: float

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.communities if not c.skipped)

    @property
    def failures(self) -> list[str]:
        return [f"{c.topic}.{k}" for c in self.communities for k, ok in c.checks.items() if not ok]


def community_graph(world: World, topic: str):
    from .metrics import Digraph

    members = [u.user_id for u in world.users if u.topic == topic]
    mset = set(members)
    arcs = [(u, v) for u in members for v in world.graph.followings(u) if v in mset]
    return Digraph(members, arcs)


def validate_world(world: World, config: WorldConfig | None = None, tolerance: float = 0.1) -> ValidationReport:
    """Realized reciprocity, mean directed clustering and in-degree tail
    exponent of every topic community, checked against the config targets.

    The tail exponent is only checked for broadcast communities, clustering
    only where ``target_clustering`` is set.
    """
    from .metrics import directed_clustering, reciprocal_metrics
    from .stats import fit_power_law

    config = config or world.config
    out = []
    for name in config.topic_mix:
        g = community_graph(world, name)
        if len(g.nodes) == 0:
            out.append(CommunityCheck(name, 0, None, None, None, skipped=True))
            continue
        regime = config.topic(name).regime
        try:
            rec = reciprocal_metrics(g).global_reciprocity
        except UndefinedMetricError:
            rec = None
        try:
            clus = directed_clustering(g)
        except UndefinedMetricError:
            clus = None
        indeg = [g.in_degree(v) for v in g.nodes if g.in_degree(v) > 0]
        try:
            tail = fit_power_law(indeg, x_min="auto", method="mle", discrete=True).alpha
        except FitError:
            tail = None
        checks = {"reciprocity": rec is not None and abs(rec - regime.target_reciprocity) <= tolerance}
        if regime.target_clustering is not None:
            checks["clustering"] = clus is not None and abs(clus - regime.target_clustering) <= tolerance
        if regime.kind == "broadcast":
            checks["tail_exponent"] = tail is not None and abs(tail - regime.hub_exponent) <= tolerance
        out.append(CommunityCheck(name, len(g.nodes), rec, clus, tail, checks))
    return ValidationReport(out, tolerance)
