"""Two-arm bot experiments: run, persist, analyze and report.

A run generates a world replicate, warms it up, lets ``bots_per_arm`` bots
per arm grow their followings against that shared world, and writes the raw
logs. Analysis works from a :class:`RunData` bundle that is built either in
memory right after a run or from the persisted files, and renders every
report table as text, so re-analysis can be diffed byte for byte.

Run directory layout::

    run_config.json          resolved experiment config and seed
    world/                   users.csv, follows.edges, world_config.json
    events.jsonl             platform event log
    messages.tsv             every message some bot was exposed to
    bots.csv                 one row per bot
    bots/exposure.jsonl      exposure records of all bots
    bots/followings.csv      acquired followings with trigger messages
    fig3_pcr.csv ...         report tables (see ``REPORT_FILES``)
    summary.txt, manifest.json
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from . import __version__
from ._toml import load_toml
from .bots import (Acquisition, BotState, ExposureRecord, attach_bot, init_bot, read_exposures,
                   read_followings, run_bots, write_exposures, write_followings)
from .classify import LinearClassifier, OracleClassifier, TrainParams, train_linear
from .engine import FollowGraph, World, read_edges, write_edges, write_events
from .errors import ConfigError, FitError, UndefinedMetricError
from .metrics import (Digraph, FollowingsAttributes, NetworkReport, PcrSeries,
                      WordFrequencyTable, extract_personal_network, followings_attributes,
                      network_report, pcr_series, word_frequencies)
from .rng import derive_seed, stream
from .stats import Correlation, fit_power_law, kruskal_wallis, mann_whitney_u, pearson
from .worldgen import WorldConfig, generate_world, load_world_config, write_world

CONFIG_VERSION = 1
SUBGROUPS = ("high", "mid", "low")


# -- configuration -----------------------------------------------------------------------------

@dataclass(frozen=True)
class Arm:
    name: str
    preference: str


@dataclass(frozen=True)
class ExperimentConfig:
    world: WorldConfig
    seeds: tuple[int, ...] = (0,)
    bots_per_arm: int = 34
    arms: tuple[Arm, ...] = (Arm("arm1", "entertainment"), Arm("arm2", "scitech"))
    subgroup_thresholds: tuple[float, float] = (0.3, 0.6)
    classifier: str = "oracle"
    t_max: float = 1440.0
    warmup: float = 72.0
    pcr_bins: int = 21
    follow_cap: int = 120
    idle_range: tuple[float, float] = (2.0, 4.0)
    seed_pool_min: int = 100
    followings_only: bool = False
    train_messages: int = 5000

    def __post_init__(self):
        lo, hi = self.subgroup_thresholds
        if not 0 < lo < hi < 1:
            raise ConfigError("need 0 < low < high < 1", "subgroup_thresholds")
        if not isinstance(self.bots_per_arm, int) or self.bots_per_arm < 2:
            raise ConfigError("must be an integer >= 2", "bots_per_arm")
        if len(self.arms) < 2:
            raise ConfigError("need at least two arms", "arms")
        names = [a.name for a in self.arms]
        if len(set(names)) != len(names):
            raise ConfigError("arm names must be unique", "arms")
        for a in self.arms:
            if a.preference not in self.world.topic_mix:
                raise ConfigError(f"unknown topic {a.preference!r}", f"arms.{a.name}.preference")
        if self.classifier not in ("oracle", "linear"):
            raise ConfigError("must be 'oracle' or 'linear'", "classifier")
        if not self.seeds:
            raise ConfigError("need at least one seed", "seeds")
        for s in self.seeds:
            if not isinstance(s, int) or not 0 <= s < 2 ** 64:
                raise ConfigError("seeds must be 64-bit unsigned integers", "seeds")
        if self.t_max <= 0:
            raise ConfigError("must be > 0", "t_max")
        if self.warmup < 0:
            raise ConfigError("must be >= 0", "warmup")
        if self.pcr_bins < 2:
            raise ConfigError("must be >= 2", "pcr_bins")
        if self.follow_cap < 1:
            raise ConfigError("must be >= 1", "follow_cap")
        if not 0 <= self.idle_range[0] <= self.idle_range[1]:
            raise ConfigError("need 0 <= min <= max", "idle_range")

    def to_mapping(self) -> dict[str, Any]:
        return {
            "version": CONFIG_VERSION,
            "world": self.world.to_mapping(),
            "seeds": list(self.seeds),
            "bots_per_arm": self.bots_per_arm,
            "arms": [{"name": a.name, "preference": a.preference} for a in self.arms],
            "subgroup_thresholds": list(self.subgroup_thresholds),
            "classifier": self.classifier,
            "t_max": self.t_max,
            "warmup": self.warmup,
            "pcr_bins": self.pcr_bins,
            "follow_cap": self.follow_cap,
            "idle_range": list(self.idle_range),
            "seed_pool_min": self.seed_pool_min,
            "followings_only": self.followings_only,
            "train_messages": self.train_messages,
        }

    @classmethod
    def from_mapping(cls, d: Mapping[str, Any], base_dir: Path | None = None) -> "ExperimentConfig":
        d = dict(d)
        version = d.pop("version", None)
        if version != CONFIG_VERSION:
            raise ConfigError(f"expected {CONFIG_VERSION}, got {version!r}", "version")
        if "world" not in d:
            raise ConfigError("missing", "world")
        w = d.pop("world")
        if isinstance(w, str):
            path = Path(w) if base_dir is None or Path(w).is_absolute() else base_dir / w
            world = load_world_config(path)
        elif isinstance(w, Mapping):
            try:
                world = WorldConfig.from_mapping(w)
            except TypeError as exc:
                raise ConfigError(str(exc), "world") from exc
        else:
            raise ConfigError("must be a path or a table", "world")
        known = set(cls.__dataclass_fields__) - {"world"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError("unknown key", sorted(unknown)[0])
        kw: dict[str, Any] = {}
        for key, value in d.items():
            if key == "arms":
                try:
                    kw["arms"] = tuple(Arm(str(a["name"]), str(a["preference"])) for a in value)
                except (KeyError, TypeError) as exc:
                    raise ConfigError("each arm needs name and preference", "arms") from exc
            elif key in ("seeds",):
                kw[key] = tuple(int(s) for s in value)
            elif key in ("subgroup_thresholds", "idle_range"):
                if not isinstance(value, (list, tuple)) or len(value) != 2:
                    raise ConfigError("must be a pair", key)
                kw[key] = (float(value[0]), float(value[1]))
            elif key in ("t_max", "warmup"):
                kw[key] = float(value)
            else:
                kw[key] = value
        return cls(world=world, **kw)


def load_experiment_config(path: str | Path) -> ExperimentConfig:
    """Read an experiment config (TOML, or a ``run_config.json``)."""
    path = Path(path)
    if path.suffix == ".json":
        try:
            d = json.loads(path.read_text("utf-8"))
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read config: {exc}", str(path)) from exc
        d.pop("seed", None)
    else:
        d = load_toml(path)
    return ExperimentConfig.from_mapping(d, base_dir=path.parent)


def config_hash(config: ExperimentConfig) -> str:
    text = json.dumps(config.to_mapping(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def world_config_for(config: ExperimentConfig, seed: int) -> WorldConfig:
    return config.world.with_seed(derive_seed(seed, "world"))


# -- run data ---------------------------------------------------------------------------------------

@dataclass(frozen=True)
class MessageInfo:
    author: int
    parent_author: int | None
    topic: str
    words: tuple[str, ...]


@dataclass
class BotRun:
    bot_id: int
    arm: str
    preference: str
    init_seed_count: int
    hit_t_max: bool
    acquisitions: list[Acquisition]
    exposures: list[ExposureRecord]

    @property
    def followings(self) -> list[int]:
        return [a.user_id for a in self.acquisitions]


@dataclass
class RunData:
    """Everything the analysis needs, independent of where it came from."""

    config: ExperimentConfig
    seed: int
    user_topics: list[str]
    user_graph: FollowGraph
    bots: list[BotRun]
    messages: dict[int, MessageInfo]


@dataclass
class RunOutput:
    data: RunData
    world: World
    bot_states: list[BotState]
    events: list


def _pools(world: World, preferences: Iterable[str]) -> dict[str, list[int]]:
    """Seed pools: every platform user whose own topic matches the preference."""
    return {p: [u.user_id for u in world.users if u.topic == p] for p in preferences}


def _train_classifier(world: World, config: ExperimentConfig, seed: int) -> LinearClassifier:
    corpus = []
    for rec in world.iter_messages():
        if not rec.is_repost:
            corpus.append((rec.words, rec.topic_label))
        if len(corpus) >= config.train_messages:
            break
    model = train_linear(corpus, TrainParams(seed=derive_seed(seed, "classifier") % (2 ** 32)))
    return LinearClassifier(model)


def simulate(config: ExperimentConfig, seed: int) -> RunOutput:
    """Run one replicate in memory."""
    world = generate_world(world_config_for(config, seed))
    events = world.step_until(config.warmup)
    if config.classifier == "linear":
        classifier = _train_classifier(world, config, seed)
    else:
        classifier = OracleClassifier()
    pools = _pools(world, (a.preference for a in config.arms))
    bots: list[BotState] = []
    rngs = []
    arm_of: list[str] = []
    for ai, arm in enumerate(config.arms):
        for j in range(config.bots_per_arm):
            rng = stream(seed, "bot", ai, j)
            bot = init_bot(world.user_count + len(bots), arm.preference, pools[arm.preference], rng,
                           now=config.warmup, follow_cap=config.follow_cap,
                           idle_range=config.idle_range, min_pool=config.seed_pool_min)
            attach_bot(world, bot)
            bots.append(bot)
            rngs.append(rng)
            arm_of.append(arm.name)
    user_graph = FollowGraph([(s, d) for s, d in world.graph.arcs()
                              if s < world.user_count and d < world.user_count])
    run_bots(bots, world, classifier, rngs, config.warmup + config.t_max, on_events=events.extend)
    runs = [BotRun(b.bot_id, arm_of[i], b.preference, b.init_seed_count, b.hit_t_max,
                   list(b.acquisitions), list(b.exposure_log)) for i, b in enumerate(bots)]
    exposed = sorted({m for b in bots for rec in b.exposure_log for m, _, _ in rec.messages})
    messages = {}
    for mid in exposed:
        parent = world.parent(mid)
        messages[mid] = MessageInfo(world.author(mid), None if parent is None else world.author(parent),
                                    world.topic_of(mid), world.words(mid))
    data = RunData(config, seed, [u.topic for u in world.users], user_graph, runs, messages)
    return RunOutput(data, world, bots, events)


# -- persistence of raw logs ----------------------------------------------------------------------

RAW_FILES = ("run_config.json", "world/users.csv", "world/follows.edges", "world/world_config.json",
             "events.jsonl", "messages.tsv", "bots.csv", "bots/exposure.jsonl", "bots/followings.csv")

MESSAGES_HEADER = "message_id\tauthor\tparent_id\tparent_author\torigin_author\ttopic\ttimestamp\tis_advertisement\treject_tag\twords"
BOTS_HEADER = "bot_id,arm,preference,init_seed_count,followings,hit_t_max,last_wake"


def _writer(path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    return open(path, "w", encoding="utf-8", newline="\n")


def persist_run(out: RunOutput, outdir: str | Path) -> None:
    """Write the raw logs of a run (everything analysis reads back)."""
    d = Path(outdir)
    data, world = out.data, out.world
    seed = data.seed
    try:
        d.mkdir(parents=True, exist_ok=True)
        mapping = data.config.to_mapping()
        mapping["seed"] = seed
        (d / "run_config.json").write_text(json.dumps(mapping, indent=2, sort_keys=True) + "\n",
                                           encoding="utf-8")
        write_world(world, d / "world")
        with _writer(d / "events.jsonl") as fh:
            write_events(out.events, fh, seed=seed)
        with _writer(d / "messages.tsv") as fh:
            fh.write(MESSAGES_HEADER + "\n")
            for mid in data.messages:
                rec = world.message(mid)
                info = data.messages[mid]
                fields = [mid, rec.author, "" if rec.repost_parent is None else rec.repost_parent,
                          "" if info.parent_author is None else info.parent_author, rec.origin_author,
                          rec.topic_label, repr(rec.timestamp), int(rec.is_advertisement),
                          rec.reject_tag or "", " ".join(rec.words)]
                fh.write("\t".join(str(f) for f in fields) + "\n")
        with _writer(d / "bots.csv") as fh:
            fh.write(BOTS_HEADER + "\n")
            for b in data.bots:
                last = b.exposures[-1].wake_time if b.exposures else None
                row = (b.bot_id, b.arm, b.preference, b.init_seed_count, len(b.acquisitions), b.hit_t_max, last)
                fh.write(",".join(_fmt(v) for v in row) + "\n")
        with _writer(d / "bots/exposure.jsonl") as fh:
            write_exposures(out.bot_states, fh, seed=seed)
        with _writer(d / "bots/followings.csv") as fh:
            write_followings(out.bot_states, fh)
    except OSError as exc:
        raise OSError(f"{getattr(exc, 'filename', None) or d}: {exc.strerror or exc}") from exc


def _require(path: Path) -> Path:
    if not path.exists():
        raise FileNotFoundError(f"missing run file: {path}")
    return path


def load_run(run_dir: str | Path) -> RunData:
    """Rebuild :class:`RunData` from a run directory's raw logs."""
    d = Path(run_dir)
    cfg_map = json.loads(_require(d / "run_config.json").read_text("utf-8"))
    seed = int(cfg_map.pop("seed"))
    config = ExperimentConfig.from_mapping(cfg_map)
    topics = []
    with open(_require(d / "world/users.csv"), encoding="utf-8") as fh:
        next(fh)
        for row in csv.reader(fh):
            topics.append(row[1])
    with open(_require(d / "world/follows.edges"), encoding="ascii") as fh:
        graph = FollowGraph(read_edges(fh))
    messages = {}
    with open(_require(d / "messages.tsv"), encoding="utf-8") as fh:
        next(fh)
        for line in fh:
            f = line.rstrip("\n").split("\t")
            messages[int(f[0])] = MessageInfo(int(f[1]), int(f[3]) if f[3] else None, f[5],
                                              tuple(f[9].split(" ")) if f[9] else ())
    with open(_require(d / "bots/exposure.jsonl"), encoding="utf-8") as fh:
        logs = read_exposures(fh)
    with open(_require(d / "bots/followings.csv"), encoding="utf-8") as fh:
        follows = read_followings(fh)
    _require(d / "events.jsonl")
    bots = []
    with open(_require(d / "bots.csv"), encoding="utf-8") as fh:
        next(fh)
        for row in csv.reader(fh):
            bid = int(row[0])
            bots.append(BotRun(bid, row[1], row[2], int(row[3]), row[5] == "1",
                               follows.get(bid, []), logs.get(bid, [])))
    return RunData(config, seed, topics, graph, bots, messages)


def audit_run(data: RunData, events: Iterable) -> list[str]:
    """Check the bot workflow against the logs; returns one line per violation.

    Checked per bot: every timeline holds at most 50 messages, newest first,
    each by a current following; each wake adds at most one following and the
    cap is never exceeded; followings are distinct and never the bot; every
    acquired following is the direct source of a preferred repost whose
    reposter was already followed. Bots must author no platform events.
    """
    from .engine import TIMELINE_CAP

    bad: list[str] = []
    bot_ids = {b.bot_id for b in data.bots}
    for ev in events:
        if ev.actor in bot_ids:
            bad.append(f"bot {ev.actor} authored event {ev.message_id}")
    cap = data.config.follow_cap
    for b in data.bots:
        tag = f"bot {b.bot_id}"
        seeds = [a for a in b.acquisitions if a.trigger_message is None]
        acquired = [a for a in b.acquisitions if a.trigger_message is not None]
        users = [a.user_id for a in b.acquisitions]
        if len(set(users)) != len(users) or b.bot_id in users:
            bad.append(f"{tag}: duplicate or self following")
        if len(users) > cap:
            bad.append(f"{tag}: {len(users)} followings exceed the cap {cap}")
        if b.acquisitions[:len(seeds)] != seeds or len(seeds) not in (2, 3):
            bad.append(f"{tag}: seed followings malformed")
        following = {a.user_id for a in seeds}
        pending = iter(acquired)
        for rec in b.exposures:
            if len(rec.messages) > TIMELINE_CAP:
                bad.append(f"{tag} at {rec.wake_time!r}: timeline of {len(rec.messages)} messages")
            ids = [m for m, _, _ in rec.messages]
            if any(x <= y for x, y in zip(ids, ids[1:])):
                bad.append(f"{tag} at {rec.wake_time!r}: timeline not newest first")
            for m in ids:
                if data.messages[m].author not in following:
                    bad.append(f"{tag} at {rec.wake_time!r}: message {m} not by a following")
            if rec.new_following is None:
                continue
            acq = next(pending, None)
            if acq is None or acq.user_id != rec.new_following or acq.acquired_at != rec.wake_time \
                    or acq.trigger_message != rec.trigger_message:
                bad.append(f"{tag} at {rec.wake_time!r}: follow not in the followings log")
            verdicts = {m: v for m, _, v in rec.messages}
            trig = rec.trigger_message
            info = data.messages.get(trig)
            if verdicts.get(trig) != "preferred":
                bad.append(f"{tag} at {rec.wake_time!r}: trigger {trig} not a preferred exposed message")
            elif info is None or info.parent_author != rec.new_following:
                bad.append(f"{tag} at {rec.wake_time!r}: {rec.new_following} is not the direct source of {trig}")
            elif info.author not in following:
                bad.append(f"{tag} at {rec.wake_time!r}: reposter of {trig} was not followed")
            following.add(rec.new_following)
        if next(pending, None) is not None:
            bad.append(f"{tag}: followings acquired outside any wake")
    return bad


# -- analysis ---------------------------------------------------------------------------------------

@dataclass
class BotMetrics:
    bot_id: int
    arm: str
    preference: str
    followings_count: int
    hit_t_max: bool
    pcr: PcrSeries | None
    subgroup: str | None
    words: WordFrequencyTable
    followings: FollowingsAttributes
    network: NetworkReport
    nodes: list[int] = field(repr=False, default_factory=list)
    edges: list[tuple[int, int]] = field(repr=False, default_factory=list)

    @property
    def initial_pcr(self) -> float | None:
        return self.pcr.initial if self.pcr else None

    @property
    def final_pcr(self) -> float | None:
        return self.pcr.final if self.pcr else None


@dataclass(frozen=True)
class TestRow:
    name: str
    statistic: float | None
    p_value: float | None
    method: str
    n: tuple[int, ...]
    note: str = ""

    @property
    def low_power(self) -> bool:
        return bool(self.n) and min(self.n) < 5


@dataclass
class ArmSummary:
    name: str
    preference: str
    word_alpha: float | None
    word_alpha_lsq: float | None
    word_x_min: float | None
    in_ccdf: list[tuple[int, float]]
    out_ccdf: list[tuple[int, float]]


@dataclass
class ExperimentResult:
    config: ExperimentConfig | None
    seed: int | None
    bots: list[BotMetrics] = field(default_factory=list)
    tests: list[TestRow] = field(default_factory=list)
    arms: list[ArmSummary] = field(default_factory=list)

    @property
    def empty(self) -> bool:
        return not self.bots

    def arm_bots(self, arm: str) -> list[BotMetrics]:
        return [b for b in self.bots if b.arm == arm]

    def test(self, name: str) -> TestRow:
        for t in self.tests:
            if t.name == name:
                return t
        raise KeyError(name)

    def arm_mean(self, arm: str, attr: str) -> float | None:
        vals = [v for v in (_attr(b, attr) for b in self.arm_bots(arm)) if v is not None]
        return math.fsum(vals) / len(vals) if vals else None


_ATTRS = {
    "initial_pcr": lambda b: b.initial_pcr,
    "final_pcr": lambda b: b.final_pcr,
    "clustering": lambda b: b.network.mean_clustering,
    "global_reciprocity": lambda b: b.network.global_reciprocity,
    "mean_reciprocal_ratio": lambda b: b.network.mean_reciprocal_ratio,
    "same_preference": lambda b: b.followings.same_preference_fraction if b.followings_count else None,
    "followings_of_followings": lambda b: b.followings.mean_followings_of_followings if b.followings_count else None,
    "followers_of_followings": lambda b: b.followings.mean_followers_of_followings if b.followings_count else None,
}


def _attr(b: BotMetrics, attr: str) -> float | None:
    return _ATTRS[attr](b)


def subgroup_of(initial: float | None, thresholds: tuple[float, float]) -> str | None:
    if initial is None:
        return None
    lo, hi = thresholds
    if initial >= hi:
        return "high"
    if initial >= lo:
        return "mid"
    return "low"


def bot_metrics(bot: BotRun, data: RunData, second_arm: str) -> BotMetrics:
    cfg = data.config
    try:
        pcr = pcr_series(bot.exposures, bot.preference, cfg.pcr_bins)
    except UndefinedMetricError:
        pcr = None
    words = word_frequencies(bot.exposures, lambda m: data.messages[m].words, scope="preferred_only")
    follows = bot.followings
    attrs = followings_attributes(data.user_graph, follows, data.user_topics, bot.preference)
    pn = extract_personal_network(data.user_graph, follows, bot.bot_id, cfg.followings_only)
    sub = subgroup_of(pcr.initial if pcr else None, cfg.subgroup_thresholds) if bot.arm == second_arm else None
    return BotMetrics(bot.bot_id, bot.arm, bot.preference, len(follows), bot.hit_t_max, pcr, sub,
                      words, attrs, network_report(pn), list(pn.nodes), list(pn.arcs))


def _mw_row(name: str, a: Sequence[float], b: Sequence[float]) -> TestRow:
    if not a or not b:
        return TestRow(name, None, None, "", (len(a), len(b)), "empty group")
    r = mann_whitney_u(a, b)
    return TestRow(name, r.statistic, r.p_value, r.method, tuple(r.n_per_group))


def _corr_row(name: str, x: Sequence[float], y: Sequence[float]) -> TestRow:
    if len(x) < 3:
        return TestRow(name, None, None, "pearson", (len(x),), "fewer than 3 points")
    c = pearson(x, y)
    if c.degenerate:
        return TestRow(name, None, None, "pearson", (c.n,), "degenerate: zero variance")
    return TestRow(name, c.value, c.p_value, "pearson", (c.n,))


def _pooled_degree_rows(arm: str, bots: Sequence[BotMetrics]) -> list[TestRow]:
    ins, outs, ratio, total = [], [], [], []
    for b in bots:
        g = Digraph(b.nodes, b.edges)
        for v in g.nodes:
            ins.append(float(g.in_degree(v)))
            outs.append(float(g.out_degree(v)))
        for _node, n_e, n_a in b.network.per_node:
            if n_e > 0:
                ratio.append(n_e / n_a)
                total.append(float(n_a))
    return [_corr_row(f"in_out_pearson_{arm}", ins, outs),
            _corr_row(f"reciprocal_degree_pearson_{arm}", ratio, total)]


def _mean_ccdf(tables: Sequence[list[tuple[int, float]]]) -> list[tuple[int, float]]:
    """Mean over bots of P(K >= k) at every k any bot attains."""
    tables = [t for t in tables if t]
    if not tables:
        return []
    ks = sorted({k for t in tables for k, _ in t})
    out = []
    for k in ks:
        vals = []
        for t in tables:
            # P(K >= k) is the value at the smallest tabulated k' >= k
            v = 0.0
            for kk, p in t:
                if kk >= k:
                    v = p
                    break
            vals.append(v)
        out.append((k, math.fsum(vals) / len(vals)))
    return out


def _arm_summary(arm: Arm, bots: Sequence[BotMetrics]) -> ArmSummary:
    freqs = [f for b in bots for f in b.words.entries.values()]
    alpha = lsq = xmin = None
    try:
        fit = fit_power_law(freqs, x_min="auto", method="mle", discrete=False)
        alpha, xmin = fit.alpha, fit.x_min
        lsq = fit_power_law(freqs, x_min=fit.x_min, method="loglog_lsq", discrete=False).alpha
    except (FitError, ValueError):
        pass
    ins, outs = [], []
    for b in bots:
        ins.append(b.network.in_ccdf)
        outs.append(b.network.out_ccdf)
    return ArmSummary(arm.name, arm.preference, alpha, lsq, xmin, _mean_ccdf(ins), _mean_ccdf(outs))


def analyze(data: RunData) -> ExperimentResult:
    """Per-bot response variables and the full test battery for one run."""
    cfg = data.config
    first, second = cfg.arms[0].name, cfg.arms[1].name
    bots = [bot_metrics(b, data, second) for b in data.bots]
    result = ExperimentResult(cfg, data.seed, bots)

    def vals(arm: str, attr: str) -> list[float]:
        return [v for v in (_attr(b, attr) for b in result.arm_bots(arm)) if v is not None]

    tests = [
        _mw_row("initial_pcr_mw", vals(first, "initial_pcr"), vals(second, "initial_pcr")),
        _mw_row("final_pcr_mw", vals(first, "final_pcr"), vals(second, "final_pcr")),
    ]
    groups = {g: [b.final_pcr for b in result.arm_bots(second) if b.subgroup == g and b.final_pcr is not None]
              for g in SUBGROUPS}
    present = [g for g in SUBGROUPS if groups[g]]
    if len(present) >= 2:
        kw, post = kruskal_wallis([groups[g] for g in present], posthoc=True)
        tests.append(TestRow("subgroup_final_pcr_kw", kw.statistic, kw.p_value, kw.method,
                             tuple(kw.n_per_group), "groups " + ";".join(present)))
        for i in range(len(present)):
            for j in range(i + 1, len(present)):
                tests.append(TestRow(f"subgroup_posthoc_{present[i]}_{present[j]}", None, float(post[i][j]),
                                     "mann_whitney_bonferroni",
                                     (len(groups[present[i]]), len(groups[present[j]]))))
    else:
        tests.append(TestRow("subgroup_final_pcr_kw", None, None, "", tuple(len(groups[g]) for g in SUBGROUPS),
                             "fewer than 2 non-empty subgroups"))
    for attr in ("clustering", "global_reciprocity", "mean_reciprocal_ratio", "same_preference",
                 "followings_of_followings", "followers_of_followings"):
        tests.append(_mw_row(f"{attr}_mw", vals(first, attr), vals(second, attr)))
    for arm in cfg.arms:
        tests.extend(_pooled_degree_rows(arm.name, result.arm_bots(arm.name)))
    result.tests = tests
    result.arms = [_arm_summary(a, result.arm_bots(a.name)) for a in cfg.arms]
    return result


# -- report tables ----------------------------------------------------------------------------------

REPORT_FILES = ("fig3_pcr.csv", "fig3_pcr_series.csv", "fig4_wordfreq.csv", "fig4_wordfreq_ccdf.csv",
                "fig5_followings.csv", "fig6_structure.csv", "fig6_degree_ccdf.csv",
                "fig6_reciprocal_nodes.csv", "tests.csv", "summary.txt")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _csv(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for r in rows:
        buf.write(",".join(_fmt(v) for v in r) + "\n")
    return buf.getvalue()


def _corr_value(c: Correlation | None):
    return None if c is None or c.degenerate else c.value


def render_tables(result: ExperimentResult) -> dict[str, str]:
    """Every report file's text, keyed by relative path."""
    if result.empty:
        return {"summary.txt": render_summary(result)}
    files: dict[str, str] = {}
    bots = result.bots
    files["fig3_pcr.csv"] = _csv(
        ("bot_id", "arm", "preference", "subgroup", "initial_pcr", "final_pcr"),
        ((b.bot_id, b.arm, b.preference, b.subgroup, b.initial_pcr, b.final_pcr) for b in bots))
    files["fig3_pcr_series.csv"] = _csv(
        ("bot_id", "arm", "t", "pcr"),
        ((b.bot_id, b.arm, t, p) for b in bots if b.pcr for t, p in b.pcr.points))
    files["fig4_wordfreq.csv"] = _csv(
        ("bot_id", "arm", "preferred_messages", "distinct_words", "max_frequency", "top_words"),
        ((b.bot_id, b.arm, b.words.total_messages, len(b.words.entries),
          b.words.max_frequency if b.words.entries else None,
          " ".join(f"{w}:{f!r}" for w, f in b.words.top(10))) for b in bots))
    ccdf_rows = []
    for b in bots:
        for k, p in inverse_cdf_float(list(b.words.entries.values())):
            ccdf_rows.append((b.bot_id, b.arm, k, p))
    files["fig4_wordfreq_ccdf.csv"] = _csv(("bot_id", "arm", "frequency", "ccdf"), ccdf_rows)
    files["fig5_followings.csv"] = _csv(
        ("bot_id", "arm", "followings", "hit_t_max", "same_preference_fraction",
         "mean_followings_of_followings", "mean_followers_of_followings"),
        ((b.bot_id, b.arm, b.followings_count, b.hit_t_max, b.followings.same_preference_fraction,
          b.followings.mean_followings_of_followings, b.followings.mean_followers_of_followings)
         for b in bots))
    files["fig6_structure.csv"] = _csv(
        ("bot_id", "arm", "node_count", "arc_count", "mean_clustering", "in_out_pearson",
         "mean_reciprocal_ratio", "global_reciprocity", "reciprocal_corr_all", "reciprocal_corr_positive"),
        ((b.bot_id, b.arm, b.network.node_count, b.network.arc_count, b.network.mean_clustering,
          _corr_value(b.network.in_out), b.network.mean_reciprocal_ratio, b.network.global_reciprocity,
          _corr_value(b.network.reciprocal_corr_all), _corr_value(b.network.reciprocal_corr_positive))
         for b in bots))
    files["fig6_degree_ccdf.csv"] = _csv(
        ("arm", "direction", "k", "mean_ccdf"),
        [(a.name, "in", k, p) for a in result.arms for k, p in a.in_ccdf]
        + [(a.name, "out", k, p) for a in result.arms for k, p in a.out_ccdf])
    files["fig6_reciprocal_nodes.csv"] = _csv(
        ("bot_id", "arm", "node", "n_e", "n_a"),
        ((b.bot_id, b.arm, node, ne, na) for b in bots for node, ne, na in b.network.per_node))
    files["tests.csv"] = _csv(
        ("test", "statistic", "p_value", "method", "n", "low_power", "note"),
        ((t.name, t.statistic, t.p_value, t.method, ";".join(str(n) for n in t.n), t.low_power, t.note)
         for t in result.tests))
    for b in bots:
        buf = io.StringIO()
        write_edges(b.edges, buf, seed=result.seed)
        files[f"networks/bot-{b.bot_id}.edges"] = buf.getvalue()
    files["summary.txt"] = render_summary(result)
    return files


def inverse_cdf_float(values: Sequence[float]) -> list[tuple[float, float]]:
    """``(x, P(X >= x))`` at each distinct value, for real-valued samples."""
    n = len(values)
    if n == 0:
        return []
    xs = sorted(values)
    out = []
    i = 0
    while i < n:
        j = i
        while j < n and xs[j] == xs[i]:
            j += 1
        out.append((xs[i], (n - i) / n))
        i = j
    return out


def render_summary(result: ExperimentResult) -> str:
    lines = [f"polarsim {__version__} experiment summary"]
    if result.config is None or result.empty:
        lines.append("no bots: nothing to report")
        return "\n".join(lines) + "\n"
    cfg = result.config
    lines += [f"seed: {result.seed}", f"config sha256: {config_hash(cfg)}",
              f"classifier: {cfg.classifier}", f"bots per arm: {cfg.bots_per_arm}", ""]
    lines.append("arm means")
    header = ("arm", "preference", "initial_pcr", "final_pcr", "same_pref", "clustering", "reciprocity",
              "word_alpha")
    lines.append("  " + " ".join(f"{h:>12}" for h in header))
    for a in result.arms:
        row = [a.name, a.preference]
        for attr in ("initial_pcr", "final_pcr", "same_preference", "clustering", "global_reciprocity"):
            v = result.arm_mean(a.name, attr)
            row.append("n/a" if v is None else f"{v:.4f}")
        row.append("n/a" if a.word_alpha is None else f"{a.word_alpha:.3f}")
        lines.append("  " + " ".join(f"{c:>12}" for c in row))
    second = cfg.arms[1].name
    counts = {g: sum(1 for b in result.arm_bots(second) if b.subgroup == g) for g in SUBGROUPS}
    lines += ["", f"{second} subgroups by initial PCR: "
              + ", ".join(f"{g}={counts[g]}" for g in SUBGROUPS), "", "tests (Bonferroni for post hoc pairs)"]
    for t in result.tests:
        stat = "" if t.statistic is None else f"{t.statistic:.4g}"
        p = "" if t.p_value is None else f"{t.p_value:.3g}"
        flag = " low-power" if t.low_power else ""
        note = f" ({t.note})" if t.note else ""
        lines.append(f"  {t.name:<36} stat={stat:<10} p={p:<10} {t.method}{flag}{note}")
    hit = sum(1 for b in result.bots if b.hit_t_max)
    lines += ["", f"bots stopped by t_max: {hit} of {len(result.bots)}"]
    return "\n".join(lines) + "\n"


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(outdir: str | Path) -> Path:
    """Hash every file under ``outdir`` (except the manifest) into ``manifest.json``."""
    d = Path(outdir)
    files = sorted(p for p in d.rglob("*") if p.is_file() and p.name != "manifest.json")
    entries = {p.relative_to(d).as_posix(): _sha256(p) for p in files}
    path = d / "manifest.json"
    path.write_text(json.dumps({"version": __version__, "files": entries}, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")
    return path


def emit_report(result: ExperimentResult, outdir: str | Path) -> dict[str, str]:
    """Write the report tables and refresh the manifest; returns path -> sha256."""
    d = Path(outdir)
    for rel, text in render_tables(result).items():
        path = d / rel
        try:
            with _writer(path) as fh:
                fh.write(text)
        except OSError as exc:
            raise OSError(f"{path}: {exc.strerror or exc}") from exc
    manifest = write_manifest(d)
    return json.loads(manifest.read_text("utf-8"))["files"]


def run_experiment(config: ExperimentConfig, seed: int | None = None,
                   outdir: str | Path | None = None) -> ExperimentResult:
    """Simulate one replicate, analyze it and, given ``outdir``, persist everything."""
    seed = config.seeds[0] if seed is None else seed
    out = simulate(config, seed)
    result = analyze(out.data)
    if outdir is not None:
        persist_run(out, outdir)
        emit_report(result, outdir)
    return result


def diff_report(run_dir: str | Path) -> list[str]:
    """Recompute the report from the raw logs; names of files that differ."""
    d = Path(run_dir)
    result = analyze(load_run(d))
    bad = []
    for rel, text in render_tables(result).items():
        path = d / rel
        if not path.exists() or path.read_text("utf-8") != text:
            bad.append(rel)
    return bad


# -- replicate sets ---------------------------------------------------------------------------------

REPLICATE_HEADER = ("seed", "arm1_final_pcr", "arm2_final_pcr", "final_pcr_p", "arm1_clustering",
                    "arm2_clustering", "clustering_p", "arm1_reciprocity", "arm2_reciprocity",
                    "reciprocity_p", "arm1_same_preference", "arm2_same_preference")


def replicate_row(result: ExperimentResult) -> tuple:
    a, b = (arm.name for arm in result.config.arms[:2])
    return (result.seed,
            result.arm_mean(a, "final_pcr"), result.arm_mean(b, "final_pcr"), result.test("final_pcr_mw").p_value,
            result.arm_mean(a, "clustering"), result.arm_mean(b, "clustering"), result.test("clustering_mw").p_value,
            result.arm_mean(a, "global_reciprocity"), result.arm_mean(b, "global_reciprocity"),
            result.test("global_reciprocity_mw").p_value,
            result.arm_mean(a, "same_preference"), result.arm_mean(b, "same_preference"))


def render_replicates(rows: Sequence[tuple]) -> str:
    """Per-seed headline statistics plus their mean across replicates."""
    means = ["mean"]
    for col in range(1, len(REPLICATE_HEADER)):
        vals = [r[col] for r in rows if r[col] is not None]
        means.append(math.fsum(vals) / len(vals) if vals else None)
    return _csv(REPLICATE_HEADER, list(rows) + [tuple(means)])
