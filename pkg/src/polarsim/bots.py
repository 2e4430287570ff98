"""Preference-driven social bots.

A bot starts from two or three seed followings, then wakes every 2 to 4
simulated hours. At each wake it reads the newest 50 messages from its
followings, keeps those its classifier marks as preferred, picks one of the
kept reposts at random and follows that repost's direct source. It stops
once it has ``follow_cap`` followings. Bots never post.
"""

from __future__ import annotations

import heapq
import json
import random
from dataclasses import dataclass, field
from typing import IO, Callable, Iterable, Sequence

from .classify import PREFERRED, Classifier
from .engine import TIMELINE_CAP, Event, World
from .errors import ConfigError, LifecycleError, OrderingError

INITIALIZING = "initializing"
RUNNING = "running"
FINISHED = "finished"

MIN_SEED_POOL = 100


@dataclass
class ExposureRecord:
    wake_time: float
    messages: list[tuple[int, str, str]]  # (message_id, topic_label, verdict), newest first
    new_following: int | None = None
    trigger_message: int | None = None

    def to_json(self, bot_id: int) -> str:
        return json.dumps({
            "bot_id": bot_id,
            "wake_time": self.wake_time,
            "messages": [list(m) for m in self.messages],
            "new_following": self.new_following,
            "trigger_message": self.trigger_message,
        }, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> tuple[int, "ExposureRecord"]:
        d = json.loads(line)
        msgs = [(int(m), str(t), str(v)) for m, t, v in d["messages"]]
        return int(d["bot_id"]), cls(float(d["wake_time"]), msgs, d["new_following"], d["trigger_message"])


@dataclass(frozen=True)
class Acquisition:
    user_id: int
    acquired_at: float
    trigger_message: int | None  # None for seed followings


@dataclass
class BotState:
    bot_id: int
    preference: str
    next_wake: float
    followings: list[int] = field(default_factory=list)
    phase: str = INITIALIZING
    exposure_log: list[ExposureRecord] = field(default_factory=list)
    follow_cap: int = 120
    idle_range: tuple[float, float] = (2.0, 4.0)
    init_seed_count: int = 0
    acquisitions: list[Acquisition] = field(default_factory=list)
    hit_t_max: bool = False
    # streamed first-exposure counters, for cross-checking recomputed PCR
    seen_messages: set[int] = field(default_factory=set, repr=False)
    preferred_seen: int = 0

    def __post_init__(self):
        self._following_set = set(self.followings)

    def follows(self, user: int) -> bool:
        return user in self._following_set

    def _add_following(self, user: int, at: float, trigger: int | None) -> None:
        self.followings.append(user)
        self._following_set.add(user)
        self.acquisitions.append(Acquisition(user, at, trigger))

    @property
    def streamed_pcr(self) -> float | None:
        return self.preferred_seen / len(self.seen_messages) if self.seen_messages else None


def init_bot(bot_id: int, preference: str, seed_pool: Sequence[int], rng: random.Random,
             now: float = 0.0, follow_cap: int = 120, idle_range: tuple[float, float] = (2.0, 4.0),
             min_pool: int = MIN_SEED_POOL) -> BotState:
    """Pick 2 or 3 distinct seeds uniformly from ``seed_pool`` and schedule the first wake."""
    pool = sorted(set(seed_pool) - {bot_id})
    if len(pool) < min_pool:
        raise ConfigError(f"seed pool for {preference!r} has {len(pool)} candidates, need {min_pool}",
                          "seed_pool")
    lo, hi = idle_range
    if not 0 <= lo <= hi:
        raise ConfigError("need 0 <= min <= max", "idle_range")
    if follow_cap < 1:
        raise ConfigError("must be >= 1", "follow_cap")
    k = 2 if rng.random() < 0.5 else 3
    bot = BotState(bot_id, preference, now + rng.uniform(lo, hi), follow_cap=follow_cap,
                   idle_range=(lo, hi), init_seed_count=k)
    for u in rng.sample(pool, k):
        bot._add_following(u, now, None)
    bot.phase = RUNNING
    return bot


def attach_bot(world: World, bot: BotState) -> None:
    """Register the bot's current followings as arcs in the world graph."""
    for u in bot.followings:
        world.add_follow(bot.bot_id, u)


def wake(bot: BotState, world: World, classifier: Classifier, rng: random.Random) -> ExposureRecord:
    """One wake: read the timeline, keep preferred messages, follow at most one source."""
    if bot.phase != RUNNING:
        raise LifecycleError(f"bot {bot.bot_id} is {bot.phase}, not running")
    if world.clock < bot.next_wake:
        raise OrderingError(f"world clock {world.clock} is before the wake at {bot.next_wake}")
    now = world.clock
    shown = []
    candidates = []
    for mid in world.timeline_ids(bot.followings, limit=TIMELINE_CAP):
        msg = world.message(mid)
        verdict = classifier.classify(msg, bot.preference)
        shown.append((mid, msg.topic_label, verdict))
        if mid not in bot.seen_messages:
            bot.seen_messages.add(mid)
            bot.preferred_seen += verdict == PREFERRED
        if verdict == PREFERRED and msg.repost_parent is not None:
            src = world.author(msg.repost_parent)
            if src != bot.bot_id and not bot.follows(src):
                candidates.append(mid)
    record = ExposureRecord(now, shown)
    if candidates and len(bot.followings) < bot.follow_cap:
        trigger = candidates[rng.randrange(len(candidates))]
        src = world.direct_source(trigger)
        world.add_follow(bot.bot_id, src)
        bot._add_following(src, now, trigger)
        record.new_following = src
        record.trigger_message = trigger
    bot.exposure_log.append(record)
    if len(bot.followings) >= bot.follow_cap:
        bot.phase = FINISHED
    else:
        bot.next_wake = now + rng.uniform(*bot.idle_range)
    return record


def run_bots(bots: Sequence[BotState], world: World, classifier: Classifier,
             rngs: Sequence[random.Random], t_max: float,
             on_events: Callable[[list[Event]], None] | None = None) -> None:
    """Advance the world and wake bots in time order until every bot finishes.

    Bots wake in ``(next_wake, index)`` order. A bot whose next wake falls
    after ``t_max`` finishes with ``hit_t_max`` set. The world is stepped
    only as far as the last wake, so no events past it are produced.
    """
    heap = [(b.next_wake, i) for i, b in enumerate(bots) if b.phase == RUNNING]
    heapq.heapify(heap)
    while heap:
        t, i = heapq.heappop(heap)
        bot = bots[i]
        if len(bot.followings) >= bot.follow_cap:
            bot.phase = FINISHED
            continue
        if t > t_max:
            bot.phase = FINISHED
            bot.hit_t_max = True
            continue
        if t > world.clock:
            events = world.step_until(t)
            if on_events is not None:
                on_events(events)
        wake(bot, world, classifier, rngs[i])
        if bot.phase == RUNNING:
            heapq.heappush(heap, (bot.next_wake, i))


def run_bot_to_completion(bot: BotState, world: World, classifier: Classifier,
                          rng: random.Random, t_max: float = 1440.0) -> BotState:
    run_bots([bot], world, classifier, [rng], t_max)
    return bot


# -- export ------------------------------------------------------------------------------------

def write_exposures(bots: Iterable[BotState], fh: IO[str], seed: int | None = None) -> None:
    if seed is not None:
        fh.write(f"# seed={seed}\n")
    for bot in bots:
        for rec in bot.exposure_log:
            fh.write(rec.to_json(bot.bot_id) + "\n")


def read_exposures(fh: IO[str]) -> dict[int, list[ExposureRecord]]:
    logs: dict[int, list[ExposureRecord]] = {}
    for line in fh:
        if not line.strip() or line.startswith("#"):
            continue
        bot_id, rec = ExposureRecord.from_json(line)
        logs.setdefault(bot_id, []).append(rec)
    return logs


FOLLOWINGS_HEADER = "bot_id,user_id,acquired_at,trigger_message_id"


def write_followings(bots: Iterable[BotState], fh: IO[str]) -> None:
    fh.write(FOLLOWINGS_HEADER + "\n")
    for bot in bots:
        for a in bot.acquisitions:
            trig = "" if a.trigger_message is None else str(a.trigger_message)
            fh.write(f"{bot.bot_id},{a.user_id},{a.acquired_at!r},{trig}\n")


def read_followings(fh: IO[str]) -> dict[int, list[Acquisition]]:
    header = fh.readline().strip()
    if header != FOLLOWINGS_HEADER:
        raise ValueError(f"unexpected followings header {header!r}")
    out: dict[int, list[Acquisition]] = {}
    for line in fh:
        if not line.strip():
            continue
        b, u, at, trig = line.rstrip("\n").split(",")
        out.setdefault(int(b), []).append(Acquisition(int(u), float(at), int(trig) if trig else None))
    return out
