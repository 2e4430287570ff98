"""Discrete-event microblogging platform.

Users post and repost on per-user exponential clocks. Timelines are strictly
chronological and capped at the first-page size of :data:`TIMELINE_CAP`
messages; there is no ranking or recommendation of any kind.

Message ids are assigned in processing order, and processing order is time
order, so "newest first" is the same as "largest id first". That includes the
equal-timestamp tie rule.
"""

from __future__ import annotations

import heapq
import json
import random
from bisect import bisect_right
from dataclasses import dataclass
from typing import IO, Iterable, Iterator, NamedTuple, Sequence

import numpy as np

from .errors import NotARepostError, OrderingError, SelfFollowError

TIMELINE_CAP = 50
NO_PARENT = -1
# When set (the test suite does), every composed timeline is checked for
# length, order and authorship before it is returned.
CHECK_TIMELINES = False
_CHUNK = 1 << 16


class FollowGraph:
    """Directed follow arcs; ``src -> dst`` means src follows dst."""

    def __init__(self, arcs: Iterable[tuple[int, int]] = ()):
        self._out: dict[int, set[int]] = {}
        self._in: dict[int, set[int]] = {}
        self._count = 0
        for src, dst in arcs:
            self.add(src, dst)

    def add(self, src: int, dst: int) -> bool:
        if src == dst:
            raise SelfFollowError(f"user {src} cannot follow itself")
        out = self._out.setdefault(src, set())
        if dst in out:
            return False
        out.add(dst)
        self._in.setdefault(dst, set()).add(src)
        self._count += 1
        return True

    def has(self, src: int, dst: int) -> bool:
        return dst in self._out.get(src, ())

    def followings(self, user: int) -> frozenset[int] | set[int]:
        # returned sets are live views; callers must not mutate them
        return self._out.get(user, frozenset())

    def followers(self, user: int) -> frozenset[int] | set[int]:
        return self._in.get(user, frozenset())

    def out_degree(self, user: int) -> int:
        return len(self._out.get(user, ()))

    def in_degree(self, user: int) -> int:
        return len(self._in.get(user, ()))

    def __len__(self) -> int:
        return self._count

    def __contains__(self, arc: tuple[int, int]) -> bool:
        return self.has(*arc)

    def arcs(self) -> list[tuple[int, int]]:
        return sorted((s, d) for s, outs in self._out.items() for d in outs)

    def nodes(self) -> list[int]:
        return sorted(set(self._out) | set(self._in))

    def check(self) -> None:
        """Cross-check the two adjacency indexes; raises AssertionError."""
        n_out = sum(len(v) for v in self._out.values())
        n_in = sum(len(v) for v in self._in.values())
        assert n_out == n_in == self._count, (n_out, n_in, self._count)
        for s, outs in self._out.items():
            assert s not in outs
            for d in outs:
                assert s in self._in[d]

    def copy(self) -> "FollowGraph":
        g = FollowGraph()
        g._out = {k: set(v) for k, v in self._out.items()}
        g._in = {k: set(v) for k, v in self._in.items()}
        g._count = self._count
        return g


@dataclass(frozen=True, slots=True)
class UserProfile:
    user_id: int
    topic: str
    posting_rate: float
    repost_prob: float
    cross_topic_repost_prob: float = 0.0


@dataclass(frozen=True, slots=True)
class MessageRecord:
    message_id: int
    author: int
    origin_author: int
    repost_parent: int | None
    root_id: int
    topic_label: str
    words: tuple[str, ...]
    timestamp: float
    is_advertisement: bool = False
    reject_tag: str | None = None

    @property
    def is_repost(self) -> bool:
        return self.repost_parent is not None


class Event(NamedTuple):
    t: float
    kind: str
    actor: int
    message_id: int
    parent_id: int | None

    def to_json(self) -> str:
        # same bytes as compact json.dumps; kinds are plain ascii words
        head = f'{{"t":{self.t!r},"kind":"{self.kind}","actor":{self.actor},"message_id":{self.message_id}'
        if self.parent_id is None:
            return head + "}"
        return f'{head},"parent_id":{self.parent_id}}}'



class ZipfSampler:
    """Draws word ranks with probability proportional to ``rank ** -exponent``."""

    def __init__(self, vocab_size: int, exponent: float, seed: int):
        ranks = np.arange(1, vocab_size + 1, dtype=float)
        w = ranks ** -exponent
        self.cdf = np.cumsum(w / w.sum())
        self.cdf[-1] = 1.0
        self._gen = np.random.default_rng(seed)

    def draw(self, size: int) -> np.ndarray:
        """Zero-based rank indices."""
        return np.searchsorted(self.cdf, self._gen.random(size), side="right").astype(np.int32)


@dataclass
class TopicContent:
    """Per-topic vocabulary and flag-assignment settings."""

    name: str
    vocabulary: np.ndarray  # rank index -> global word id
    sampler: ZipfSampler
    reject_tags: tuple[str, ...] = ()
    reject_tag_prob: float = 0.0


class World:
    """The simulated platform: users, follow graph, message store and clock.

    A world has a single writer. :meth:`step_until` is the only method that
    advances the clock; bots only add follow arcs through :meth:`add_follow`.
    """

    def __init__(
        self,
        users: Sequence[UserProfile],
        graph: FollowGraph,
        topics: Sequence[TopicContent],
        vocabulary_tokens: Sequence[str],
        seed: int,
        length_range: tuple[int, int] = (8, 40),
        ad_prob: float = 0.0,
    ):
        self.users = list(users)
        self.graph = graph
        self.topics = list(topics)
        self.topic_index = {t.name: i for i, t in enumerate(self.topics)}
        self.tokens = list(vocabulary_tokens)
        self.seed = seed
        self.length_range = length_range
        self.ad_prob = ad_prob
        self.config = None  # set by the generator
        self.clock = 0.0
        self._rng = random.Random(seed)
        self._user_topic = [self.topic_index[u.topic] for u in self.users]
        self._outbox: list[list[int]] = [[] for _ in self.users]
        # columnar message store
        self._time: list[float] = []
        self._author: list[int] = []
        self._parent: list[int] = []
        self._root: list[int] = []
        self._mtopic: list[int] = []
        self._wordref: list[tuple[int, int, int]] = []  # (chunk, start, length) of root
        self._ad: list[bool] = []
        self._tag: list[int] = []  # index into topic reject_tags, -1 for none
        self._chunks: list[list[np.ndarray]] = [[] for _ in self.topics]
        self._chunk_pos = [_CHUNK for _ in self.topics]
        self._records: dict[int, MessageRecord] = {}
        self._queue: list[tuple[float, int, int]] = []
        self._seq = 0
        for u in self.users:
            if u.posting_rate > 0:
                self._schedule(u.user_id, 0.0)

    # -- scheduling -------------------------------------------------------

    def _schedule(self, uid: int, now: float) -> None:
        t = now + self._rng.expovariate(self.users[uid].posting_rate)
        heapq.heappush(self._queue, (t, self._seq, uid))
        self._seq += 1

    @property
    def user_count(self) -> int:
        return len(self.users)

    @property
    def message_count(self) -> int:
        return len(self._time)

    def step_until(self, t_end: float) -> list[Event]:
        """Process every pending user event with timestamp <= ``t_end``."""
        if t_end < self.clock:
            raise OrderingError(f"t_end={t_end} is before clock={self.clock}")
        log: list[Event] = []
        q = self._queue
        while q and q[0][0] <= t_end:
            t, _, uid = heapq.heappop(q)
            self.clock = t
            log.append(self._fire(uid, t))
            self._schedule(uid, t)
        self.clock = t_end
        return log

    def _fire(self, uid: int, t: float) -> Event:
        user = self.users[uid]
        rng = self._rng
        if user.repost_prob > 0 and rng.random() < user.repost_prob:
            visible = self.timeline_ids(self.graph.followings(uid))
            if visible:
                mine = self._user_topic[uid]
                same = [m for m in visible if self._mtopic[m] == mine]
                other = [m for m in visible if self._mtopic[m] != mine]
                want_other = rng.random() < user.cross_topic_repost_prob
                pool = (other or same) if want_other else (same or other)
                parent = pool[rng.randrange(len(pool))]
                mid = self._append(t, uid, parent)
                return Event(t, "repost", uid, mid, parent)
        mid = self._append(t, uid, NO_PARENT)
        return Event(t, "post", uid, mid, None)

    def publish(self, author: int, parent: int | None = None) -> int:
        """Post (or, given ``parent``, repost) a message at the current clock.

        For scripted scenarios; scheduled user activity goes through
        :meth:`step_until`. Returns the new message id.
        """
        if not 0 <= author < len(self.users):
            raise KeyError(f"unknown user {author}")
        if parent is not None:
            self._check_id(parent)
        return self._append(self.clock, author, NO_PARENT if parent is None else parent)

    def _append(self, t: float, author: int, parent: int) -> int:
        mid = len(self._time)
        self._time.append(t)
        self._author.append(author)
        self._parent.append(parent)
        if parent == NO_PARENT:
            ti = self._user_topic[author]
            topic = self.topics[ti]
            lo, hi = self.length_range
            length = self._rng.randint(lo, hi)
            self._root.append(mid)
            self._mtopic.append(ti)
            self._wordref.append(self._take_words(ti, length))
            self._ad.append(self.ad_prob > 0 and self._rng.random() < self.ad_prob)
            tag = -1
            if topic.reject_tags and topic.reject_tag_prob > 0 and self._rng.random() < topic.reject_tag_prob:
                tag = self._rng.randrange(len(topic.reject_tags))
            self._tag.append(tag)
        else:
            root = self._root[parent]
            self._root.append(root)
            self._mtopic.append(self._mtopic[root])
            self._wordref.append(self._wordref[root])
            self._ad.append(self._ad[root])
            self._tag.append(self._tag[root])
        self._outbox[author].append(mid)
        return mid

    def _take_words(self, ti: int, length: int) -> tuple[int, int, int]:
        if self._chunk_pos[ti] + length > _CHUNK:
            self._chunks[ti].append(self.topics[ti].sampler.draw(_CHUNK))
            self._chunk_pos[ti] = 0
        start = self._chunk_pos[ti]
        self._chunk_pos[ti] += length
        return (len(self._chunks[ti]) - 1, start, length)

    # -- follow graph -------------------------------------------------------

    def add_follow(self, src: int, dst: int) -> str:
        """Insert ``src -> dst``; returns ``"inserted"`` or ``"already_present"``."""
        return "inserted" if self.graph.add(src, dst) else "already_present"

    # -- messages -----------------------------------------------------------

    def _check_id(self, mid: int) -> None:
        if not 0 <= mid < len(self._time):
            raise KeyError(f"unknown message {mid}")

    def author(self, mid: int) -> int:
        return self._author[mid]

    def timestamp(self, mid: int) -> float:
        return self._time[mid]

    def parent(self, mid: int) -> int | None:
        p = self._parent[mid]
        return None if p == NO_PARENT else p

    def is_repost(self, mid: int) -> bool:
        return self._parent[mid] != NO_PARENT

    def topic_of(self, mid: int) -> str:
        return self.topics[self._mtopic[mid]].name

    def root_of(self, mid: int) -> int:
        return self._root[mid]

    def word_ids(self, mid: int) -> np.ndarray:
        ti = self._mtopic[mid]
        chunk, start, length = self._wordref[mid]
        ranks = self._chunks[ti][chunk][start:start + length]
        return self.topics[ti].vocabulary[ranks]

    def words(self, mid: int) -> tuple[str, ...]:
        tok = self.tokens
        return tuple(tok[w] for w in self.word_ids(mid).tolist())

    def message(self, mid: int) -> MessageRecord:
        rec = self._records.get(mid)
        if rec is None:
            self._check_id(mid)
            ti = self._mtopic[mid]
            tag = self._tag[mid]
            root = self._root[mid]
            rec = MessageRecord(
                message_id=mid,
                author=self._author[mid],
                origin_author=self._author[root],
                repost_parent=self.parent(mid),
                root_id=root,
                topic_label=self.topics[ti].name,
                words=self.words(mid),
                timestamp=self._time[mid],
                is_advertisement=self._ad[mid],
                reject_tag=None if tag < 0 else self.topics[ti].reject_tags[tag],
            )
            self._records[mid] = rec
        return rec

    def direct_source(self, mid: int) -> int:
        """Author of the immediate parent of a repost."""
        self._check_id(mid)
        p = self._parent[mid]
        if p == NO_PARENT:
            raise NotARepostError(f"message {mid} is an original post")
        return self._author[p]

    # -- timelines ------------------------------------------------------------

    def timeline_ids(self, followings: Iterable[int], now: float | None = None,
                     limit: int = TIMELINE_CAP) -> list[int]:
        """Ids of the ``limit`` newest messages by ``followings``, newest first.

        Ids grow with time, so the newest messages are the largest ids.
        Followings are visited from the one with the newest message down and
        the scan stops once no remaining following can beat the current
        ``limit``-th id.
        """
        outbox = self._outbox
        n = len(outbox)
        max_id = None if now is None or now >= self.clock else bisect_right(self._time, now) - 1
        heads = []  # (newest visible id, following, end index)
        for f in followings:
            if f < n and outbox[f]:
                ob = outbox[f]
                end = len(ob) if max_id is None else bisect_right(ob, max_id)
                if end:
                    heads.append((ob[end - 1], f, end))
        heads.sort(reverse=True)
        ids: list[int] = []
        floor = -1  # a lower bound on the limit-th newest id once known
        for newest, f, end in heads:
            if newest <= floor:
                break
            ob = outbox[f]
            start = max(end - limit, bisect_right(ob, floor, 0, end) if floor >= 0 else 0)
            ids.extend(ob[start:end])
            if len(ids) >= (2 * limit if floor >= 0 else limit):
                ids.sort(reverse=True)
                del ids[limit:]
                floor = ids[-1]
        ids.sort(reverse=True)
        del ids[limit:]
        if CHECK_TIMELINES:
            self._check_timeline(ids, followings, max_id, limit)
        return ids

    def _check_timeline(self, ids: list[int], followings: Iterable[int], max_id: int | None,
                        limit: int) -> None:
        allowed = set(followings)
        if len(ids) > limit:
            raise AssertionError(f"timeline of {len(ids)} messages exceeds {limit}")
        if any(a <= b for a, b in zip(ids, ids[1:])):
            raise AssertionError("timeline not strictly newest first")
        for m in ids:
            if self._author[m] not in allowed or (max_id is not None and m > max_id):
                raise AssertionError(f"message {m} does not belong on this timeline")

    def iter_messages(self) -> Iterator[MessageRecord]:
        for mid in range(self.message_count):
            yield self.message(mid)

    # -- persistence ------------------------------------------------------------

    def write_users(self, fh: IO[str]) -> None:
        fh.write("user_id,topic,posting_rate,repost_prob\n")
        for u in self.users:
            fh.write(f"{u.user_id},{u.topic},{u.posting_rate!r},{u.repost_prob!r}\n")


def compose_timeline(world: World, viewer_followings: Iterable[int], now: float) -> list[MessageRecord]:
    """Chronological timeline (newest first) of at most 50 messages."""
    return [world.message(m) for m in world.timeline_ids(viewer_followings, now)]


def add_follow(world: World, src: int, dst: int) -> str:
    return world.add_follow(src, dst)


def direct_source(world: World, message_id: int) -> int:
    return world.direct_source(message_id)


def step_until(world: World, t_end: float) -> list[Event]:
    return world.step_until(t_end)


def write_edges(arcs: Iterable[tuple[int, int]], fh: IO[str], seed: int | None = None) -> None:
    """Write sorted ``src dst`` lines, preceded by a ``#`` seed header."""
    if seed is not None:
        fh.write(f"# seed={seed}\n")
    for s, d in sorted(arcs):
        fh.write(f"{s} {d}\n")


def read_edges(fh: IO[str]) -> list[tuple[int, int]]:
    arcs = []
    for line in fh:
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        s, d = line.split()
        arcs.append((int(s), int(d)))
    return arcs


def write_events(events: Iterable[Event], fh: IO[str], seed: int | None = None) -> None:
    if seed is not None:
        fh.write(f"# seed={seed}\n")
    for ev in events:
        fh.write(ev.to_json())
        fh.write("\n")


def read_events(fh: IO[str]) -> list[Event]:
    out = []
    for line in fh:
        if not line.strip() or line.startswith("#"):
            continue
        d = json.loads(line)
        out.append(Event(d["t"], d["kind"], d["actor"], d["message_id"], d.get("parent_id")))
    return out
