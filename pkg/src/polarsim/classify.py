"""Preference classification.

Three pieces share one verdict interface (``classify(message, preference)``):

* :class:`ClassificationStandard` holds the accept/reject rules loaded from
  a data file; rejections always win.
* :class:`OracleClassifier` uses the synthetic ground-truth topic label.
* :class:`LinearClassifier` wraps a :class:`LinearTextModel`, a softmax
  linear model over averaged hashed word n-grams trained by SGD.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .errors import ConfigError, TrainingError
from ._toml import load_toml, loads_toml

PREFERRED = "preferred"
OTHER = "other"

MODEL_MAGIC = b"PSLTM\x00\x00\x01"
MODEL_VERSION = 1


@dataclass(frozen=True)
class RejectRule:
    flag: str
    description: str = ""
    keywords: frozenset[str] = frozenset()


@dataclass(frozen=True)
class TopicStandard:
    accept: tuple[str, ...] = ()
    accept_keywords: frozenset[str] = frozenset()
    reject: tuple[RejectRule, ...] = ()

    @property
    def reject_flags(self) -> tuple[str, ...]:
        return tuple(r.flag for r in self.reject)


@dataclass(frozen=True)
class ClassificationStandard:
    common_reject_flags: frozenset[str] = frozenset({"advertisement"})
    min_length: int = 5
    common_reject_keywords: frozenset[str] = frozenset()
    topics: dict[str, TopicStandard] = field(default_factory=dict)

    @classmethod
    def from_mapping(cls, d: dict) -> "ClassificationStandard":
        common = d.get("common_reject", {})
        topics = {}
        for name, t in d.get("topics", {}).items():
            rules = tuple(
                RejectRule(r["flag"], r.get("description", ""), frozenset(r.get("keywords", [])))
                for r in t.get("reject", [])
            )
            topics[name] = TopicStandard(tuple(t.get("accept", [])),
                                         frozenset(t.get("accept_keywords", [])), rules)
        min_length = common.get("min_length", 5)
        if not isinstance(min_length, int) or min_length < 0:
            raise ConfigError("must be a non-negative integer", "common_reject.min_length")
        return cls(frozenset(common.get("flags", ["advertisement"])), min_length,
                   frozenset(common.get("keywords", [])), topics)

    @classmethod
    def load(cls, path: str | Path | None = None) -> "ClassificationStandard":
        """Load from a TOML file; ``None`` loads the packaged default."""
        if path is None:
            text = resources.files("polarsim").joinpath("data/standard.toml").read_text("utf-8")
            return cls.from_mapping(loads_toml(text))
        return cls.from_mapping(load_toml(path))

    def reject_flags_for(self, topic: str) -> tuple[str, ...]:
        t = self.topics.get(topic)
        return t.reject_flags if t else ()

    def rejects(self, message, preference: str) -> bool:
        """True when the common or the preference-specific reject rules fire."""
        if message.is_advertisement and "advertisement" in self.common_reject_flags:
            return True
        if message.reject_tag is not None and message.reject_tag in self.common_reject_flags:
            return True
        words = message.words
        if len(words) < self.min_length:
            return True
        if self.common_reject_keywords and not self.common_reject_keywords.isdisjoint(words):
            return True
        t = self.topics.get(preference)
        if t is None:
            return False
        for rule in t.reject:
            if message.reject_tag == rule.flag:
                return True
            if rule.keywords and not rule.keywords.isdisjoint(words):
                return True
        return False

    def accepts(self, message, preference: str) -> bool:
        """Rule filter: not rejected and at least one accept keyword present."""
        if self.rejects(message, preference):
            return False
        t = self.topics.get(preference)
        return bool(t and t.accept_keywords and not t.accept_keywords.isdisjoint(message.words))


_DEFAULT_STANDARD: ClassificationStandard | None = None


def default_standard() -> ClassificationStandard:
    global _DEFAULT_STANDARD
    if _DEFAULT_STANDARD is None:
        _DEFAULT_STANDARD = ClassificationStandard.load()
    return _DEFAULT_STANDARD


def classify_oracle(message, preference: str,
                    standard: ClassificationStandard | None = None) -> str:
    standard = standard or default_standard()
    if message.topic_label == preference and not standard.rejects(message, preference):
        return PREFERRED
    return OTHER


class Classifier(Protocol):
    def classify(self, message, preference: str) -> str: ...


class OracleClassifier:
    name = "oracle"

    def __init__(self, standard: ClassificationStandard | None = None):
        self.standard = standard or default_standard()

    def classify(self, message, preference: str) -> str:
        return classify_oracle(message, preference, self.standard)


class RuleClassifier:
    name = "rules"

    def __init__(self, standard: ClassificationStandard | None = None):
        self.standard = standard or default_standard()

    def classify(self, message, preference: str) -> str:
        return PREFERRED if self.standard.accepts(message, preference) else OTHER


# -- linear text model ------------------------------------------------------------------

@dataclass(frozen=True)
class TrainParams:
    learning_rate: float = 0.5
    epochs: int = 5
    ngram: int = 2
    bucket_count: int = 1 << 18
    seed: int = 0


def _bucket(token: str, buckets: int) -> int:
    return zlib.crc32(token.encode("utf-8")) & (buckets - 1)


def features(tokens: Sequence[str], ngram: int, buckets: int) -> np.ndarray:
    """Hashed bucket ids of every word n-gram up to ``ngram`` (with repeats)."""
    feats = [_bucket(t, buckets) for t in tokens]
    for n in range(2, ngram + 1):
        feats.extend(_bucket(" ".join(tokens[i:i + n]), buckets) for i in range(len(tokens) - n + 1))
    return np.asarray(feats, dtype=np.int64)


@dataclass
class LinearTextModel:
    labels: tuple[str, ...]
    weights: np.ndarray  # (classes, buckets)
    bias: np.ndarray
    ngram: int
    params: TrainParams

    @property
    def bucket_count(self) -> int:
        return self.weights.shape[1]

    def scores(self, tokens: Sequence[str]) -> np.ndarray:
        f = features(tokens, self.ngram, self.bucket_count)
        return self.weights[:, f].mean(axis=1) + self.bias

    def probabilities(self, tokens: Sequence[str]) -> np.ndarray:
        return _softmax(self.scores(tokens))

    def save(self, path: str | Path) -> None:
        header = json.dumps({
            "version": MODEL_VERSION,
            "labels": list(self.labels),
            "ngram": self.ngram,
            "bucket_count": self.bucket_count,
            "params": self.params.__dict__,
        }, sort_keys=True).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(MODEL_MAGIC)
            fh.write(struct.pack("<I", len(header)))
            fh.write(header)
            fh.write(np.ascontiguousarray(self.weights, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(self.bias, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "LinearTextModel":
        with open(path, "rb") as fh:
            magic = fh.read(8)
            if magic != MODEL_MAGIC:
                raise ValueError(f"{path}: not a linear text model file")
            (hlen,) = struct.unpack("<I", fh.read(4))
            header = json.loads(fh.read(hlen))
            if header["version"] != MODEL_VERSION:
                raise ValueError(f"{path}: unsupported model version {header['version']}")
            k, b = len(header["labels"]), header["bucket_count"]
            weights = np.frombuffer(fh.read(8 * k * b), dtype="<f8").reshape(k, b).copy()
            bias = np.frombuffer(fh.read(8 * k), dtype="<f8").copy()
        return cls(tuple(header["labels"]), weights, bias, header["ngram"], TrainParams(**header["params"]))


def _softmax(s: np.ndarray) -> np.ndarray:
    e = np.exp(s - s.max())
    return e / e.sum()


def train_linear(corpus: Sequence[tuple[Sequence[str], str]],
                 params: TrainParams = TrainParams(), min_per_class: int = 50) -> LinearTextModel:
    """SGD on softmax cross-entropy over averaged hashed n-gram features.

    The learning rate decays linearly to zero over all updates. Deterministic
    given ``params.seed``.
    """
    if params.bucket_count <= 0 or params.bucket_count & (params.bucket_count - 1):
        raise TrainingError("bucket_count must be a power of two")
    labels = tuple(sorted({lab for _, lab in corpus}))
    if len(labels) < 2:
        raise TrainingError(f"need at least 2 classes, got {len(labels)}")
    counts = {lab: 0 for lab in labels}
    for _, lab in corpus:
        counts[lab] += 1
    short = [lab for lab, c in counts.items() if c < min_per_class]
    if short:
        raise TrainingError(f"classes with fewer than {min_per_class} examples: {short}")
    index = {lab: i for i, lab in enumerate(labels)}
    feats = [features(list(toks), params.ngram, params.bucket_count) for toks, _ in corpus]
    ys = np.array([index[lab] for _, lab in corpus])
    k = len(labels)
    w = np.zeros((k, params.bucket_count))
    bias = np.zeros(k)
    gen = np.random.default_rng(params.seed)
    total = params.epochs * len(corpus)
    step = 0
    for _ in range(params.epochs):
        for i in gen.permutation(len(corpus)):
            lr = params.learning_rate * (1.0 - step / total)
            step += 1
            f = feats[i]
            if len(f) == 0:
                continue
            p = _softmax(w[:, f].mean(axis=1) + bias)
            p[ys[i]] -= 1.0
            grad = lr * p
            # features are averaged, so each occurrence carries 1/len(f)
            np.add.at(w, (slice(None), f), -grad[:, None] / len(f))
            bias -= grad
    return LinearTextModel(labels, w, bias, params.ngram, params)


def predict(model: LinearTextModel, tokens: Sequence[str]) -> tuple[str | None, float]:
    """Most probable label and its probability; ties go to the lowest class index.

    Empty input abstains with ``(None, 0.0)``.
    """
    if not tokens:
        return None, 0.0
    p = model.probabilities(tokens)
    i = int(np.argmax(p))
    return model.labels[i], float(p[i])


class LinearClassifier:
    name = "linear"

    def __init__(self, model: LinearTextModel, standard: ClassificationStandard | None = None):
        self.model = model
        self.standard = standard or default_standard()
        self._cache: dict[int, str | None] = {}

    def label(self, message) -> str | None:
        key = getattr(message, "root_id", None)
        if key is not None and key in self._cache:
            return self._cache[key]
        lab, _ = predict(self.model, message.words)
        if key is not None:
            self._cache[key] = lab
        return lab

    def classify(self, message, preference: str) -> str:
        if self.standard.rejects(message, preference):
            return OTHER
        return PREFERRED if self.label(message) == preference else OTHER
