from __future__ import annotations

import random

import numpy as np
import pytest
from hypothesis import given, strategies as st

from polarsim.classify import (MODEL_MAGIC, OTHER, PREFERRED, ClassificationStandard, LinearClassifier,
                               OracleClassifier, RuleClassifier, TrainParams, classify_oracle,
                               default_standard, predict, train_linear)
from polarsim.engine import MessageRecord
from polarsim.errors import TrainingError
from polarsim.worldgen import TopicSettings, WorldConfig, generate_world, load_world_config

SMALL = TrainParams(bucket_count=1 << 12, epochs=5)


def msg(topic="scitech", n_words=20, ad=False, tag=None, words=None):
    words = tuple(words) if words is not None else tuple(f"w{i}" for i in range(n_words))
    return MessageRecord(0, 1, 1, None, 0, topic, words, 0.0, ad, tag)


def separable_corpus(rng, n=100):
    corpus = []
    for _ in range(n):
        corpus.append(([f"a{rng.randrange(30)}" for _ in range(10)], "A"))
        corpus.append(([f"b{rng.randrange(30)}" for _ in range(10)], "B"))
    return corpus


class TestStandard:
    def test_packaged_standard(self):
        s = default_standard()
        assert s.min_length == 5
        assert "advertisement" in s.common_reject_flags
        assert "acg" in s.reject_flags_for("entertainment")
        assert s.reject_flags_for("nonexistent") == ()

    def test_oracle_examples(self):
        assert classify_oracle(msg(), "scitech") == PREFERRED
        assert classify_oracle(msg(ad=True), "scitech") == OTHER
        assert classify_oracle(msg(n_words=3), "scitech") == OTHER
        assert classify_oracle(msg(), "entertainment") == OTHER

    def test_topic_specific_reject_flag(self):
        assert classify_oracle(msg("entertainment", tag="acg"), "entertainment") == OTHER
        assert classify_oracle(msg("entertainment", tag=None), "entertainment") == PREFERRED

    def test_rule_classifier_uses_keywords(self):
        s = ClassificationStandard.from_mapping({
            "common_reject": {"flags": ["advertisement"], "min_length": 5, "keywords": ["spam"]},
            "topics": {"tech": {"accept_keywords": ["robot"],
                                "reject": [{"flag": "weather", "keywords": ["rain"]}]}}})
        rc = RuleClassifier(s)
        assert rc.classify(msg(words="a b c robot d".split()), "tech") == PREFERRED
        assert rc.classify(msg(words="a b c robot rain".split()), "tech") == OTHER
        assert rc.classify(msg(words="a b c robot spam".split()), "tech") == OTHER
        assert rc.classify(msg(words="a b c d e".split()), "tech") == OTHER

    @given(st.sampled_from(["scitech", "entertainment"]), st.integers(0, 30), st.booleans(),
           st.sampled_from([None, "acg", "lyrics", "weather"]))
    def test_rejection_always_wins(self, topic, n, ad, tag):
        m = msg(topic, n, ad, tag)
        model = train_linear(separable_corpus(random.Random(0), 60), SMALL)
        for pref in ("scitech", "entertainment"):
            if default_standard().rejects(m, pref):
                for clf in (OracleClassifier(), RuleClassifier(), LinearClassifier(model)):
                    assert clf.classify(m, pref) == OTHER


class TestLinearModel:
    def test_separable_corpus(self):
        corpus = separable_corpus(random.Random(1))
        model = train_linear(corpus, SMALL)
        acc = np.mean([predict(model, toks)[0] == lab for toks, lab in corpus])
        assert acc >= 0.99
        assert predict(model, ["a1", "a2", "a3"])[0] == "A"

    def test_degenerate_corpora(self):
        with pytest.raises(TrainingError):
            train_linear([(["x"], "A")] * 100, SMALL)
        with pytest.raises(TrainingError):
            train_linear([(["x"], "A")] * 100 + [(["y"], "B")] * 10, SMALL)
        with pytest.raises(TrainingError):
            train_linear(separable_corpus(random.Random(0)), TrainParams(bucket_count=1000))

    def test_empty_text_abstains(self):
        model = train_linear(separable_corpus(random.Random(2)), SMALL)
        assert predict(model, []) == (None, 0.0)
        assert LinearClassifier(model).classify(msg(words=()), "A") == OTHER

    def test_ties_go_to_lowest_class_index(self):
        model = train_linear(separable_corpus(random.Random(2)), SMALL)
        model.weights[:] = 0.0
        model.bias[:] = 0.0
        assert predict(model, ["anything"]) == ("A", 0.5)

    @given(st.lists(st.sampled_from([f"a{i}" for i in range(5)] + [f"b{i}" for i in range(5)] + ["zz"]),
                    min_size=1, max_size=30))
    def test_probabilities_are_normalized_and_pure(self, tokens):
        model = _shared_model()
        p = model.probabilities(tokens)
        assert np.all(np.isfinite(model.scores(tokens)))
        assert abs(p.sum() - 1.0) <= 1e-6
        assert predict(model, tokens) == predict(model, list(tokens))

    def test_training_is_deterministic(self):
        corpus = separable_corpus(random.Random(3))
        a = train_linear(corpus, SMALL)
        b = train_linear(corpus, SMALL)
        assert np.array_equal(a.weights, b.weights)

    def test_save_and_load(self, tmp_path):
        model = train_linear(separable_corpus(random.Random(4)), SMALL)
        path = tmp_path / "m.bin"
        model.save(path)
        assert path.read_bytes()[:8] == MODEL_MAGIC
        loaded = type(model).load(path)
        assert loaded.labels == model.labels and np.array_equal(loaded.weights, model.weights)
        assert predict(loaded, ["a1", "b2", "b3"]) == predict(model, ["a1", "b2", "b3"])
        bad = tmp_path / "bad.bin"
        bad.write_bytes(b"NOTAMODEL" + path.read_bytes()[8:])
        with pytest.raises(ValueError):
            type(model).load(bad)


_MODEL = None


def _shared_model():
    global _MODEL
    if _MODEL is None:
        _MODEL = train_linear(separable_corpus(random.Random(5)), SMALL)
    return _MODEL


def _originals(world, count):
    out = []
    for rec in world.iter_messages():
        if not rec.is_repost:
            out.append(rec)
            if len(out) == count:
                break
    return out


@pytest.mark.parametrize("seed", range(5))
def test_held_out_accuracy_with_shared_vocabulary(seed):
    cfg = WorldConfig(user_count=400, topic_mix={"x": 0.5, "y": 0.5},
                      topics={"x": TopicSettings(), "y": TopicSettings()},
                      posting_rate=1.0, repost_prob=0.0, shared_vocab_fraction=0.2, rng_seed=seed,
                      cross_follow_density=0.0)
    w = generate_world(cfg)
    w.step_until(10.0)
    msgs = _originals(w, 3000)
    train, test = msgs[:2000], msgs[2000:]
    model = train_linear([(m.words, m.topic_label) for m in train], TrainParams(seed=seed))
    acc = np.mean([predict(model, m.words)[0] == m.topic_label for m in test])
    assert acc >= 0.9


def test_agreement_with_oracle_on_reference_corpus(w1_config_path):
    w = generate_world(load_world_config(w1_config_path).with_seed(3))
    w.step_until(150.0)
    msgs = list(w.iter_messages())
    train = [m for m in msgs if not m.is_repost][:5000]
    seen = {m.message_id for m in train}
    held = [m for m in msgs if m.root_id not in seen][-10_000:]
    assert len(held) == 10_000
    clf = LinearClassifier(train_linear([(m.words, m.topic_label) for m in train]))
    oracle = OracleClassifier()
    agree = total = 0
    for m in held:
        for pref in ("entertainment", "scitech"):
            agree += clf.classify(m, pref) == oracle.classify(m, pref)
            total += 1
    assert agree / total >= 0.95
