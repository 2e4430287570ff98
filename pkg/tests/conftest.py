from __future__ import annotations

import os
import sys
from pathlib import Path
from typing import Sequence

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from polarsim import engine
from polarsim.engine import FollowGraph, TopicContent, UserProfile, World, ZipfSampler

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

engine.CHECK_TIMELINES = True

CONFIG_DIR = Path(__file__).resolve().parents[1] / "src" / "polarsim" / "configs"


def make_world(topics: Sequence[str], arcs=(), rate: float | Sequence[float] = 0.0,
               repost: float | Sequence[float] = 0.0, seed: int = 0, vocab: int = 50,
               length_range=(8, 12), ad_prob: float = 0.0) -> World:
    """A hand-wired world: user i has topic ``topics[i]``; topic vocabularies are disjoint."""
    n = len(topics)
    rates = [rate] * n if isinstance(rate, (int, float)) else list(rate)
    reposts = [repost] * n if isinstance(repost, (int, float)) else list(repost)
    names = sorted(set(topics))
    users = [UserProfile(i, topics[i], float(rates[i]), float(reposts[i]), 0.0) for i in range(n)]
    contents = [TopicContent(name, np.arange(k * vocab, (k + 1) * vocab), ZipfSampler(vocab, 1.0, seed + k))
                for k, name in enumerate(names)]
    tokens = [f"w{i}" for i in range(vocab * len(names))]
    return World(users, FollowGraph(arcs), contents, tokens, seed, length_range=length_range, ad_prob=ad_prob)


@pytest.fixture(scope="session")
def e1_config_path() -> Path:
    return CONFIG_DIR / "e1.toml"


@pytest.fixture(scope="session")
def w1_config_path() -> Path:
    return CONFIG_DIR / "w1.toml"
