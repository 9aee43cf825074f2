"""Synthetic biased-click log generator with known ground truth.

The click model follows the examination hypothesis: a displayed item is
clicked with probability examination(position, size) * relevance(user,
item), with examination = eta^(position-1) * size_factor[size].

To give debiasing something real to recover, the logging policy is
confounded: every news item carries a "quality" score (clickbait appeal)
that leaks into its title via a shared pool of attention-grabbing words,
and slates are ordered by quality.  Quality is independent of true
relevance, so a content-only model trained on these logs inherits the
examination boost of top-ranked clickbait, while a bias-aware model can
explain it away with the observed position/size features.

Besides the biased train/test log, an unbiased log is written where the
label column carries ground-truth relevance (relevance > threshold) and
positions/sizes are uniform; that file is the debiasing yardstick.
"""

import math
from dataclasses import dataclass, field, fields, replace
from typing import Dict, List, Tuple

import numpy as np

from .core import make_rng
from .data import (CandidateEntry, HistoryEntry, ImpressionRecord,
                   NewsArticle, write_behaviors, write_news)

DAY = 86400
BASE_TS = 1_600_000_000


@dataclass(frozen=True)
class SimConfig:
    n_users: int = 500
    n_news: int = 2000
    n_topics: int = 12
    vocab_size: int = 600
    title_len_min: int = 5
    title_len_max: int = 9
    n_positions: int = 10
    eta: float = 0.85
    size_factors: Tuple[float, float, float, float] = (0.5, 0.7, 0.85, 1.0)
    impressions_per_user: int = 40
    slate_size: int = 8
    seed: int = 1
    # logging-policy / ground-truth knobs
    pool_size: int = 30
    policy_sharpness: float = 6.0
    topics_per_user: int = 3
    affinity_scale: float = 3.0
    affinity_offset: float = 0.5
    relevance_threshold: float = 0.5
    unbiased_per_user: int = 8
    span_days: int = 28
    train_days: int = 21

    def validate(self):
        for name in ("n_users", "n_news", "n_topics", "vocab_size",
                     "impressions_per_user", "slate_size", "n_positions",
                     "pool_size", "unbiased_per_user"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 < self.eta <= 1.0:
            raise ValueError("position decay eta must lie in (0, 1]")
        if len(self.size_factors) != 4 or any(not 0.0 < f <= 1.0 for f in self.size_factors):
            raise ValueError("need 4 size factors in (0, 1]")
        if self.slate_size > self.n_positions:
            raise ValueError("slate_size cannot exceed n_positions")
        if self.slate_size > self.pool_size:
            raise ValueError("slate_size cannot exceed pool_size")
        if self.title_len_min < 1 or self.title_len_max < self.title_len_min:
            raise ValueError("bad title length range")
        if self.topics_per_user > self.n_topics:
            raise ValueError("topics_per_user cannot exceed n_topics")


@dataclass
class GroundTruth:
    """Everything needed to replay any click probability in the log."""
    eta: float
    size_factors: Tuple[float, ...]
    affinity_scale: float
    affinity_offset: float
    relevance_threshold: float
    user_topics: Dict[str, Tuple[int, ...]] = field(default_factory=dict)
    news_topic: Dict[str, int] = field(default_factory=dict)
    news_quality: Dict[str, float] = field(default_factory=dict)

    def relevance(self, user_id: str, news_id: str) -> float:
        liked = self.news_topic[news_id] in self.user_topics[user_id]
        affinity = self.affinity_scale * ((1.0 if liked else 0.0) - self.affinity_offset)
        return 1.0 / (1.0 + math.exp(-affinity))

    def examination(self, position: int, size: int) -> float:
        return self.eta ** (position - 1) * self.size_factors[size]

    def click_probability(self, user_id: str, news_id: str,
                          position: int, size: int) -> float:
        return self.examination(position, size) * self.relevance(user_id, news_id)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"eta = {self.eta!r}\n")
            fh.write("size_factors = " + ",".join(repr(f) for f in self.size_factors) + "\n")
            fh.write(f"affinity_scale = {self.affinity_scale!r}\n")
            fh.write(f"affinity_offset = {self.affinity_offset!r}\n")
            fh.write(f"relevance_threshold = {self.relevance_threshold!r}\n")
            for uid in sorted(self.user_topics):
                fh.write(f"user.{uid} = " + ",".join(str(t) for t in self.user_topics[uid]) + "\n")
            for nid in sorted(self.news_topic):
                fh.write(f"news.{nid} = topic:{self.news_topic[nid]} "
                         f"quality:{self.news_quality[nid]!r}\n")

    @classmethod
    def load(cls, path):
        scalars = {}
        users = {}
        topics = {}
        quality = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                key, _, value = line.rstrip("\n").partition(" = ")
                if key.startswith("user."):
                    users[key[5:]] = tuple(int(t) for t in value.split(","))
                elif key.startswith("news."):
                    tpart, qpart = value.split(" ")
                    topics[key[5:]] = int(tpart.split(":")[1])
                    quality[key[5:]] = float(qpart.split(":")[1])
                else:
                    scalars[key] = value
        return cls(
            eta=float(scalars["eta"]),
            size_factors=tuple(float(x) for x in scalars["size_factors"].split(",")),
            affinity_scale=float(scalars["affinity_scale"]),
            affinity_offset=float(scalars["affinity_offset"]),
            relevance_threshold=float(scalars["relevance_threshold"]),
            user_topics=users, news_topic=topics, news_quality=quality)


def _vocab_layout(cfg: SimConfig):
    n_common = max(4, cfg.vocab_size // 5)
    n_clickbait = max(4, cfg.vocab_size // 10)
    per_topic = (cfg.vocab_size - n_common - n_clickbait) // cfg.n_topics
    if per_topic < 4:
        raise ValueError(
            f"vocabulary of {cfg.vocab_size} is too small for "
            f"{cfg.n_topics} topic-exclusive word blocks")
    common = [f"c{i:03d}" for i in range(n_common)]
    clickbait = [f"x{i:03d}" for i in range(n_clickbait)]
    topic_words = [[f"t{t:02d}w{i:03d}" for i in range(per_topic)]
                   for t in range(cfg.n_topics)]
    return common, clickbait, topic_words


def _size_distribution(position: int, slate_size: int) -> np.ndarray:
    """Size probabilities, drifting from large-heavy at the top of the
    slate to small-heavy at the bottom (sizes depend on position)."""
    top = np.array([0.10, 0.50, 0.22, 0.18])
    low = np.array([0.22, 0.56, 0.14, 0.08])
    frac = (position - 1) / max(slate_size - 1, 1)
    return (1.0 - frac) * top + frac * low


def generate_catalog(cfg: SimConfig):
    """Sample the news catalog: topics, quality and topic-flavored titles.

    Titles mix topic-exclusive words with a small shared vocabulary, plus
    clickbait words in proportion to the item's quality score, so both the
    topic and the quality are recoverable from the text.
    """
    cfg.validate()
    rng = make_rng(cfg.seed, 100)
    common, clickbait, topic_words = _vocab_layout(cfg)
    articles: List[NewsArticle] = []
    truth = GroundTruth(
        eta=cfg.eta, size_factors=tuple(cfg.size_factors),
        affinity_scale=cfg.affinity_scale, affinity_offset=cfg.affinity_offset,
        relevance_threshold=cfg.relevance_threshold)
    for i in range(cfg.n_news):
        nid = f"N{i:06d}"
        topic = int(rng.integers(cfg.n_topics))
        if rng.random() < 0.3:
            quality = float(rng.uniform(0.65, 1.0))
        else:
            quality = float(rng.uniform(0.0, 0.3))
        length = int(rng.integers(cfg.title_len_min, cfg.title_len_max + 1))
        words = []
        for _ in range(length):
            r = rng.random()
            if r < 0.45 * quality:
                words.append(clickbait[int(rng.integers(len(clickbait)))])
            elif r < 0.45 * quality + 0.25:
                words.append(common[int(rng.integers(len(common)))])
            else:
                words.append(topic_words[topic][int(rng.integers(len(topic_words[topic])))])
        articles.append(NewsArticle(news_id=nid, title=" ".join(words)))
        truth.news_topic[nid] = topic
        truth.news_quality[nid] = quality
    for u in range(cfg.n_users):
        uid = f"U{u:05d}"
        liked = rng.choice(cfg.n_topics, size=cfg.topics_per_user, replace=False)
        truth.user_topics[uid] = tuple(sorted(int(t) for t in liked))
    return articles, truth


def generate_logs(cfg: SimConfig, truth: GroundTruth):
    """Simulate the biased impression log and the unbiased test log.

    Each user's timeline is drawn from a per-user RNG stream, so user
    generation order (or parallelism) cannot change the output.
    """
    cfg.validate()
    quality = np.array([truth.news_quality[f"N{i:06d}"] for i in range(cfg.n_news)])
    span = cfg.span_days * DAY
    biased: List[ImpressionRecord] = []
    unbiased: List[ImpressionRecord] = []
    for u in range(cfg.n_users):
        uid = f"U{u:05d}"
        rng = make_rng(cfg.seed, 101, u)
        times = np.sort(rng.integers(BASE_TS, BASE_TS + span, size=cfg.impressions_per_user))
        history: List[HistoryEntry] = []
        for i in range(cfg.impressions_per_user):
            pool = rng.choice(cfg.n_news, size=cfg.pool_size, replace=False)
            gumbel = rng.gumbel(size=cfg.pool_size)
            order = np.argsort(-(cfg.policy_sharpness * quality[pool] + gumbel),
                               kind="stable")
            slate = pool[order[:cfg.slate_size]]
            candidates = []
            for rank, nidx in enumerate(slate):
                position = rank + 1
                nid = f"N{int(nidx):06d}"
                size = int(rng.choice(4, p=_size_distribution(position, cfg.slate_size)))
                p_click = truth.click_probability(uid, nid, position, size)
                label = int(rng.random() < p_click)
                candidates.append(CandidateEntry(news_id=nid, position=position,
                                                 size=size, label=label))
            biased.append(ImpressionRecord(
                impression_id=f"I{u * cfg.impressions_per_user + i:07d}",
                user_id=uid, timestamp=int(times[i]),
                history=list(history), candidates=candidates))
            for c in candidates:
                if c.label:
                    history.append(HistoryEntry(news_id=c.news_id,
                                                position=c.position, size=c.size))
        # unbiased slates: uniform items, uniform positions and sizes,
        # labels are ground-truth relevance indicators
        for i in range(cfg.unbiased_per_user):
            slate = rng.choice(cfg.n_news, size=cfg.slate_size, replace=False)
            positions = rng.permutation(cfg.slate_size) + 1
            candidates = []
            for j, nidx in enumerate(slate):
                nid = f"N{int(nidx):06d}"
                rel = truth.relevance(uid, nid)
                candidates.append(CandidateEntry(
                    news_id=nid, position=int(positions[j]),
                    size=int(rng.integers(4)),
                    label=int(rel > truth.relevance_threshold)))
            unbiased.append(ImpressionRecord(
                impression_id=f"B{u * cfg.unbiased_per_user + i:07d}",
                user_id=uid, timestamp=BASE_TS + span + i,
                history=list(history), candidates=candidates))
    biased.sort(key=lambda r: (r.timestamp, r.impression_id))
    unbiased.sort(key=lambda r: (r.timestamp, r.impression_id))
    return biased, unbiased


def split_time(cfg: SimConfig) -> int:
    """Train/test boundary: the last week of the span is the test window."""
    return BASE_TS + cfg.train_days * DAY


def generate_dataset(cfg: SimConfig, out_dir):
    """Write news.tsv, behaviors.tsv, behaviors_unbiased.tsv, the ground
    truth sidecar and a manifest into ``out_dir``; returns file paths."""
    import os
    cfg.validate()
    articles, truth = generate_catalog(cfg)
    biased, unbiased = generate_logs(cfg, truth)
    paths = {
        "news": os.path.join(out_dir, "news.tsv"),
        "behaviors": os.path.join(out_dir, "behaviors.tsv"),
        "unbiased": os.path.join(out_dir, "behaviors_unbiased.tsv"),
        "truth": os.path.join(out_dir, "ground_truth.txt"),
        "manifest": os.path.join(out_dir, "dataset_manifest.txt"),
    }
    write_news(paths["news"], articles)
    write_behaviors(paths["behaviors"], biased)
    write_behaviors(paths["unbiased"], unbiased)
    truth.save(paths["truth"])
    n_clicks = sum(c.label for r in biased for c in r.candidates)
    with open(paths["manifest"], "w", encoding="utf-8") as fh:
        fh.write(f"split_time = {split_time(cfg)}\n")
        fh.write(f"n_impressions = {len(biased)}\n")
        fh.write(f"n_unbiased_impressions = {len(unbiased)}\n")
        fh.write(f"n_clicks = {n_clicks}\n")
        for f in fields(SimConfig):
            value = getattr(cfg, f.name)
            if isinstance(value, tuple):
                value = ",".join(repr(v) for v in value)
            fh.write(f"sim_{f.name} = {value}\n")
    return paths


def config_from_pairs(pairs: Dict[str, str]) -> SimConfig:
    """Build a SimConfig from "sim_*" config keys (strings)."""
    cfg = SimConfig()
    updates = {}
    for key, value in pairs.items():
        if not key.startswith("sim_"):
            raise ValueError(f"not a simulator key: {key!r}")
        name = key[4:]
        if name not in {f.name for f in fields(SimConfig)}:
            raise ValueError(f"unknown simulator key: {key!r}")
        current = getattr(cfg, name)
        if isinstance(current, tuple):
            updates[name] = tuple(float(x) for x in value.split(","))
        elif isinstance(current, float):
            updates[name] = float(value)
        else:
            updates[name] = int(value)
    return replace(cfg, **updates)
