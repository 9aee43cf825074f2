import dataclasses

import numpy as np
import pytest

from debiasrec.config import desk_profile
from debiasrec.data import load_behaviors, load_news, split
from debiasrec.sim import SimConfig, generate_dataset, split_time
from debiasrec.text import TokenizedCatalog, build_vocab


SMALL_SIM = SimConfig(n_users=60, n_news=300, n_topics=8, vocab_size=400,
                      impressions_per_user=20, unbiased_per_user=6, seed=5)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """A small simulated dataset shared across test modules."""
    out = tmp_path_factory.mktemp("smalldata")
    paths = generate_dataset(SMALL_SIM, out)
    return {"dir": out, "paths": paths, "sim": SMALL_SIM,
            "split_time": split_time(SMALL_SIM)}


@pytest.fixture(scope="session")
def small_loaded(small_dataset):
    cfg = desk_profile()
    articles = load_news(small_dataset["paths"]["news"])
    impressions = load_behaviors(small_dataset["paths"]["behaviors"], articles, cfg.p_max)
    unbiased = load_behaviors(small_dataset["paths"]["unbiased"], articles, cfg.p_max)
    splits = split(impressions, cfg.val_fraction, cfg.seed,
                   boundary=small_dataset["split_time"])
    vocab = build_vocab((a.title for a in articles.values()), 1)
    catalog = TokenizedCatalog.build(
        ((a.news_id, a.title) for a in articles.values()), vocab, cfg.l_max)
    return {"cfg": cfg, "articles": articles, "impressions": impressions,
            "unbiased": unbiased, "splits": splits, "vocab": vocab,
            "catalog": catalog}


@pytest.fixture()
def tiny_cfg():
    return dataclasses.replace(desk_profile(), word_dim=6, bias_dim=5,
                               filters=7, att_dim=6, l_max=6, m_max=4,
                               k_negatives=2, epochs=1, dropout=0.0, seed=11)


def rng_of(seed=0):
    return np.random.default_rng(seed)
