import dataclasses

import numpy as np
import pytest

from debiasrec.data import load_behaviors, load_news
from debiasrec.metrics import chi_square, ctr_by_bucket, displays_contingency
from debiasrec.sim import (GroundTruth, SimConfig, generate_catalog,
                           generate_dataset, generate_logs)

FAST = SimConfig(n_users=40, n_news=200, n_topics=6, vocab_size=300,
                 impressions_per_user=15, unbiased_per_user=4, seed=9)


@pytest.fixture(scope="module")
def fast_logs():
    articles, truth = generate_catalog(FAST)
    biased, unbiased = generate_logs(FAST, truth)
    return articles, truth, biased, unbiased


class TestCatalog:
    def test_deterministic(self):
        a1, t1 = generate_catalog(FAST)
        a2, t2 = generate_catalog(FAST)
        assert a1 == a2
        assert t1.news_quality == t2.news_quality

    def test_single_topic_allowed(self):
        cfg = dataclasses.replace(FAST, n_topics=1, topics_per_user=1, n_news=30)
        articles, truth = generate_catalog(cfg)
        assert set(truth.news_topic.values()) == {0}

    def test_same_topic_titles_share_more_words(self):
        articles, truth = generate_catalog(FAST)
        words = {a.news_id: set(a.title.split()) for a in articles}
        ids = [a.news_id for a in articles]
        rng = np.random.default_rng(0)
        same, cross = [], []
        while len(same) < 1000 or len(cross) < 1000:
            a, b = rng.choice(len(ids), size=2, replace=False)
            na, nb = ids[a], ids[b]
            overlap = len(words[na] & words[nb]) / min(len(words[na]), len(words[nb]))
            if truth.news_topic[na] == truth.news_topic[nb]:
                if len(same) < 1000:
                    same.append(overlap)
            elif len(cross) < 1000:
                cross.append(overlap)
        assert np.mean(same) > 2.0 * np.mean(cross)

    def test_vocab_too_small_errors(self):
        cfg = dataclasses.replace(FAST, vocab_size=40, n_topics=20)
        with pytest.raises(ValueError, match="too small"):
            generate_catalog(cfg)

    def test_invalid_config_rejected(self):
        with pytest.raises(ValueError):
            dataclasses.replace(FAST, eta=0.0).validate()
        with pytest.raises(ValueError):
            dataclasses.replace(FAST, size_factors=(0.5, 0.7, 0.85)).validate()
        with pytest.raises(ValueError):
            dataclasses.replace(FAST, slate_size=99).validate()


class TestLogs:
    def test_deterministic(self, fast_logs):
        _, truth, biased, unbiased = fast_logs
        _, truth2 = generate_catalog(FAST)
        biased2, unbiased2 = generate_logs(FAST, truth2)
        assert biased == biased2
        assert unbiased == unbiased2

    def test_history_grows_with_clicks_in_time_order(self, fast_logs):
        _, _, biased, _ = fast_logs
        by_user = {}
        for rec in biased:
            by_user.setdefault(rec.user_id, []).append(rec)
        grew = 0
        for recs in by_user.values():
            lens = [len(r.history) for r in sorted(recs, key=lambda r: r.timestamp)]
            assert lens[0] == 0
            assert all(b >= a for a, b in zip(lens, lens[1:]))
            grew += lens[-1] > 0
        assert grew > 0

    def test_click_probability_replay(self, fast_logs):
        _, truth, biased, _ = fast_logs
        rng = np.random.default_rng(1)
        clicked = [(r, c) for r in biased for c in r.candidates if c.label == 1]
        for idx in rng.choice(len(clicked), size=100, replace=False):
            rec, cand = clicked[int(idx)]
            p = truth.click_probability(rec.user_id, cand.news_id,
                                        cand.position, cand.size)
            expected = (truth.eta ** (cand.position - 1)
                        * truth.size_factors[cand.size]
                        * truth.relevance(rec.user_id, cand.news_id))
            assert 0.0 < p <= 1.0
            np.testing.assert_allclose(p, expected, rtol=1e-12)

    def test_biased_ctr_decays_with_eta(self):
        cfg = dataclasses.replace(FAST, n_users=250, impressions_per_user=50,
                                  seed=13)
        articles, truth = generate_catalog(cfg)
        biased, _ = generate_logs(cfg, truth)
        displays = sum(len(r.candidates) for r in biased)
        assert displays > 90_000
        by_pos, _ = ctr_by_bucket(biased)
        ctrs = [by_pos.ctr(p) for p in range(1, cfg.slate_size + 1)]
        assert all(b < a for a, b in zip(ctrs, ctrs[1:]))
        ratios = [b / a for a, b in zip(ctrs, ctrs[1:])]
        geo = float(np.exp(np.mean(np.log(ratios))))
        assert abs(geo - cfg.eta) < 0.05

    def test_no_bias_regime_gives_flat_ctr(self):
        cfg = dataclasses.replace(FAST, n_users=250, impressions_per_user=50,
                                  eta=1.0, size_factors=(1.0, 1.0, 1.0, 1.0),
                                  seed=17)
        articles, truth = generate_catalog(cfg)
        biased, _ = generate_logs(cfg, truth)
        by_pos, _ = ctr_by_bucket(biased)
        ctrs = np.array([by_pos.ctr(p) for p in range(1, cfg.slate_size + 1)])
        assert ctrs.max() - ctrs.min() < 0.03

    def test_size_position_dependence_significant(self, fast_logs):
        _, _, biased, _ = fast_logs
        table = displays_contingency(biased)
        result = chi_square(table)
        assert result.significant_at_001

    def test_unbiased_labels_are_relevance_indicators(self, fast_logs):
        _, truth, _, unbiased = fast_logs
        for rec in unbiased[:200]:
            for c in rec.candidates:
                want = int(truth.relevance(rec.user_id, c.news_id)
                           > truth.relevance_threshold)
                assert c.label == want


class TestDatasetFiles:
    def test_roundtrip_through_dataio(self, tmp_path):
        paths = generate_dataset(FAST, tmp_path)
        catalog = load_news(paths["news"])
        biased = load_behaviors(paths["behaviors"], catalog)
        unbiased = load_behaviors(paths["unbiased"], catalog)
        articles, truth = generate_catalog(FAST)
        b2, u2 = generate_logs(FAST, truth)
        assert biased == b2
        assert unbiased == u2

    def test_ground_truth_roundtrip(self, tmp_path):
        paths = generate_dataset(FAST, tmp_path)
        truth = GroundTruth.load(paths["truth"])
        _, truth2 = generate_catalog(FAST)
        assert truth == truth2

    def test_byte_identical_regeneration(self, tmp_path):
        d1 = tmp_path / "a"
        d2 = tmp_path / "b"
        d1.mkdir()
        d2.mkdir()
        p1 = generate_dataset(FAST, d1)
        p2 = generate_dataset(FAST, d2)
        for key in p1:
            with open(p1[key], "rb") as f1, open(p2[key], "rb") as f2:
                assert f1.read() == f2.read(), key
