import numpy as np
import pytest

from debiasrec.core import make_rng
from debiasrec.optim import ParamStore, grad_check
from debiasrec.text import (PAD_ID, UNK_ID, TitleTokens, TokenizedCatalog,
                            Vocab, build_vocab, encode_title,
                            encode_titles_backward, encode_titles_batch,
                            init_content_params, load_pretrained_embeddings,
                            tokenize, tokenize_text)


class TestTokenizeText:
    def test_lowercase_split_strip(self):
        assert tokenize_text('Hello,  "World"!') == ["hello", "world"]

    def test_inner_punctuation_kept(self):
        assert tokenize_text("it's U.S.-based") == ["it's", "u.s.-based"]

    def test_unicode_whitespace(self):
        assert tokenize_text("a b\tc") == ["a", "b", "c"]


class TestBuildVocab:
    def test_min_count_one(self):
        v = build_vocab(["a b", "a"], 1)
        assert set(v.token_to_id) == {"<pad>", "<unk>", "a", "b"}
        assert v.token_to_id["<pad>"] == PAD_ID
        assert v.token_to_id["<unk>"] == UNK_ID

    def test_min_count_two_drops_rare(self):
        v = build_vocab(["a b", "a"], 2)
        assert "b" not in v.token_to_id
        assert v.id_of("b") == UNK_ID

    def test_ids_dense_and_frequency_ordered(self):
        v = build_vocab(["c c c b b a"], 1)
        assert v.token_to_id["c"] == 2
        assert v.token_to_id["b"] == 3
        assert v.token_to_id["a"] == 4

    def test_size_matches_frequency_oracle(self):
        rng = np.random.default_rng(0)
        titles = [" ".join(f"w{rng.integers(50)}" for _ in range(6))
                  for _ in range(1000)]
        counts = {}
        for t in titles:
            for tok in t.split():
                counts[tok] = counts.get(tok, 0) + 1
        for mc in (1, 3, 10):
            v = build_vocab(titles, mc)
            expected = sum(1 for c in counts.values() if c >= mc)
            assert len(v) == expected + 2

    def test_empty_corpus_errors(self):
        with pytest.raises(ValueError):
            build_vocab([], 1)

    def test_save_load_roundtrip(self, tmp_path):
        v = build_vocab(["alpha beta beta"], 1)
        path = tmp_path / "vocab.tsv"
        v.save(path)
        v2 = Vocab.load(path)
        assert v2.token_to_id == v.token_to_id
        assert v2.content_hash() == v.content_hash()


class TestTokenize:
    def test_pad_and_mask(self):
        v = build_vocab(["hello world"], 1)
        tt = tokenize("Hello World", v, 4)
        assert tt.ids.tolist() == [v.id_of("hello"), v.id_of("world"), 0, 0]
        assert tt.mask.tolist() == [1, 1, 0, 0]

    def test_truncation_keeps_prefix(self):
        v = build_vocab(["a b c d e"], 1)
        tt = tokenize("a b c d e", v, 3)
        assert tt.mask.sum() == 3
        assert tt.ids.tolist() == [v.id_of("a"), v.id_of("b"), v.id_of("c")]

    def test_oov_maps_to_unknown(self):
        v = build_vocab(["known"], 1)
        tt = tokenize("mystery", v, 2)
        assert tt.ids[0] == UNK_ID

    def test_empty_title_all_padding(self):
        v = build_vocab(["x"], 1)
        tt = tokenize("", v, 3)
        assert tt.mask.sum() == 0


def small_encoder(seed=0, vocab_size=12, word_dim=5, filters=6, att_dim=4):
    store = ParamStore()
    params, grads = init_content_params(store, vocab_size, word_dim, filters,
                                        3, att_dim, make_rng(seed, 1))
    return store, params, grads


class TestEncodeTitle:
    def test_single_token_title_is_its_contextual_vector(self):
        store, params, _ = small_encoder()
        tt = TitleTokens(ids=np.array([3, 0, 0, 0], dtype=np.int64),
                         mask=np.array([1.0, 0, 0, 0]))
        c = encode_title(tt, params)
        # attention over one unmasked slot pools that slot alone
        emb = params.word_emb[3]
        window = np.concatenate([np.zeros(5), emb, np.zeros(5)])
        expected = np.maximum(params.cnn_w @ window + params.cnn_b, 0.0)
        np.testing.assert_allclose(c, expected, rtol=1e-12)

    def test_zero_attention_projection_means_mean_pooling(self):
        store, params, _ = small_encoder(seed=1)
        params.att_proj[...] = 0.0
        tt = TitleTokens(ids=np.array([2, 3, 4, 0], dtype=np.int64),
                         mask=np.array([1.0, 1, 1, 0]))
        c = encode_title(tt, params)
        x = params.word_emb[tt.ids] * tt.mask[:, None]
        h = np.zeros((4, 6))
        for t in range(4):
            win = np.zeros(15)
            for k in range(3):
                src = t + k - 1
                if 0 <= src < 4:
                    win[5 * k:5 * k + 5] = x[src]
            h[t] = np.maximum(params.cnn_w @ win + params.cnn_b, 0.0)
        np.testing.assert_allclose(c, h[:3].mean(axis=0), rtol=1e-10)

    def test_matches_composed_scalar_oracle(self):
        store, params, _ = small_encoder(seed=2)
        tt = TitleTokens(ids=np.array([2, 5, 7, 4, 9, 0], dtype=np.int64),
                         mask=np.array([1.0, 1, 1, 1, 1, 0]))
        c = encode_title(tt, params)
        x = params.word_emb[tt.ids] * tt.mask[:, None]
        l, d = x.shape
        f = params.cnn_w.shape[0]
        h = np.zeros((l, f))
        for t in range(l):
            win = np.zeros(3 * d)
            for k in range(3):
                src = t + k - 1
                if 0 <= src < l:
                    win[d * k:d * k + d] = x[src]
            h[t] = np.maximum(params.cnn_w @ win + params.cnn_b, 0.0)
        scores = np.array([params.att_query @ np.tanh(params.att_proj @ h[t] + params.att_bias)
                           for t in range(l)])
        on = tt.mask > 0
        e = np.exp(scores[on] - scores[on].max())
        w = e / e.sum()
        expected = (w[:, None] * h[on]).sum(axis=0)
        np.testing.assert_allclose(c, expected, rtol=1e-10)

    def test_empty_title_gives_zero_vector_and_counts(self):
        store, params, _ = small_encoder()
        tt = TitleTokens(ids=np.zeros(4, dtype=np.int64), mask=np.zeros(4))
        counters = {}
        c = encode_title(tt, params, counters=counters)
        np.testing.assert_array_equal(c, np.zeros(6))
        assert counters["empty_titles"] == 1

    def test_appending_padding_is_bit_identical(self):
        store, params, _ = small_encoder(seed=3)
        short = TitleTokens(ids=np.array([2, 3], dtype=np.int64),
                            mask=np.array([1.0, 1.0]))
        padded = TitleTokens(ids=np.array([2, 3, 0, 0, 0], dtype=np.int64),
                             mask=np.array([1.0, 1.0, 0, 0, 0]))
        np.testing.assert_array_equal(encode_title(short, params),
                                      encode_title(padded, params))

    def test_word_attention_weights_sum_to_one(self):
        store, params, _ = small_encoder(seed=4)
        tokens = np.array([[2, 3, 4, 0], [5, 0, 0, 0]], dtype=np.int64)
        mask = np.array([[1.0, 1, 1, 0], [1.0, 0, 0, 0]])
        _, cache = encode_titles_batch(tokens, mask, params, False, 0.0, None)
        sums = cache["alpha"].sum(axis=1)
        np.testing.assert_allclose(sums, 1.0, atol=1e-9)
        assert np.all(cache["alpha"][mask == 0.0] == 0.0)

    def test_dropout_only_in_training(self):
        store, params, _ = small_encoder(seed=5)
        tt = TitleTokens(ids=np.array([2, 3, 4], dtype=np.int64), mask=np.ones(3))
        c_eval = encode_title(tt, params, training=False, dropout_rate=0.5)
        c_eval2 = encode_title(tt, params, training=False, dropout_rate=0.5)
        np.testing.assert_array_equal(c_eval, c_eval2)
        c_train = encode_title(tt, params, training=True,
                               rng=make_rng(0, 9), dropout_rate=0.5)
        assert not np.array_equal(c_eval, c_train)


def test_encoder_gradients_pass_gradcheck():
    store, params, grads = small_encoder(seed=6)
    tokens = np.array([[2, 5, 7, 0], [3, 4, 0, 0], [9, 9, 2, 4]], dtype=np.int64)
    mask = np.array([[1.0, 1, 1, 0], [1.0, 1, 0, 0], [1.0, 1, 1, 1]])
    probe = make_rng(1, 2).normal(size=(3, 6))

    def loss(s):
        s.zero_grads()
        c, cache = encode_titles_batch(tokens, mask, params, False, 0.0, None)
        encode_titles_backward(probe, cache, params, grads)
        return float((c * probe).sum())

    report = grad_check(loss, store, eps=1e-5, sample=8, seed=0)
    assert report.max_rel_error < 1e-4, report.format(1e-4)


def test_load_pretrained_embeddings(tmp_path):
    v = build_vocab(["alpha beta"], 1)
    emb = np.zeros((len(v), 3))
    path = tmp_path / "vecs.txt"
    path.write_text("alpha 1.0 2.0 3.0\nmissing 9 9 9\nbeta 4.0 5.0 6.0\n")
    hits = load_pretrained_embeddings(path, v, emb)
    assert hits == 2
    np.testing.assert_array_equal(emb[v.id_of("alpha")], [1, 2, 3])
    np.testing.assert_array_equal(emb[v.id_of("beta")], [4, 5, 6])
    np.testing.assert_array_equal(emb[PAD_ID], 0.0)


def test_tokenized_catalog_lookup():
    v = build_vocab(["one two", "three"], 1)
    cat = TokenizedCatalog.build([("N1", "one two"), ("N2", "three")], v, 4)
    assert len(cat) == 2
    assert cat.index["N2"] == 1
    assert cat.tokens.shape == (2, 4)
    assert cat.mask[0].sum() == 2
