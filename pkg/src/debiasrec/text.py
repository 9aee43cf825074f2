"""Vocabulary, tokenization and the CNN + word-attention title encoder."""

import unicodedata
from dataclasses import dataclass
from typing import Dict, Iterable, Optional

import numpy as np

from . import kernels
from .core import dropout_mask, glorot_uniform
from .optim import ParamStore

PAD_ID = 0
UNK_ID = 1
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"


def _strip_punct(token: str) -> str:
    start, end = 0, len(token)
    while start < end and unicodedata.category(token[start]).startswith("P"):
        start += 1
    while end > start and unicodedata.category(token[end - 1]).startswith("P"):
        end -= 1
    return token[start:end]


def tokenize_text(text: str):
    """Lowercase, split on Unicode whitespace, strip edge punctuation."""
    out = []
    for raw in text.lower().split():
        tok = _strip_punct(raw)
        if tok:
            out.append(tok)
    return out


@dataclass
class Vocab:
    token_to_id: Dict[str, int]
    min_count: int

    def __len__(self):
        return len(self.token_to_id)

    def id_of(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for token, tid in sorted(self.token_to_id.items(), key=lambda kv: kv[1]):
                fh.write(f"{token}\t{tid}\n")

    @classmethod
    def load(cls, path):
        mapping = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                token, tid = line.rstrip("\n").split("\t")
                mapping[token] = int(tid)
        return cls(token_to_id=mapping, min_count=0)

    def content_hash(self) -> str:
        import hashlib
        h = hashlib.sha256()
        for token, tid in sorted(self.token_to_id.items(), key=lambda kv: kv[1]):
            h.update(f"{token}\t{tid}\n".encode("utf-8"))
        return h.hexdigest()


def build_vocab(titles: Iterable[str], min_count: int = 1) -> Vocab:
    """Frequency-threshold vocabulary; ids 0/1 reserved for pad/unknown.

    Ids are dense and deterministic: tokens sorted by (-count, token).
    """
    counts: Dict[str, int] = {}
    saw_any = False
    for title in titles:
        saw_any = True
        for tok in tokenize_text(title):
            counts[tok] = counts.get(tok, 0) + 1
    if not saw_any:
        raise ValueError("empty corpus")
    mapping = {PAD_TOKEN: PAD_ID, UNK_TOKEN: UNK_ID}
    kept = sorted((t for t, c in counts.items() if c >= min_count),
                  key=lambda t: (-counts[t], t))
    for i, tok in enumerate(kept):
        mapping[tok] = 2 + i
    return Vocab(token_to_id=mapping, min_count=min_count)


@dataclass
class TitleTokens:
    ids: np.ndarray   # (L,) int64, PAD_ID in padded slots
    mask: np.ndarray  # (L,) float64, 1.0 on real tokens

    @property
    def length(self) -> int:
        return int(self.mask.sum())


def tokenize(title: str, vocab: Vocab, max_len: int) -> TitleTokens:
    """Map a title to a fixed-length id sequence plus a padding mask."""
    ids = np.full(max_len, PAD_ID, dtype=np.int64)
    mask = np.zeros(max_len)
    toks = tokenize_text(title)[:max_len]
    for i, tok in enumerate(toks):
        ids[i] = vocab.id_of(tok)
        mask[i] = 1.0
    return TitleTokens(ids=ids, mask=mask)


@dataclass
class TokenizedCatalog:
    """Every catalog title tokenized once into fixed-shape id arrays."""
    ids: list            # row -> news_id
    index: Dict[str, int]
    tokens: np.ndarray   # (n, L) int64
    mask: np.ndarray     # (n, L)

    @classmethod
    def build(cls, id_title_pairs, vocab: Vocab, max_len: int):
        ids = []
        rows = []
        masks = []
        for news_id, title in id_title_pairs:
            tt = tokenize(title, vocab, max_len)
            ids.append(news_id)
            rows.append(tt.ids)
            masks.append(tt.mask)
        return cls(ids=ids, index={nid: i for i, nid in enumerate(ids)},
                   tokens=np.stack(rows), mask=np.stack(masks))

    def __len__(self):
        return len(self.ids)


@dataclass
class ContentEncoderParams:
    """Views over the ParamStore tensors of the title encoder."""
    word_emb: np.ndarray   # (V, D_w)
    cnn_w: np.ndarray      # (F, window * D_w)
    cnn_b: np.ndarray      # (F,)
    att_proj: np.ndarray   # (A, F)
    att_bias: np.ndarray   # (A,)
    att_query: np.ndarray  # (A,)
    window: int = 3

    @property
    def n_filters(self) -> int:
        return self.cnn_w.shape[0]


def init_content_params(store: ParamStore, vocab_size: int, word_dim: int,
                        filters: int, window: int, att_dim: int,
                        rng: np.random.Generator):
    """Create encoder tensors in ``store``; returns (params, grads) views."""
    if window % 2 != 1:
        raise ValueError("conv window must be odd")
    emb = rng.uniform(-0.1, 0.1, size=(vocab_size, word_dim))
    emb[PAD_ID] = 0.0
    store.add("word_emb", emb)
    store.add("cnn_w", glorot_uniform(rng, filters, window * word_dim))
    store.add("cnn_b", np.zeros(filters))
    store.add("word_att_proj", glorot_uniform(rng, att_dim, filters))
    store.add("word_att_bias", np.zeros(att_dim))
    store.add("word_att_query", rng.uniform(-0.1, 0.1, size=att_dim))

    def view(getter):
        return ContentEncoderParams(
            word_emb=getter("word_emb"), cnn_w=getter("cnn_w"),
            cnn_b=getter("cnn_b"), att_proj=getter("word_att_proj"),
            att_bias=getter("word_att_bias"), att_query=getter("word_att_query"),
            window=window)

    return view(store.value), view(store.grad)


def load_pretrained_embeddings(path, vocab: Vocab, emb: np.ndarray) -> int:
    """Overwrite embedding rows from a "token v1 ... vD" text file.

    Unknown tokens keep their random init.  Returns the number of rows set.
    """
    dim = emb.shape[1]
    hits = 0
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.rstrip("\n").split(" ")
            if len(parts) != dim + 1:
                continue
            tid = vocab.token_to_id.get(parts[0])
            if tid is not None and tid >= 2:
                emb[tid] = [float(x) for x in parts[1:]]
                hits += 1
    return hits


def encode_titles_batch(tokens: np.ndarray, tok_mask: np.ndarray,
                        p: ContentEncoderParams, training: bool,
                        dropout_rate: float,
                        rng: Optional[np.random.Generator]):
    """Encode (N, L) token-id rows into (N, F) content vectors.

    Pipeline: embed -> dropout -> conv (same padding, ReLU) -> dropout ->
    masked word attention -> weighted pooling.  All-padding rows produce a
    zero vector; the count is reported in the cache under ``n_empty``.
    """
    n, l = tokens.shape
    x = p.word_emb[tokens] * tok_mask[..., None]
    drop1 = drop2 = None
    if training and dropout_rate > 0.0:
        drop1 = dropout_mask(x.shape, dropout_rate, rng)
        x = x * drop1
    x = np.ascontiguousarray(x)
    pre = kernels.conv1d_fwd(x, p.cnn_w, p.cnn_b)
    h = np.maximum(pre, 0.0)
    if training and dropout_rate > 0.0:
        drop2 = dropout_mask(h.shape, dropout_rate, rng)
        h = h * drop2
    h = np.ascontiguousarray(h)
    scores, z = kernels.att_fwd(h, p.att_proj, p.att_bias, p.att_query)
    alpha = kernels.masked_softmax(scores, np.ascontiguousarray(tok_mask))
    c = kernels.weighted_pool(alpha, h)
    cache = {
        "tokens": tokens, "tok_mask": tok_mask, "x": x, "pre": pre,
        "h": h, "z": z, "alpha": alpha, "drop1": drop1, "drop2": drop2,
        "n_empty": int(np.sum(tok_mask.sum(axis=1) == 0.0)),
    }
    return c, cache


def encode_titles_backward(d_c: np.ndarray, cache: dict,
                           p: ContentEncoderParams, g: ContentEncoderParams):
    """Accumulate encoder gradients for a batch into the grad views."""
    alpha, h, z = cache["alpha"], cache["h"], cache["z"]
    d_alpha, d_h = kernels.weighted_pool_bwd(alpha, h, np.ascontiguousarray(d_c))
    d_scores = kernels.masked_softmax_bwd(alpha, d_alpha)
    d_h_att, d_proj, d_proj_b, d_q = kernels.att_bwd(
        h, p.att_proj, p.att_query, z, d_scores)
    g.att_proj += d_proj
    g.att_bias += d_proj_b
    g.att_query += d_q
    d_h += d_h_att
    if cache["drop2"] is not None:
        d_h *= cache["drop2"]
    d_pre = d_h * (cache["pre"] > 0.0)
    d_x, d_w, d_b = kernels.conv1d_bwd(cache["x"], p.cnn_w,
                                       np.ascontiguousarray(d_pre))
    g.cnn_w += d_w
    g.cnn_b += d_b
    if cache["drop1"] is not None:
        d_x *= cache["drop1"]
    d_x *= cache["tok_mask"][..., None]
    n, l, d = d_x.shape
    kernels.scatter_add_rows(g.word_emb, cache["tokens"].reshape(-1),
                             np.ascontiguousarray(d_x.reshape(n * l, d)))


def encode_title(tokens: TitleTokens, p: ContentEncoderParams,
                 training: bool = False,
                 rng: Optional[np.random.Generator] = None,
                 dropout_rate: float = 0.0,
                 counters: Optional[dict] = None) -> np.ndarray:
    """Encode one title; empty (all-padding) titles yield the zero vector."""
    c, cache = encode_titles_batch(tokens.ids[None, :], tokens.mask[None, :],
                                   p, training, dropout_rate, rng)
    if counters is not None and cache["n_empty"]:
        counters["empty_titles"] = counters.get("empty_titles", 0) + cache["n_empty"]
    return c[0]
