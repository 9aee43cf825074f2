"""Model assembly, click scoring, losses and checkpoint IO.

The click score decomposes into a preference score (user vector dotted
with candidate content) plus a bias score predicted from the candidate's
presentation features.  Training uses the full decomposition; ranking at
test time uses the preference score alone, so the ranking path never sees
candidate bias features.
"""

import json
import struct
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Optional

import numpy as np

from .bias import BrmVariant, bias_vectors_backward, bias_vectors_batch, init_brm_params
from .core import NumericalError, make_rng, sigmoid
from .optim import ParamStore
from .text import encode_titles_backward, encode_titles_batch, init_content_params
from .user import init_baum_params, pool_history_batch, pool_history_backward

_PROB_EPS = 1e-12


class ScoringMode(Enum):
    FULL = "full"            # train on s_b + s_p, rank on s_p
    NO_BACP = "no_bacp"      # train and rank on s_p only
    NO_DEBIAS = "no_debias"  # bias features ignored everywhere
    PAL = "pal"              # p = sigmoid(s_b) * sigmoid(s_p), pointwise loss


@dataclass
class PackedBatch:
    """Fixed-shape training batch; candidate index 0 is the positive."""
    hist_tokens: np.ndarray    # (B, M, L) int64
    hist_tok_mask: np.ndarray  # (B, M, L)
    hist_mask: np.ndarray      # (B, M)
    hist_pos: np.ndarray       # (B, M) int64
    hist_size: np.ndarray      # (B, M) int64
    cand_tokens: np.ndarray    # (B, C, L) int64
    cand_tok_mask: np.ndarray  # (B, C, L)
    cand_pos: np.ndarray       # (B, C) int64
    cand_size: np.ndarray      # (B, C) int64

    @property
    def size(self):
        return self.hist_tokens.shape[0]


class DebiasModel:
    """All learnable tensors plus the batched forward/backward passes."""

    def __init__(self, cfg, vocab_size: int):
        self.cfg = cfg
        self.mode = ScoringMode(cfg.scoring_mode)
        self.variant = BrmVariant(cfg.brm_variant)
        self.baum_enabled = bool(cfg.baum_enabled) and self.mode != ScoringMode.NO_DEBIAS
        self.uses_candidate_bias = self.mode in (ScoringMode.FULL, ScoringMode.PAL)
        self.dim = cfg.filters
        self.counters: Dict[str, int] = {}

        store = ParamStore()
        rng = make_rng(cfg.seed, 0x1A17)
        self.content, self.g_content = init_content_params(
            store, vocab_size, cfg.word_dim, cfg.filters, cfg.window,
            cfg.att_dim, rng)
        if self.uses_candidate_bias or self.baum_enabled:
            self.brm, self.g_brm = init_brm_params(
                store, cfg.p_max, cfg.bias_dim, cfg.filters, self.variant, rng)
            if self.brm.out_dim != self.dim:
                raise ValueError("bias vectors must match the content dimension")
        else:
            self.brm = self.g_brm = None
        self.baum, self.g_baum = init_baum_params(
            store, cfg.filters, cfg.att_dim, self.baum_enabled, rng)
        if self.uses_candidate_bias:
            store.add("bacp_w", np.zeros(cfg.filters))
            store.add("bacp_b", np.zeros(1))
            self.bacp_w = store.value("bacp_w")
            self.bacp_b = store.value("bacp_b")
        else:
            self.bacp_w = self.bacp_b = None
        self.store = store

    # ----- forward / backward -------------------------------------------

    def forward_batch(self, batch: PackedBatch, training: bool,
                      rng: Optional[np.random.Generator] = None):
        """Mean instance loss over the batch; returns (loss, cache)."""
        cfg = self.cfg
        b, m, l = batch.hist_tokens.shape
        c = batch.cand_tokens.shape[1]
        all_tokens = np.concatenate(
            [batch.hist_tokens.reshape(b * m, l), batch.cand_tokens.reshape(b * c, l)])
        all_mask = np.concatenate(
            [batch.hist_tok_mask.reshape(b * m, l), batch.cand_tok_mask.reshape(b * c, l)])
        cvecs, enc_cache = encode_titles_batch(
            all_tokens, all_mask, self.content, training, cfg.dropout, rng)
        # count only real entries with token-less titles, not padded slots
        hist_rows_empty = (batch.hist_tok_mask.sum(axis=2) == 0.0) & (batch.hist_mask > 0.0)
        cand_rows_empty = batch.cand_tok_mask.sum(axis=2) == 0.0
        self._count("empty_titles",
                    int(hist_rows_empty.sum()) + int(cand_rows_empty.sum()))
        c_hist = cvecs[:b * m].reshape(b, m, self.dim)
        c_cand = cvecs[b * m:].reshape(b, c, self.dim)

        hist_brm_cache = None
        b_hist = None
        if self.baum_enabled:
            b_flat, hist_brm_cache = bias_vectors_batch(
                batch.hist_pos.reshape(-1), batch.hist_size.reshape(-1), self.brm)
            b_hist = b_flat.reshape(b, m, self.dim)
        u, baum_cache = pool_history_batch(
            c_hist, b_hist, batch.hist_mask, self.baum, self.baum_enabled)
        self._count("empty_histories", baum_cache["n_empty"])

        s_p = np.einsum("bf,bcf->bc", u, c_cand)
        cand_brm_cache = None
        b_cand = None
        if self.uses_candidate_bias:
            b_flat, cand_brm_cache = bias_vectors_batch(
                batch.cand_pos.reshape(-1), batch.cand_size.reshape(-1), self.brm)
            b_cand = b_flat.reshape(b, c, self.dim)
            s_b = b_cand @ self.bacp_w + self.bacp_b[0]
        else:
            s_b = np.zeros_like(s_p)

        if self.mode == ScoringMode.PAL:
            loss, d_sp, d_sb = _pal_loss_batch(s_p, s_b)
        else:
            s_c = s_p + s_b
            loss, d_sc = _listwise_loss_batch(s_c)
            d_sp = d_sc
            d_sb = d_sc if self.uses_candidate_bias else None
        if not np.isfinite(loss):
            raise NumericalError(f"training loss is not finite: {loss}")

        cache = {
            "batch": batch, "enc_cache": enc_cache, "baum_cache": baum_cache,
            "hist_brm_cache": hist_brm_cache, "cand_brm_cache": cand_brm_cache,
            "c_hist": c_hist, "c_cand": c_cand, "b_cand": b_cand, "u": u,
            "s_p": s_p, "s_b": s_b, "d_sp": d_sp, "d_sb": d_sb,
            "shape": (b, m, c),
        }
        return loss, cache

    def backward_batch(self, cache):
        """Accumulate gradients of the batch loss into the store."""
        b, m, c = cache["shape"]
        u, c_cand = cache["u"], cache["c_cand"]
        d_sp, d_sb = cache["d_sp"], cache["d_sb"]

        d_u = np.einsum("bc,bcf->bf", d_sp, c_cand)
        d_c_cand = d_sp[..., None] * u[:, None, :]
        if self.uses_candidate_bias:
            b_cand = cache["b_cand"]
            self.store.grad("bacp_w")[...] += np.einsum("bc,bcf->f", d_sb, b_cand)
            self.store.grad("bacp_b")[...] += d_sb.sum()
            d_b_cand = d_sb[..., None] * self.bacp_w
            bias_vectors_backward(d_b_cand.reshape(b * c, self.dim),
                                  cache["cand_brm_cache"], self.brm, self.g_brm)

        d_c_hist, d_b_hist = pool_history_backward(
            d_u, cache["baum_cache"], self.baum, self.g_baum)
        if self.baum_enabled:
            bias_vectors_backward(d_b_hist.reshape(b * m, self.dim),
                                  cache["hist_brm_cache"], self.brm, self.g_brm)

        d_cvecs = np.concatenate(
            [d_c_hist.reshape(b * m, self.dim), d_c_cand.reshape(b * c, self.dim)])
        encode_titles_backward(d_cvecs, cache["enc_cache"],
                               self.content, self.g_content)

    def loss_fn(self, batch: PackedBatch):
        """Deterministic loss closure for the gradient checker."""
        def fn(store):
            assert store is self.store
            store.zero_grads()
            loss, cache = self.forward_batch(batch, training=False)
            self.backward_batch(cache)
            return float(loss)
        return fn

    def _count(self, key, n):
        if n:
            self.counters[key] = self.counters.get(key, 0) + int(n)


def _listwise_loss_batch(s_c):
    """Softmax cross-entropy against positive index 0, mean over batch."""
    b = s_c.shape[0]
    m = s_c.max(axis=1, keepdims=True)
    z = np.exp(s_c - m)
    denom = z.sum(axis=1, keepdims=True)
    p = z / denom
    losses = np.log(denom).reshape(-1) + m.reshape(-1) - s_c[:, 0]
    d_sc = p.copy()
    d_sc[:, 0] -= 1.0
    d_sc /= b
    return float(losses.mean()), d_sc


def _pal_loss_batch(s_p, s_b):
    """Pointwise BCE on p = sigmoid(s_b)*sigmoid(s_p); positive index 0."""
    b = s_p.shape[0]
    a = sigmoid(s_p)
    bb = sigmoid(s_b)
    p = a * bb
    y = np.zeros_like(p)
    y[:, 0] = 1.0
    p_clip = np.clip(p, _PROB_EPS, 1.0 - _PROB_EPS)
    losses = -(y * np.log(p_clip) + (1.0 - y) * np.log(1.0 - p_clip)).sum(axis=1)
    denom = np.maximum(1.0 - p, _PROB_EPS)
    d_sp = (p - y) * (1.0 - a) / denom / b
    d_sb = (p - y) * (1.0 - bb) / denom / b
    return float(losses.mean()), d_sp, d_sb


def instance_loss(scores, labels) -> float:
    """Softmax cross-entropy of one sampled instance (one positive)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = np.flatnonzero(labels == 1)
    if pos.size != 1:
        raise ValueError(f"expected exactly one positive label, got {pos.size}")
    m = scores.max()
    return float(np.log(np.exp(scores - m).sum()) + m - scores[pos[0]])


def pal_instance_loss(s_p, s_b, labels) -> float:
    """Pointwise BCE of one instance under the probability product rule."""
    p = sigmoid(np.asarray(s_p, dtype=np.float64)) * sigmoid(np.asarray(s_b, dtype=np.float64))
    p = np.clip(p, _PROB_EPS, 1.0 - _PROB_EPS)
    y = np.asarray(labels, dtype=np.float64)
    return float(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)).sum())


def score(u, c_cand, b_cand, bacp_w, bacp_b, mode: ScoringMode):
    """Score one candidate: returns (s_p, s_b, s_c) under the given mode."""
    s_p = float(np.dot(u, c_cand))
    if mode in (ScoringMode.NO_BACP, ScoringMode.NO_DEBIAS):
        return s_p, 0.0, s_p
    s_b = float(np.dot(bacp_w, b_cand) + bacp_b[0])
    if mode == ScoringMode.PAL:
        return float(sigmoid(s_p)), float(sigmoid(s_b)), float(sigmoid(s_p) * sigmoid(s_b))
    return s_p, s_b, s_b + s_p


def rank_candidates(u, candidate_vectors, mode: ScoringMode) -> np.ndarray:
    """Permutation ranking candidates by preference score, descending.

    Takes content vectors only: candidate bias features are not an input
    of the ranking path.  Ties keep the original candidate order.
    """
    candidate_vectors = np.asarray(candidate_vectors, dtype=np.float64)
    if candidate_vectors.ndim != 2 or candidate_vectors.shape[0] == 0:
        raise ValueError("empty candidate list")
    s = candidate_vectors @ np.asarray(u, dtype=np.float64)
    if mode == ScoringMode.PAL:
        s = sigmoid(s)
    return np.argsort(-s, kind="stable")


# ----- checkpoint format ---------------------------------------------------

_MAGIC = b"DBRCKPT1"


def write_checkpoint(path, meta: dict, tensors: Dict[str, np.ndarray]):
    """Single-file checkpoint: JSON metadata plus named float64 tensors.

    Record layout (little-endian): magic, u32 meta length, meta JSON,
    u32 tensor count, then per tensor u32 name length, name bytes,
    u32 ndim, u64 dims, raw float64 data.
    """
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(tensors)))
        for name in sorted(tensors):
            arr = np.ascontiguousarray(tensors[name], dtype="<f8")
            nb = name.encode("utf-8")
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<I", arr.ndim))
            for d in arr.shape:
                fh.write(struct.pack("<Q", d))
            fh.write(arr.tobytes())


def read_checkpoint(path):
    """Inverse of :func:`write_checkpoint` -> (meta, tensors)."""
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (mlen,) = struct.unpack("<I", fh.read(4))
        meta = json.loads(fh.read(mlen).decode("utf-8"))
        (count,) = struct.unpack("<I", fh.read(4))
        tensors = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<I", fh.read(4))
            name = fh.read(nlen).decode("utf-8")
            (ndim,) = struct.unpack("<I", fh.read(4))
            shape = tuple(struct.unpack("<Q", fh.read(8))[0] for _ in range(ndim))
            n = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(8 * n), dtype="<f8").reshape(shape)
            tensors[name] = data.astype(np.float64)
        return meta, tensors
