"""Negative sampling, batch packing, the training loop and evaluation
plumbing shared by the CLI and the tests."""

import zlib
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .bias import bias_vectors_batch
from .config import RunConfig, config_to_text
from .core import NumericalError, make_rng
from .data import DatasetSplit, ImpressionRecord
from .metrics import EvalReport, evaluate
from .model import DebiasModel, PackedBatch, rank_candidates
from .optim import AdamHyper, adam_step
from .text import TokenizedCatalog, Vocab, encode_titles_batch
from .user import ClickHistory, attention_rows, pool_history_batch


@dataclass
class TrainInstance:
    """One positive with its K sampled negatives (positive first)."""
    hist_idx: np.ndarray   # (m,) catalog rows, oldest to newest, truncated
    hist_pos: np.ndarray   # (m,) int64
    hist_size: np.ndarray  # (m,) int64
    cand_idx: np.ndarray   # (K+1,) catalog rows
    cand_pos: np.ndarray
    cand_size: np.ndarray


def _impression_rng(seed: int, impression_id: str) -> np.random.Generator:
    return make_rng(seed, 2, zlib.crc32(impression_id.encode("utf-8")))


def sample_negatives(impression: ImpressionRecord, k: int,
                     rng: np.random.Generator, catalog: TokenizedCatalog,
                     m_max: int) -> List[TrainInstance]:
    """One instance per clicked candidate, negatives from the same slate.

    Negatives are drawn uniformly without replacement, falling back to
    with-replacement draws when fewer than ``k`` exist.  Returns [] when
    the impression has no positive or no negative.
    """
    positives = [c for c in impression.candidates if c.label == 1]
    negatives = [c for c in impression.candidates if c.label == 0]
    if not positives or not negatives:
        return []
    hist = impression.history[-m_max:]
    hist_idx = np.array([catalog.index[h.news_id] for h in hist], dtype=np.int64)
    hist_pos = np.array([h.position for h in hist], dtype=np.int64)
    hist_size = np.array([h.size for h in hist], dtype=np.int64)
    out = []
    for pos_cand in positives:
        if len(negatives) >= k:
            chosen = rng.choice(len(negatives), size=k, replace=False)
        else:
            chosen = rng.choice(len(negatives), size=k, replace=True)
        cands = [pos_cand] + [negatives[int(j)] for j in chosen]
        out.append(TrainInstance(
            hist_idx=hist_idx, hist_pos=hist_pos, hist_size=hist_size,
            cand_idx=np.array([catalog.index[c.news_id] for c in cands], dtype=np.int64),
            cand_pos=np.array([c.position for c in cands], dtype=np.int64),
            cand_size=np.array([c.size for c in cands], dtype=np.int64)))
    return out


def build_instances(impressions: Sequence[ImpressionRecord],
                    catalog: TokenizedCatalog, k: int, m_max: int,
                    seed: int):
    """Instances for a whole epoch; per-impression RNG streams keep the
    draw independent of impression order.  Returns (instances, n_skipped)."""
    instances: List[TrainInstance] = []
    skipped = 0
    for imp in impressions:
        new = sample_negatives(imp, k, _impression_rng(seed, imp.impression_id),
                               catalog, m_max)
        if new:
            instances.extend(new)
        else:
            skipped += 1
    return instances, skipped


def pack_batch(instances: Sequence[TrainInstance],
               catalog: TokenizedCatalog) -> PackedBatch:
    """Pad a list of instances into fixed-shape arrays."""
    b = len(instances)
    m = max((inst.hist_idx.size for inst in instances), default=1)
    m = max(m, 1)
    c = instances[0].cand_idx.size
    l = catalog.tokens.shape[1]
    hist_tokens = np.zeros((b, m, l), dtype=np.int64)
    hist_tok_mask = np.zeros((b, m, l))
    hist_mask = np.zeros((b, m))
    hist_pos = np.ones((b, m), dtype=np.int64)
    hist_size = np.zeros((b, m), dtype=np.int64)
    cand_tokens = np.zeros((b, c, l), dtype=np.int64)
    cand_tok_mask = np.zeros((b, c, l))
    cand_pos = np.ones((b, c), dtype=np.int64)
    cand_size = np.zeros((b, c), dtype=np.int64)
    for i, inst in enumerate(instances):
        hm = inst.hist_idx.size
        if hm:
            hist_tokens[i, :hm] = catalog.tokens[inst.hist_idx]
            hist_tok_mask[i, :hm] = catalog.mask[inst.hist_idx]
            hist_mask[i, :hm] = 1.0
            hist_pos[i, :hm] = inst.hist_pos
            hist_size[i, :hm] = inst.hist_size
        cand_tokens[i] = catalog.tokens[inst.cand_idx]
        cand_tok_mask[i] = catalog.mask[inst.cand_idx]
        cand_pos[i] = inst.cand_pos
        cand_size[i] = inst.cand_size
    return PackedBatch(hist_tokens=hist_tokens, hist_tok_mask=hist_tok_mask,
                       hist_mask=hist_mask, hist_pos=hist_pos, hist_size=hist_size,
                       cand_tokens=cand_tokens, cand_tok_mask=cand_tok_mask,
                       cand_pos=cand_pos, cand_size=cand_size)


class EvalScorer:
    """Frozen-parameter scorer: content vectors for the whole catalog are
    encoded once, then impressions are scored with preference scores only
    (candidate bias features are not an input of this path)."""

    def __init__(self, model: DebiasModel, catalog: TokenizedCatalog,
                 chunk: int = 512):
        self.model = model
        self.catalog = catalog
        self.chunk = chunk
        mats = []
        for lo in range(0, len(catalog), chunk):
            c, _ = encode_titles_batch(catalog.tokens[lo:lo + chunk],
                                       catalog.mask[lo:lo + chunk],
                                       model.content, training=False, dropout_rate=0.0,
                                       rng=None)
            mats.append(c)
        self.content = np.concatenate(mats) if mats else np.zeros((0, model.dim))
        model._count("empty_titles", int(np.sum(catalog.mask.sum(axis=1) == 0.0)))

    def _history_arrays(self, impressions):
        m_max = self.model.cfg.m_max
        hists = [imp.history[-m_max:] for imp in impressions]
        m = max((len(h) for h in hists), default=1)
        m = max(m, 1)
        n = len(impressions)
        c_hist = np.zeros((n, m, self.model.dim))
        mask = np.zeros((n, m))
        pos = np.ones((n, m), dtype=np.int64)
        size = np.zeros((n, m), dtype=np.int64)
        for i, h in enumerate(hists):
            for j, ent in enumerate(h):
                c_hist[i, j] = self.content[self.catalog.index[ent.news_id]]
                mask[i, j] = 1.0
                pos[i, j] = ent.position
                size[i, j] = ent.size
        return c_hist, mask, pos, size

    def user_vectors(self, impressions) -> np.ndarray:
        """(n, F) user vectors, batched in chunks."""
        out = np.zeros((len(impressions), self.model.dim))
        for lo in range(0, len(impressions), self.chunk):
            batch = impressions[lo:lo + self.chunk]
            c_hist, mask, pos, size = self._history_arrays(batch)
            b_hist = None
            if self.model.baum_enabled:
                b_flat, _ = bias_vectors_batch(pos.reshape(-1), size.reshape(-1),
                                               self.model.brm)
                b_hist = b_flat.reshape(c_hist.shape)
            u, cache = pool_history_batch(
                c_hist, b_hist, mask, self.model.baum, self.model.baum_enabled)
            self.model._count("empty_histories", cache["n_empty"])
            out[lo:lo + len(batch)] = u
        return out

    def preference_scores(self, impressions) -> List[np.ndarray]:
        users = self.user_vectors(impressions)
        scores = []
        for i, imp in enumerate(impressions):
            rows = self.content[[self.catalog.index[c.news_id] for c in imp.candidates]]
            scores.append(rows @ users[i])
        return scores

    def rankings(self, impressions) -> List[np.ndarray]:
        users = self.user_vectors(impressions)
        perms = []
        for i, imp in enumerate(impressions):
            rows = self.content[[self.catalog.index[c.news_id] for c in imp.candidates]]
            perms.append(rank_candidates(users[i], rows, self.model.mode))
        return perms

    def bias_scores(self, imp: ImpressionRecord) -> np.ndarray:
        """Diagnostic candidate bias scores (not used for ranking)."""
        if not self.model.uses_candidate_bias:
            return np.zeros(len(imp.candidates))
        pos = np.array([c.position for c in imp.candidates], dtype=np.int64)
        size = np.array([c.size for c in imp.candidates], dtype=np.int64)
        b, _ = bias_vectors_batch(pos, size, self.model.brm)
        return b @ self.model.bacp_w + self.model.bacp_b[0]

    def attention_dump(self, imp: ImpressionRecord):
        """(news_id, position, size, a_c, a_b, alpha) rows for a history."""
        m_max = self.model.cfg.m_max
        hist = imp.history[-m_max:]
        if not hist:
            return []
        c_hist = self.content[[self.catalog.index[h.news_id] for h in hist]]
        b_hist = None
        if self.model.baum_enabled:
            pos = np.array([h.position for h in hist], dtype=np.int64)
            size = np.array([h.size for h in hist], dtype=np.int64)
            b_hist, _ = bias_vectors_batch(pos, size, self.model.brm)
        history = ClickHistory(content=c_hist, bias=b_hist,
                               mask=np.ones(len(hist)))
        rows = attention_rows(history, self.model.baum, self.model.baum_enabled)
        return [(h.news_id, h.position, h.size) + rows[i]
                for i, h in enumerate(hist)]


def evaluate_split(model: DebiasModel, catalog: TokenizedCatalog,
                   impressions, keep_rows: bool = False) -> EvalReport:
    scorer = EvalScorer(model, catalog)
    scores = scorer.preference_scores(impressions)
    return evaluate(impressions, lambda i, imp: scores[i], keep_rows=keep_rows)


@dataclass
class TrainState:
    """Optimizer/checkpoint state needed to resume a run."""
    params: Dict[str, np.ndarray]
    adam_m: Dict[str, np.ndarray]
    adam_v: Dict[str, np.ndarray]
    best_params: Dict[str, np.ndarray]
    adam_t: int
    epochs_done: int
    best_epoch: int
    best_val_auc: float
    history: List[dict] = field(default_factory=list)
    counters: Dict[str, int] = field(default_factory=dict)


@dataclass
class TrainResult:
    model: DebiasModel            # holds the best-validation parameters
    history: List[dict]
    state: TrainState
    skipped_impressions: int


def train_model(cfg: RunConfig, vocab: Vocab, catalog: TokenizedCatalog,
                splits: DatasetSplit,
                resume: Optional[TrainState] = None,
                log=None) -> TrainResult:
    """Mini-batch Adam over shuffled instances with per-epoch validation.

    Deterministic given ``cfg.seed``: shuffling, negative sampling and
    dropout all use stateless streams keyed on (seed, purpose, epoch,
    batch), which also makes resumed runs identical to straight ones.
    """
    cfg.validate()
    model = DebiasModel(cfg, vocab_size=len(vocab))
    if cfg.pretrained_embeddings and resume is None:
        from .text import load_pretrained_embeddings
        load_pretrained_embeddings(cfg.pretrained_embeddings, vocab,
                                   model.content.word_emb)
    instances, skipped = build_instances(splits.train, catalog,
                                         cfg.k_negatives, cfg.m_max, cfg.seed)
    if not instances:
        raise ValueError("empty training set: no impression produced an instance")
    hyper = AdamHyper(lr=cfg.lr)

    if resume is not None:
        model.counters.update(resume.counters)
        model.store.restore(resume.params)
        for name in model.store.names():
            m, v = model.store.moments(name)
            m[...] = resume.adam_m[name]
            v[...] = resume.adam_v[name]
        t = resume.adam_t
        start_epoch = resume.epochs_done
        best_params = dict(resume.best_params)
        best_epoch = resume.best_epoch
        best_auc = resume.best_val_auc
        history = list(resume.history)
    else:
        t = 0
        start_epoch = 0
        best_params = model.store.snapshot()
        best_epoch = -1
        best_auc = -np.inf
        history = []

    n = len(instances)
    for epoch in range(start_epoch, cfg.epochs):
        order = make_rng(cfg.seed, 3, epoch).permutation(n)
        loss_sum = 0.0
        for lo in range(0, n, cfg.batch):
            chosen = [instances[int(i)] for i in order[lo:lo + cfg.batch]]
            batch = pack_batch(chosen, catalog)
            rng = make_rng(cfg.seed, 4, epoch, lo)
            try:
                loss, cache = model.forward_batch(batch, training=True, rng=rng)
            except NumericalError as exc:
                raise NumericalError(
                    f"epoch {epoch + 1}, batch at {lo}: {exc}") from exc
            model.backward_batch(cache)
            t += 1
            adam_step(model.store, t, hyper)
            loss_sum += loss * len(chosen)
        train_loss = loss_sum / n
        val = evaluate_split(model, catalog, splits.validation)
        row = {"epoch": epoch + 1, "train_loss": train_loss,
               "val_auc": val.auc, "val_mrr": val.mrr,
               "val_ndcg5": val.ndcg5, "val_ndcg10": val.ndcg10}
        history.append(row)
        if log:
            log(f"epoch {epoch + 1}: train_loss={train_loss:.4f} val_auc={val.auc:.4f}")
        if val.auc > best_auc:
            best_auc = val.auc
            best_epoch = epoch
            best_params = model.store.snapshot()
        if epoch - best_epoch >= cfg.patience:
            break

    state = TrainState(
        params=model.store.snapshot(),
        adam_m={name: model.store.moments(name)[0].copy() for name in model.store.names()},
        adam_v={name: model.store.moments(name)[1].copy() for name in model.store.names()},
        best_params=best_params, adam_t=t, epochs_done=len(history),
        best_epoch=best_epoch, best_val_auc=float(best_auc), history=history,
        counters=dict(model.counters))
    model.store.restore(best_params)
    return TrainResult(model=model, history=history, state=state,
                       skipped_impressions=skipped)


def checkpoint_meta(cfg: RunConfig, vocab: Vocab, state: TrainState,
                    counters: Dict[str, int], skipped: int) -> dict:
    from . import __version__
    from .kernels import LANE
    return {
        "format": 1,
        "package_version": __version__,
        "kernel_lane": LANE,
        "config_text": config_to_text(cfg),
        "scoring_mode": cfg.scoring_mode,
        "brm_variant": cfg.brm_variant,
        "baum_enabled": cfg.baum_enabled,
        "vocab_hash": vocab.content_hash(),
        "adam_t": state.adam_t,
        "epochs_done": state.epochs_done,
        "best_epoch": state.best_epoch,
        "best_val_auc": state.best_val_auc,
        "history": state.history,
        "counters": dict(sorted(counters.items())),
        "skipped_impressions": skipped,
    }


def state_tensors(state: TrainState) -> Dict[str, np.ndarray]:
    """Flatten a TrainState into the named records of a checkpoint."""
    tensors = {}
    for name, arr in state.params.items():
        tensors[f"param.{name}"] = arr
    for name, arr in state.adam_m.items():
        tensors[f"adam.m.{name}"] = arr
    for name, arr in state.adam_v.items():
        tensors[f"adam.v.{name}"] = arr
    for name, arr in state.best_params.items():
        tensors[f"best.{name}"] = arr
    return tensors


def state_from_tensors(meta: dict, tensors: Dict[str, np.ndarray]) -> TrainState:
    params = {k[len("param."):]: v for k, v in tensors.items() if k.startswith("param.")}
    return TrainState(
        params=params,
        adam_m={k[len("adam.m."):]: v for k, v in tensors.items() if k.startswith("adam.m.")},
        adam_v={k[len("adam.v."):]: v for k, v in tensors.items() if k.startswith("adam.v.")},
        best_params={k[len("best."):]: v for k, v in tensors.items() if k.startswith("best.")},
        adam_t=meta["adam_t"], epochs_done=meta["epochs_done"],
        best_epoch=meta["best_epoch"], best_val_auc=meta["best_val_auc"],
        history=meta["history"], counters=dict(meta.get("counters", {})))
