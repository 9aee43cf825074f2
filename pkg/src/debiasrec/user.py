"""Bias-aware user modeling.

Clicked-news history is pooled with attention weights fusing two score
families: content scores from the news vectors and bias scores from the
presentation-bias vectors.  The user vector pools the element-wise product
of the two representations; with the bias path disabled it pools the
content vectors alone.
"""

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from . import kernels
from .optim import ParamStore
from .core import glorot_uniform


@dataclass
class BaumParams:
    bias_proj: Optional[np.ndarray]   # (A, F)
    bias_bias: Optional[np.ndarray]   # (A,)
    bias_query: Optional[np.ndarray]  # (A,)
    cont_proj: np.ndarray             # (A, F)
    cont_bias: np.ndarray             # (A,)
    cont_query: np.ndarray            # (A,)


@dataclass
class ClickHistory:
    """Up to M most-recent clicks, already encoded."""
    content: np.ndarray  # (M, F)
    bias: Optional[np.ndarray]  # (M, F) or None when the bias path is off
    mask: np.ndarray     # (M,) 1.0 on real entries


def init_baum_params(store: ParamStore, dim: int, att_dim: int,
                     baum_enabled: bool, rng: np.random.Generator):
    """Create the two attention stacks; bias stack only when enabled."""
    if baum_enabled:
        store.add("bias_att_proj", glorot_uniform(rng, att_dim, dim))
        store.add("bias_att_bias", np.zeros(att_dim))
        store.add("bias_att_query", rng.uniform(-0.1, 0.1, size=att_dim))
    store.add("cont_att_proj", glorot_uniform(rng, att_dim, dim))
    store.add("cont_att_bias", np.zeros(att_dim))
    store.add("cont_att_query", rng.uniform(-0.1, 0.1, size=att_dim))

    def view(getter):
        return BaumParams(
            bias_proj=getter("bias_att_proj") if baum_enabled else None,
            bias_bias=getter("bias_att_bias") if baum_enabled else None,
            bias_query=getter("bias_att_query") if baum_enabled else None,
            cont_proj=getter("cont_att_proj"),
            cont_bias=getter("cont_att_bias"),
            cont_query=getter("cont_att_query"))

    return view(store.value), view(store.grad)


def pool_history_batch(c_hist: np.ndarray, b_hist: Optional[np.ndarray],
                       hist_mask: np.ndarray, p: BaumParams,
                       baum_enabled: bool):
    """Fuse (B, M, F) histories into (B, F) user vectors.

    With the bias path on, attention weights are softmax(a_c + a_b) and the
    pooled rows are b * c; with it off, weights come from a_c alone and the
    content rows are pooled.  All-masked histories produce zero vectors;
    the count is reported in the cache under ``n_empty``.
    """
    c_hist = np.ascontiguousarray(c_hist)
    hist_mask = np.ascontiguousarray(hist_mask)
    a_c, z_c = kernels.att_fwd(c_hist, p.cont_proj, p.cont_bias, p.cont_query)
    if baum_enabled:
        b_hist = np.ascontiguousarray(b_hist)
        a_b, z_b = kernels.att_fwd(b_hist, p.bias_proj, p.bias_bias, p.bias_query)
        fused = a_c + a_b
        rows = b_hist * c_hist
    else:
        a_b = z_b = None
        fused = a_c
        rows = c_hist
    alpha = kernels.masked_softmax(np.ascontiguousarray(fused), hist_mask)
    u = kernels.weighted_pool(alpha, np.ascontiguousarray(rows))
    cache = {
        "c_hist": c_hist, "b_hist": b_hist, "rows": rows, "alpha": alpha,
        "z_c": z_c, "z_b": z_b, "a_c": a_c, "a_b": a_b,
        "baum_enabled": baum_enabled,
        "n_empty": int(np.sum(hist_mask.sum(axis=1) == 0.0)),
    }
    return u, cache


def pool_history_backward(d_u: np.ndarray, cache: dict, p: BaumParams,
                          g: BaumParams) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """Backward of :func:`pool_history_batch`.

    Returns gradients w.r.t. the history content vectors and (when the bias
    path is on) the history bias vectors.
    """
    alpha, rows = cache["alpha"], cache["rows"]
    d_alpha, d_rows = kernels.weighted_pool_bwd(alpha, np.ascontiguousarray(rows),
                                                np.ascontiguousarray(d_u))
    d_fused = kernels.masked_softmax_bwd(alpha, d_alpha)
    if cache["baum_enabled"]:
        d_c = d_rows * cache["b_hist"]
        d_b = d_rows * cache["c_hist"]
        d_h, d_proj, d_pb, d_q = kernels.att_bwd(
            cache["b_hist"], p.bias_proj, p.bias_query, cache["z_b"], d_fused)
        g.bias_proj += d_proj
        g.bias_bias += d_pb
        g.bias_query += d_q
        d_b += d_h
    else:
        d_c = d_rows
        d_b = None
    d_h, d_proj, d_pb, d_q = kernels.att_bwd(
        cache["c_hist"], p.cont_proj, p.cont_query, cache["z_c"], d_fused)
    g.cont_proj += d_proj
    g.cont_bias += d_pb
    g.cont_query += d_q
    d_c = d_c + d_h
    return d_c, d_b


def encode_user(history: ClickHistory, p: BaumParams, baum_enabled: bool,
                counters: Optional[dict] = None) -> np.ndarray:
    """User vector for one history; empty histories give the zero vector."""
    u, cache = pool_history_batch(history.content[None, :, :],
                                  None if history.bias is None else history.bias[None, :, :],
                                  history.mask[None, :], p, baum_enabled)
    if counters is not None and cache["n_empty"]:
        counters["empty_histories"] = counters.get("empty_histories", 0) + cache["n_empty"]
    return u[0]


def attention_rows(history: ClickHistory, p: BaumParams, baum_enabled: bool
                   ) -> List[Tuple[float, float, float]]:
    """Per-entry (a_c, a_b, alpha) rows for attention dumps."""
    _, cache = pool_history_batch(history.content[None, :, :],
                                  None if history.bias is None else history.bias[None, :, :],
                                  history.mask[None, :], p, baum_enabled)
    a_c = cache["a_c"][0]
    a_b = cache["a_b"][0] if cache["a_b"] is not None else np.zeros_like(a_c)
    alpha = cache["alpha"][0]
    rows = []
    for i in range(a_c.shape[0]):
        if history.mask[i] > 0.0:
            rows.append((float(a_c[i]), float(a_b[i]), float(alpha[i])))
    return rows
