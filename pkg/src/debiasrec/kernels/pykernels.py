"""Pure-numpy implementations of the hot training kernels.

This is the fallback lane; ``debiasrec.kernels._ckernels`` provides the
compiled lane with the same signatures.  All arrays are float64 and
C-contiguous; token/row ids are int64.
"""

import numpy as np

LANE = "python"


def conv1d_fwd(x, w, b):
    """Same-padded 1-D convolution over the middle axis.

    Args:
        x: (N, L, D) input sequences.
        w: (F, window * D) filter bank, window odd.
        b: (F,) bias.

    Returns:
        (N, L, F) pre-activation outputs.  Positions outside [0, L) are
        treated as zero vectors.
    """
    n, l, d = x.shape
    f, wd = w.shape
    window = wd // d
    half = window // 2
    xp = np.zeros((n, l + 2 * half, d))
    xp[:, half:half + l, :] = x
    # windows of shape (N, L, window, D): rows overlap, so materialize once
    # and run a single GEMM.
    win = np.lib.stride_tricks.sliding_window_view(xp, window, axis=1)
    win = np.ascontiguousarray(win.transpose(0, 1, 3, 2)).reshape(n * l, wd)
    out = win @ w.T
    out += b
    return out.reshape(n, l, f)


def conv1d_bwd(x, w, d_out):
    """Gradients of :func:`conv1d_fwd` w.r.t. input, filters and bias."""
    n, l, d = x.shape
    f, wd = w.shape
    window = wd // d
    half = window // 2
    xp = np.zeros((n, l + 2 * half, d))
    xp[:, half:half + l, :] = x
    win = np.lib.stride_tricks.sliding_window_view(xp, window, axis=1)
    win = np.ascontiguousarray(win.transpose(0, 1, 3, 2)).reshape(n * l, wd)
    d_flat = d_out.reshape(n * l, f)
    d_w = d_flat.T @ win
    d_b = d_flat.sum(axis=0)
    d_win = (d_flat @ w).reshape(n, l, window, d)
    d_xp = np.zeros_like(xp)
    for k in range(window):
        d_xp[:, k:k + l, :] += d_win[:, :, k, :]
    return np.ascontiguousarray(d_xp[:, half:half + l, :]), d_w, d_b


def att_fwd(h, proj, proj_b, query):
    """Additive-attention scores q^T tanh(P h + p_b) for every row.

    Args:
        h: (N, L, F) inputs.
        proj: (A, F) projection.
        proj_b: (A,) projection bias.
        query: (A,) query vector.

    Returns:
        (scores, z) where scores is (N, L) and z is the (N, L, A) tanh
        activation cache needed by the backward pass.
    """
    z = np.tanh(h @ proj.T + proj_b)
    return z @ query, z


def att_bwd(h, proj, query, z, d_scores):
    """Gradients of :func:`att_fwd`."""
    n, l, f = h.shape
    d_z = d_scores[..., None] * query
    d_q = np.einsum("nla,nl->a", z, d_scores)
    d_pre = d_z * (1.0 - z * z)
    d_pre2 = d_pre.reshape(n * l, -1)
    h2 = h.reshape(n * l, f)
    d_proj = d_pre2.T @ h2
    d_proj_b = d_pre2.sum(axis=0)
    d_h = (d_pre2 @ proj).reshape(n, l, f)
    return d_h, d_proj, d_proj_b, d_q


def masked_softmax(scores, mask):
    """Row-wise softmax over masked entries.

    Masked entries get probability exactly 0.  Rows with no unmasked entry
    yield an all-zero row (callers decide whether that is an error).
    Max-subtraction keeps the exponentials in range.
    """
    on = mask > 0.0
    neg = np.where(on, scores, -np.inf)
    m = neg.max(axis=-1, keepdims=True)
    m_f = np.where(np.isfinite(m), m, 0.0)
    z = np.exp(np.where(on, scores - m_f, -np.inf))
    denom = z.sum(axis=-1, keepdims=True)
    return np.divide(z, denom, out=np.zeros_like(z), where=denom > 0.0)


def masked_softmax_bwd(probs, d_probs):
    """Backward of :func:`masked_softmax` (zero rows stay zero)."""
    inner = (probs * d_probs).sum(axis=-1, keepdims=True)
    return probs * (d_probs - inner)


def weighted_pool(probs, h):
    """Pool (N, L, F) rows with (N, L) weights into (N, F)."""
    return np.einsum("nl,nlf->nf", probs, h)


def weighted_pool_bwd(probs, h, d_pooled):
    """Gradients of :func:`weighted_pool` w.r.t. weights and rows."""
    d_probs = np.einsum("nlf,nf->nl", h, d_pooled)
    d_h = probs[..., None] * d_pooled[:, None, :]
    return d_probs, d_h


def scatter_add_rows(table, ids, rows):
    """table[ids[i]] += rows[i], with repeated ids accumulated."""
    np.add.at(table, ids, rows)


def adam_update(param, grad, m, v, lr, beta1, beta2, eps, t):
    """One in-place Adam update with bias correction; flat float64 views."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    param -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
