"""Numerical substrate: vectors/matrices, softmax, additive attention,
same-padded 1-D convolution, dropout and seeded RNG streams.

Tensors are plain float64 numpy arrays.  The helpers here validate shape
and finiteness at the boundaries; the batched hot paths live in
:mod:`debiasrec.kernels`.
"""

from typing import NamedTuple, Optional, Sequence

import numpy as np

from . import kernels


class NumericalError(RuntimeError):
    """Raised when a computation produces non-finite values."""


def as_vector(x, name="vector"):
    a = np.ascontiguousarray(x, dtype=np.float64)
    if a.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {a.shape}")
    return a


def as_matrix(x, name="matrix"):
    a = np.ascontiguousarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {a.shape}")
    return a


def check_finite(x, name="array"):
    if not np.all(np.isfinite(x)):
        raise NumericalError(f"{name} contains NaN or Inf")
    return x


def glorot_uniform(rng, rows, cols):
    lim = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-lim, lim, size=(rows, cols))


def make_rng(seed, *stream):
    """Deterministic generator for a named stream.

    Streams are derived statelessly from ``(seed, *stream)`` so any part of
    a run (an epoch, a batch, one user) can be reproduced without replaying
    the randomness that preceded it.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, *stream])))


def softmax(v, mask: Optional[np.ndarray] = None) -> np.ndarray:
    """Stable softmax of a vector, optionally restricted to a mask.

    Masked entries come out exactly 0.  Raises ValueError("empty support")
    when every entry is masked.
    """
    v = as_vector(v, "softmax input")
    if v.size == 0:
        raise ValueError("empty support")
    if mask is None:
        m = np.ones(v.size)
    else:
        m = np.asarray(mask, dtype=np.float64).reshape(v.size)
    if not np.any(m > 0.0):
        raise ValueError("empty support")
    out = kernels.masked_softmax(v.reshape(1, -1), m.reshape(1, -1))
    return out.reshape(-1)


class AttentionResult(NamedTuple):
    weights: np.ndarray
    pooled: np.ndarray
    scores: np.ndarray  # pre-softmax, consumed raw by the user-model fusion


def additive_attention(h: Sequence[np.ndarray], query, proj, proj_b,
                       mask: Optional[np.ndarray] = None) -> AttentionResult:
    """Score rows with q^T tanh(P h_i + p_b), softmax, and pool.

    Args:
        h: sequence of equal-length vectors (or an (L, F) array).
        query: (A,) query vector.
        proj: (A, F) projection matrix.
        proj_b: (A,) projection bias.
        mask: optional 0/1 vector selecting real rows.

    Returns:
        AttentionResult(weights, pooled, scores).
    """
    rows = np.ascontiguousarray(np.asarray(h, dtype=np.float64))
    if rows.ndim != 2:
        raise ValueError(f"expected a sequence of vectors, got shape {rows.shape}")
    proj = as_matrix(proj, "attention projection")
    query = as_vector(query, "attention query")
    proj_b = as_vector(proj_b, "attention projection bias")
    if proj.shape[1] != rows.shape[1]:
        raise ValueError(
            f"projection expects dim {proj.shape[1]}, inputs have {rows.shape[1]}")
    if proj.shape[0] != query.size or proj.shape[0] != proj_b.size:
        raise ValueError("attention parameter shapes disagree")
    scores, _ = kernels.att_fwd(rows[None, :, :], proj, proj_b, query)
    weights = softmax(scores.reshape(-1), mask)
    pooled = weights @ rows
    return AttentionResult(weights, pooled, scores.reshape(-1))


def conv1d_same(h: Sequence[np.ndarray], w, b, window: int):
    """ReLU(conv) over a sequence with zero-vector same-padding.

    ``w`` is (filters, window * input_dim); output has one (filters,)
    vector per input position.
    """
    if window % 2 != 1:
        raise ValueError(f"window must be odd, got {window}")
    rows = np.ascontiguousarray(np.asarray(h, dtype=np.float64))
    if rows.ndim != 2 or rows.shape[0] == 0:
        raise ValueError("conv1d_same needs a non-empty sequence of vectors")
    w = as_matrix(w, "conv filters")
    b = as_vector(b, "conv bias")
    if w.shape[1] != window * rows.shape[1]:
        raise ValueError(
            f"filters expect {w.shape[1]} inputs, window*dim is {window * rows.shape[1]}")
    pre = kernels.conv1d_fwd(rows[None, :, :], w, b)[0]
    return np.maximum(pre, 0.0)


def relu(x):
    return np.maximum(x, 0.0)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def dropout(x, rate: float, rng: Optional[np.random.Generator], training: bool):
    """Inverted dropout: scale survivors by 1/(1-rate) so eval is identity."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    x = np.asarray(x, dtype=np.float64)
    if not training or rate == 0.0:
        return x
    keep = rng.random(x.shape) >= rate
    return x * (keep / (1.0 - rate))


def dropout_mask(shape, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Pre-scaled keep mask used by the batched training path."""
    if rate == 0.0:
        return np.ones(shape)
    return (rng.random(shape) >= rate) / (1.0 - rate)
