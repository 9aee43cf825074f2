"""Bias representation: (position, size) -> bias vector.

Variants: the full interaction form projects [e_p || e_s || e_p*e_s]; the
linear form drops the product; single-feature and disabled variants back
the ablation grid.  The disabled variant returns the all-ones vector so
the element-wise products downstream degrade to content-only behaviour.
"""

from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from . import kernels
from .optim import ParamStore

SIZE_NAMES = ("mini", "small", "medium", "large")
SIZE_IDS = {name: i for i, name in enumerate(SIZE_NAMES)}
N_SIZES = 4


class BrmVariant(Enum):
    NONE = "none"
    POSITION_ONLY = "position"
    SIZE_ONLY = "size"
    LINEAR_CONCAT = "linear"
    INTERACTION = "interaction"


@dataclass(frozen=True)
class BiasFeatures:
    position: int  # 1-based display position, clipped to [1, max_position]
    size: int      # 0=mini 1=small 2=medium 3=large

    def validate(self, max_position: int):
        if not 1 <= self.position <= max_position:
            raise ValueError(f"position {self.position} outside [1, {max_position}]")
        if not 0 <= self.size < N_SIZES:
            raise ValueError(f"size id {self.size} outside [0, {N_SIZES})")


def clip_position(position: int, max_position: int) -> int:
    return min(max(int(position), 1), max_position)


@dataclass
class BrmParams:
    pos_emb: Optional[np.ndarray]   # (P_max + 1, D_b), row 0 unused sentinel
    size_emb: Optional[np.ndarray]  # (4, D_b)
    proj_w: Optional[np.ndarray]    # (F, k * D_b)
    proj_b: Optional[np.ndarray]    # (F,)
    variant: BrmVariant
    out_dim: int


def concat_width(variant: BrmVariant) -> int:
    """Number of D_b blocks the projection consumes for a variant."""
    return {BrmVariant.NONE: 0, BrmVariant.POSITION_ONLY: 1,
            BrmVariant.SIZE_ONLY: 1, BrmVariant.LINEAR_CONCAT: 2,
            BrmVariant.INTERACTION: 3}[variant]


def init_brm_params(store: ParamStore, max_position: int, bias_dim: int,
                    out_dim: int, variant: BrmVariant,
                    rng: np.random.Generator):
    """Create BRM tensors; the NONE variant owns no parameters."""
    if variant == BrmVariant.NONE:
        view = BrmParams(None, None, None, None, variant, out_dim)
        return view, view
    k = concat_width(variant)
    if variant != BrmVariant.SIZE_ONLY:
        store.add("pos_emb", rng.uniform(-0.1, 0.1, size=(max_position + 1, bias_dim)))
    if variant != BrmVariant.POSITION_ONLY:
        store.add("size_emb", rng.uniform(-0.1, 0.1, size=(N_SIZES, bias_dim)))
    lim = np.sqrt(6.0 / (out_dim + k * bias_dim))
    store.add("brm_w", rng.uniform(-lim, lim, size=(out_dim, k * bias_dim)))
    # bias vectors gate content multiplicatively downstream, so start them
    # at the identity: ones plus a small input-dependent perturbation
    store.add("brm_b", np.ones(out_dim))

    def view(getter):
        return BrmParams(
            pos_emb=getter("pos_emb") if "pos_emb" in store else None,
            size_emb=getter("size_emb") if "size_emb" in store else None,
            proj_w=getter("brm_w"), proj_b=getter("brm_b"),
            variant=variant, out_dim=out_dim)

    return view(store.value), view(store.grad)


def bias_vectors_batch(positions: np.ndarray, sizes: np.ndarray, p: BrmParams):
    """Map (N,) position/size ids to (N, F) bias vectors.

    Returns (b, cache); cache is None for the parameter-free NONE variant.
    """
    n = positions.shape[0]
    if p.variant == BrmVariant.NONE:
        return np.ones((n, p.out_dim)), None
    if np.any(sizes < 0) or np.any(sizes >= N_SIZES):
        raise ValueError("size id outside the 4 display categories")
    parts = []
    ep = es = None
    if p.pos_emb is not None:
        ep = p.pos_emb[positions]
        parts.append(ep)
    if p.size_emb is not None:
        es = p.size_emb[sizes]
        parts.append(es)
    if p.variant == BrmVariant.INTERACTION:
        parts.append(ep * es)
    x = np.concatenate(parts, axis=1)
    b = x @ p.proj_w.T + p.proj_b
    cache = {"positions": positions, "sizes": sizes, "ep": ep, "es": es, "x": x}
    return b, cache


def bias_vectors_backward(d_b: np.ndarray, cache: Optional[dict],
                          p: BrmParams, g: BrmParams):
    """Accumulate BRM gradients; a no-op for the NONE variant."""
    if p.variant == BrmVariant.NONE:
        return
    x = cache["x"]
    g.proj_w += d_b.T @ x
    g.proj_b += d_b.sum(axis=0)
    d_x = d_b @ p.proj_w
    dim = p.pos_emb.shape[1] if p.pos_emb is not None else p.size_emb.shape[1]
    col = 0
    d_ep = d_es = None
    if p.pos_emb is not None:
        d_ep = d_x[:, col:col + dim].copy()
        col += dim
    if p.size_emb is not None:
        d_es = d_x[:, col:col + dim].copy()
        col += dim
    if p.variant == BrmVariant.INTERACTION:
        d_inter = d_x[:, col:col + dim]
        d_ep += d_inter * cache["es"]
        d_es += d_inter * cache["ep"]
    if d_ep is not None:
        kernels.scatter_add_rows(g.pos_emb, cache["positions"],
                                 np.ascontiguousarray(d_ep))
    if d_es is not None:
        kernels.scatter_add_rows(g.size_emb, cache["sizes"],
                                 np.ascontiguousarray(d_es))


def bias_repr(features: BiasFeatures, p: BrmParams) -> np.ndarray:
    """Bias vector for one displayed item."""
    b, _ = bias_vectors_batch(np.array([features.position], dtype=np.int64),
                              np.array([features.size], dtype=np.int64), p)
    return b[0]
