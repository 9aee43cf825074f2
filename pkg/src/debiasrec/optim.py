"""Named parameter store, Adam updates and a finite-difference checker."""

from dataclasses import dataclass, field
from typing import Callable, Dict, List

import numpy as np

from . import kernels
from .core import NumericalError, check_finite, make_rng


@dataclass(frozen=True)
class AdamHyper:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("Adam betas must lie in (0, 1)")
        if self.eps <= 0.0:
            raise ValueError("Adam epsilon must be positive")


class ParamStore:
    """Named map of parameters with matching gradient and moment buffers.

    Parameter arrays are updated in place so views handed to the model
    modules stay valid across optimizer steps.
    """

    def __init__(self):
        self._values: Dict[str, np.ndarray] = {}
        self._grads: Dict[str, np.ndarray] = {}
        self._m: Dict[str, np.ndarray] = {}
        self._v: Dict[str, np.ndarray] = {}

    def add(self, name: str, value: np.ndarray) -> np.ndarray:
        if name in self._values:
            raise ValueError(f"duplicate parameter name {name!r}")
        arr = np.ascontiguousarray(value, dtype=np.float64)
        self._values[name] = arr
        self._grads[name] = np.zeros_like(arr)
        self._m[name] = np.zeros_like(arr)
        self._v[name] = np.zeros_like(arr)
        return arr

    def names(self) -> List[str]:
        return sorted(self._values)

    def value(self, name: str) -> np.ndarray:
        return self._values[name]

    def grad(self, name: str) -> np.ndarray:
        return self._grads[name]

    def moments(self, name: str):
        return self._m[name], self._v[name]

    def __contains__(self, name: str) -> bool:
        return name in self._values

    def zero_grads(self):
        for g in self._grads.values():
            g[...] = 0.0

    def n_elements(self) -> int:
        return sum(v.size for v in self._values.values())

    def snapshot(self) -> Dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self._values.items()}

    def restore(self, snap: Dict[str, np.ndarray]):
        for k, v in snap.items():
            self._values[k][...] = v


def adam_step(store: ParamStore, t: int, hyper: AdamHyper):
    """Apply one bias-corrected Adam update and zero the gradients."""
    if t < 1:
        raise ValueError("Adam step index starts at 1")
    for name in store.names():
        value = store.value(name)
        grad = store.grad(name)
        if grad.shape != value.shape:
            raise ValueError(f"missing or mis-shaped gradient for {name!r}")
        m, v = store.moments(name)
        kernels.adam_update(value.reshape(-1), grad.reshape(-1),
                            m.reshape(-1), v.reshape(-1),
                            hyper.lr, hyper.beta1, hyper.beta2, hyper.eps, t)
    store.zero_grads()


@dataclass
class GradCheckEntry:
    name: str
    checked: int
    max_rel_error: float
    worst_coord: tuple
    analytic: float
    numeric: float


@dataclass
class GradCheckReport:
    entries: List[GradCheckEntry] = field(default_factory=list)

    @property
    def max_rel_error(self) -> float:
        return max((e.max_rel_error for e in self.entries), default=0.0)

    def failures(self, tol: float) -> List[GradCheckEntry]:
        return [e for e in self.entries if e.max_rel_error >= tol]

    def format(self, tol: float) -> str:
        lines = []
        for e in self.entries:
            status = "ok" if e.max_rel_error < tol else "FAIL"
            lines.append(
                f"{status:4s} {e.name:24s} coords={e.checked:3d} "
                f"max_rel={e.max_rel_error:.3e} "
                f"(analytic={e.analytic:+.6e} numeric={e.numeric:+.6e} at {e.worst_coord})")
        lines.append(f"overall max relative error: {self.max_rel_error:.3e}")
        return "\n".join(lines)


# Relative error floors out at this scale so finite-difference noise on
# near-zero gradients does not read as a failure.
_REL_FLOOR = 1e-3


def grad_check(loss_fn: Callable[[ParamStore], float], store: ParamStore,
               eps: float = 1e-5, sample: int = 8, seed: int = 0) -> GradCheckReport:
    """Compare analytic gradients against central differences.

    ``loss_fn(store)`` must be deterministic (dropout off, fixed inputs) and
    is expected to populate ``store`` gradients via its backward pass every
    time it runs.  Up to ``sample`` coordinates per parameter are probed.
    """
    rng = make_rng(seed, 0xD1FF)
    base = loss_fn(store)
    if not np.isfinite(base):
        raise NumericalError(f"loss is not finite: {base}")
    analytic = {name: store.grad(name).copy() for name in store.names()}

    report = GradCheckReport()
    for name in store.names():
        value = store.value(name)
        flat = value.reshape(-1)
        n = flat.size
        idx = np.arange(n) if n <= sample else rng.choice(n, size=sample, replace=False)
        worst = (0.0, (0,), 0.0, 0.0)
        for i in sorted(int(j) for j in idx):
            orig = flat[i]
            flat[i] = orig + eps
            up = loss_fn(store)
            flat[i] = orig - eps
            down = loss_fn(store)
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NumericalError(f"loss not finite while perturbing {name}[{i}]")
            numeric = (up - down) / (2.0 * eps)
            ana = analytic[name].reshape(-1)[i]
            rel = abs(ana - numeric) / max(abs(ana), abs(numeric), _REL_FLOOR)
            if rel >= worst[0]:
                worst = (rel, np.unravel_index(i, value.shape), ana, numeric)
        report.entries.append(GradCheckEntry(
            name=name, checked=len(idx), max_rel_error=worst[0],
            worst_coord=worst[1], analytic=worst[2], numeric=worst[3]))
    # leave the store as the caller handed it over
    loss_fn(store)
    return report
