"""Kernel lane selection.

The hot inner loops of training (convolution, attention scoring, masked
softmax, pooling, gradient scatter, Adam) exist twice: a compiled Cython
extension and a pure-numpy fallback.  The lane is chosen once at import:

* ``DEBIASREC_KERNELS=c``    require the compiled lane (ImportError if absent)
* ``DEBIASREC_KERNELS=py``   force the numpy fallback
* unset / ``auto``           compiled if available, else fallback

``benchmarks/bench_kernels.py`` compares the two lanes.
"""

import os

from . import pykernels

_choice = os.environ.get("DEBIASREC_KERNELS", "auto").lower()
if _choice not in ("auto", "c", "py"):
    raise ValueError(f"DEBIASREC_KERNELS must be auto, c or py, got {_choice!r}")

_impl = pykernels
if _choice in ("auto", "c"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]
    except ImportError:
        if _choice == "c":
            raise

LANE = _impl.LANE

conv1d_fwd = _impl.conv1d_fwd
conv1d_bwd = _impl.conv1d_bwd
att_fwd = _impl.att_fwd
att_bwd = _impl.att_bwd
masked_softmax = _impl.masked_softmax
masked_softmax_bwd = _impl.masked_softmax_bwd
weighted_pool = _impl.weighted_pool
weighted_pool_bwd = _impl.weighted_pool_bwd
scatter_add_rows = _impl.scatter_add_rows
adam_update = _impl.adam_update


def get_lane(name):
    """Return the kernel module for ``name`` ("python" or "c"), or None."""
    if name == "python":
        return pykernels
    if name == "c":
        try:
            from . import _ckernels
            return _ckernels
        except ImportError:
            return None
    raise ValueError(f"unknown lane {name!r}")
