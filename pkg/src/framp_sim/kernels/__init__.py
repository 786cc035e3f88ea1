"""Hot kernels with a numba path and a pure-numpy fallback.

With numba enabled, ``local_sgd`` runs the numba active-weight kernel when
the mask keeps at most :data:`SPARSE_MAX_ACTIVE` weights and the numpy
(BLAS) kernel otherwise; the cost of the sparse kernel grows with the number
of active weights, BLAS wins on dense masks. ``loss_grad`` and
``forward_batch`` are always numpy. ``FRAMP_SIM_DISABLE_NUMBA=1`` (read once
at import) forces numpy everywhere. Both backends stay importable for
benchmarking and cross-checking as ``kernels.numpy_backend`` /
``kernels.numba_backend()``.
"""
import numpy as np

from .._accel import USE_NUMBA
from . import _np as numpy_backend
from ._np import forward_batch, loss_grad

# crossover measured with benchmarks/bench_kernels.py on d = 3.4k and 13.5k models
SPARSE_MAX_ACTIVE = 800


def numba_backend():
    from . import _nb

    return _nb


def _hybrid_sgd(widths, relu, w0, mask, X, y, batch_idx, gp, gp_present, lam, lr):
    if np.count_nonzero(mask) <= SPARSE_MAX_ACTIVE:
        return numba_backend().sparse_sgd(widths, relu, w0, mask, X, y, batch_idx, gp, gp_present, lam, lr)
    return numpy_backend.local_sgd(widths, relu, w0, mask, X, y, batch_idx, gp, gp_present, lam, lr)


local_sgd = _hybrid_sgd if USE_NUMBA else numpy_backend.local_sgd
BACKEND = "numba" if USE_NUMBA else "numpy"

__all__ = ["BACKEND", "SPARSE_MAX_ACTIVE", "forward_batch", "local_sgd", "loss_grad", "numba_backend", "numpy_backend"]
