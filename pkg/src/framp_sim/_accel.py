"""Backend selection for the hot numeric kernels.

Set ``FRAMP_SIM_DISABLE_NUMBA=1`` to force the pure-numpy path. Numba is
also skipped silently if it cannot be imported.
"""
import os

_FLAG = "FRAMP_SIM_DISABLE_NUMBA"


def numba_requested() -> bool:
    return os.environ.get(_FLAG, "0").strip().lower() not in ("1", "true", "yes", "on")


try:
    import numba  # noqa: F401

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and numba_requested()
