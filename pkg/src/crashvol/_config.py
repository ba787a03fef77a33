"""Backend selection for the compiled kernels.

Set ``CRASHVOL_DISABLE_NUMBA=1`` to force the pure-numpy code path. The
flag is read once at import time; tests and benchmarks that need both
paths call the backend functions in :mod:`crashvol._kernels` directly.
"""
import os

_FLAG = os.environ.get("CRASHVOL_DISABLE_NUMBA", "").strip().lower()

try:
    import numba  # noqa: F401

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and _FLAG not in ("1", "true", "yes", "on")


def set_threads(n):
    """Set the numba thread count; silently ignored on the numpy path."""
    if n is None or not HAVE_NUMBA:
        return
    import numba

    numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))
