"""Backend selection for the hot kernels.

Set ``BCR_DISABLE_NUMBA=1`` to force the pure-numpy path. numba is optional;
if it cannot be imported the numpy path is used as well.
"""

import os

_disabled = os.environ.get("BCR_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    if _disabled:
        raise ImportError
    import numba

    HAVE_NUMBA = True
except ImportError:
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not _disabled


def njit(fn):
    """``numba.njit(cache=True)`` when available, otherwise the function unchanged."""
    if HAVE_NUMBA:
        return numba.njit(cache=True)(fn)
    return fn


def backend():
    return "numba" if USE_NUMBA else "numpy"
