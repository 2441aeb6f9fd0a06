"""Select the numba-compiled or the plain Python/numpy path for hot kernels.

Set ``MMWAVE_CRAN_NO_NUMBA=1`` before import to force the fallback path.
Both paths run the same source, so results agree bit for bit.
"""
import os

_FLAG = os.environ.get("MMWAVE_CRAN_NO_NUMBA", "").strip().lower()

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

USE_NUMBA = numba is not None and _FLAG in ("", "0", "false", "no")


def jit(fn):
    """``numba.njit(cache=True)`` when enabled, identity otherwise."""
    if USE_NUMBA:
        return numba.njit(cache=True)(fn)
    return fn


def backend():
    return "numba" if USE_NUMBA else "python"
