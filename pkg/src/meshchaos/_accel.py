"""Optional numba acceleration.

Set ``MESHCHAOS_DISABLE_NUMBA=1`` to force the pure-numpy kernels. When numba
is not installed the numpy path is used automatically.
"""

import os

DISABLE_NUMBA = os.environ.get("MESHCHAOS_DISABLE_NUMBA", "0").strip().lower() in ("1", "true", "yes")

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and not DISABLE_NUMBA


def njit(func):
    """Compile ``func`` in nopython mode, or return it unchanged if numba is absent."""
    if not HAS_NUMBA:
        return func
    return numba.njit(cache=True, nogil=True)(func)
