"""Numba switch.

Set ``ECOFORECAST_NUMBA=0`` to force the pure-numpy kernels. When numba is
missing the numpy path is used automatically.
"""

import os

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

USE_NUMBA = numba is not None and os.environ.get("ECOFORECAST_NUMBA", "1") != "0"


def njit(func):
    """Compile ``func`` in nopython mode whenever numba is importable.

    Compilation ignores the env flag so both kernel variants stay testable;
    the flag only picks which variant the public names bind to.
    """
    if numba is None:  # pragma: no cover
        return func
    return numba.njit(cache=True)(func)
