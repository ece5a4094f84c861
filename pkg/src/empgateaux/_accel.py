"""Backend selection for the hot numeric kernels.

Set ``EMPGATEAUX_BACKEND=numpy`` to bypass numba entirely; the default
(``numba``) falls back to numpy automatically when numba cannot be
imported.
"""

import os

_requested = os.environ.get("EMPGATEAUX_BACKEND", "numba").strip().lower()

try:
    if _requested == "numpy":
        raise ImportError("numba disabled by EMPGATEAUX_BACKEND")
    from numba import njit as _njit

    HAVE_NUMBA = True
except ImportError:
    _njit = None
    HAVE_NUMBA = False

BACKEND = "numba" if HAVE_NUMBA else "numpy"


def maybe_njit(*args, **kwargs):
    """``numba.njit`` when available, identity decorator otherwise."""
    if HAVE_NUMBA:
        return _njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda f: f
