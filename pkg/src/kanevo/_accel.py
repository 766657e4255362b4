"""Numba switch.

Set ``KANEVO_DISABLE_NUMBA=1`` to run every kernel through its pure-numpy
fallback (useful for debugging and for machines without numba).
"""

import os

_DISABLED = os.environ.get("KANEVO_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    if _DISABLED:
        raise ImportError("disabled by KANEVO_DISABLE_NUMBA")
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def identity(fn):
            return fn

        return identity


def backend() -> str:
    return "numba" if HAS_NUMBA else "numpy"
