"""Numba switch.

Set ``OVILAB_DISABLE_NUMBA=1`` to force the pure-numpy kernels.  The flag is
read once at import time.
"""
import os
import warnings

_disabled = os.environ.get("OVILAB_DISABLE_NUMBA", "0").strip().lower() in {"1", "true", "yes"}

try:
    if _disabled:
        raise ImportError
    # an old system TBB only triggers a fallback to another threading layer
    warnings.filterwarnings("ignore", message="The TBB threading layer")
    from numba import njit, prange

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised via env flag in a subprocess
    HAVE_NUMBA = False
    prange = range

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def wrap(fn):
            return fn

        return wrap

USE_NUMBA = HAVE_NUMBA
