"""JIT switch.

Hot kernels are written once as scalar loops and compiled with numba when it
is importable. Setting ``TWINSAC_DISABLE_JIT=1`` routes every caller to the
pure-numpy implementations instead.
"""

import os

JIT_DISABLED = os.environ.get("TWINSAC_DISABLE_JIT", "").strip().lower() in ("1", "true", "yes")

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

USE_JIT = HAVE_NUMBA and not JIT_DISABLED


def njit(*args, **kwargs):
    """``numba.njit`` when available, identity decorator otherwise."""
    if HAVE_NUMBA:
        return numba.njit(*args, cache=False, **kwargs)

    def wrap(fn):
        return fn

    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return wrap
