"""numba switch.

Set ``DIALOGLAB_DISABLE_JIT=1`` to run every kernel through its pure-numpy
twin.  The flag is read once at import time.
"""

import functools
import os

_FALSEY = ("", "0", "false", "no", "off")

JIT_ENABLED = os.environ.get("DIALOGLAB_DISABLE_JIT", "0").strip().lower() in _FALSEY

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    JIT_ENABLED = False

if numba is not None:
    njit = functools.partial(numba.njit, cache=True, fastmath=False)
else:  # pragma: no cover

    def njit(func=None, **kwargs):
        if func is not None:
            return func
        return lambda f: f


def select(jitted, fallback):
    """Pick the jitted kernel when JIT is on, otherwise the numpy fallback."""
    return jitted if JIT_ENABLED else fallback
