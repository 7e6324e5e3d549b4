"""Backend switch for the hot kernels.

Set ``MFNASH_NUMBA=0`` before import to force the pure-numpy path. Any other
value (or unset) uses numba when it can be imported.
"""

from __future__ import annotations

import os

_flag = os.environ.get("MFNASH_NUMBA", "1").strip().lower()
WANT_NUMBA = _flag not in ("0", "false", "no", "off")

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency in CI
    numba = None
    HAS_NUMBA = False

USE_NUMBA = WANT_NUMBA and HAS_NUMBA


def njit(*args, **kwargs):
    """``numba.njit`` with cached, nogil defaults; identity when numba is off."""
    if not HAS_NUMBA:
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda fn: fn
    kwargs.setdefault("cache", True)
    kwargs.setdefault("nogil", True)
    return numba.njit(*args, **kwargs)


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
