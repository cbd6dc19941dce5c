"""Numba dispatch.

Set ``HURDLE_IMDL_NUMBA=0`` before import to force the pure-numpy kernels.
The flag is read once, at import time.
"""
import os

_FLAG = os.environ.get("HURDLE_IMDL_NUMBA", "1").strip().lower()

try:
    import numba
    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and _FLAG not in ("0", "false", "no", "off")


def njit(*args, **kwargs):
    """``numba.njit`` when available, identity decorator otherwise.

    The compiled variant is always built when numba is importable so the
    benchmark and the cross-path tests can reach it regardless of the flag.
    """
    if not HAS_NUMBA:
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f
    kwargs.setdefault("cache", True)
    return numba.njit(*args, **kwargs)
