"""Numba switch.

Hot loops in :mod:`mlmsal.kernels` are compiled with ``numba.njit`` unless
``MLMSAL_DISABLE_NUMBA`` is set to a truthy value, in which case the
vectorised numpy fallbacks are dispatched instead.  The flag is read once at
import time.
"""
import os

_FALSEY = {"", "0", "false", "no", "off"}


def _numba_available():
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


USE_NUMBA = (
    os.environ.get("MLMSAL_DISABLE_NUMBA", "0").strip().lower() in _FALSEY
    and _numba_available()
)


def njit(*args, **kwargs):
    """``numba.njit`` with caching on; a no-op decorator when numba is absent."""
    kwargs.setdefault("cache", True)
    if not _numba_available():
        if args and callable(args[0]):
            return args[0]
        return lambda fn: fn
    import numba

    return numba.njit(*args, **kwargs)
