"""Optional numba acceleration.

Set ``LOGMORPH_DISABLE_NUMBA=1`` before importing the package to run every
kernel as plain Python/numpy.  The same source is used on both paths.
"""
import os

_disabled = os.environ.get("LOGMORPH_DISABLE_NUMBA", "0").lower() in ("1", "true", "yes")

try:
    if _disabled:
        raise ImportError
    import numba

    NUMBA_ENABLED = True
except ImportError:  # pragma: no cover - exercised via env flag
    numba = None
    NUMBA_ENABLED = False


def njit(fn=None, **kwargs):
    """``numba.njit(cache=True)`` when available, identity otherwise."""
    if fn is None:
        return lambda f: njit(f, **kwargs)
    if not NUMBA_ENABLED:
        return fn
    kwargs.setdefault("cache", True)
    return numba.njit(**kwargs)(fn)
