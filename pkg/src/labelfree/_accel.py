"""Numba dispatch flag.

Set ``LABELFREE_NUMBA=0`` to force the vectorized numpy kernels (useful when
numba is unavailable or when comparing backends). The flag is read once at
import time.
"""
import os
import warnings

_requested = os.environ.get("LABELFREE_NUMBA", "1").strip().lower() not in ("0", "false", "no", "off")

try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None
    if _requested:
        warnings.warn("numba is not installed; falling back to numpy kernels")

NUMBA_ENABLED = _requested and _numba is not None


def njit(fn):
    """Compile ``fn`` with numba when available; otherwise return ``None``.

    Callers keep a separate numpy implementation, so a ``None`` here simply
    means the numba path is not selectable.
    """
    if _numba is None:
        return None
    return _numba.njit(cache=True, nogil=True)(fn)
