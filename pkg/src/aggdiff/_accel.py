"""Backend selection for the compiled hot loops.

Set ``AGGDIFF_BACKEND=numpy`` (or ``AGGDIFF_NO_NUMBA=1``) before import to
run the vectorised numpy implementations instead of the numba ones.
"""
from __future__ import annotations

import os

_flag = os.environ.get("AGGDIFF_BACKEND", "").strip().lower()
_disabled = _flag == "numpy" or os.environ.get("AGGDIFF_NO_NUMBA", "") not in ("", "0")

try:
    if _disabled:
        raise ImportError
    import numba  # noqa: F401
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised with the env flag
    HAVE_NUMBA = False
    njit = None

BACKEND = "numba" if HAVE_NUMBA else "numpy"


def jit(fn):
    """Compile ``fn`` with numba when enabled, otherwise return it untouched."""
    if HAVE_NUMBA:
        return njit(cache=True, nogil=True)(fn)
    return fn


def set_threads(n: int | None) -> None:
    """Limit numba worker threads (no-op without numba)."""
    if n and HAVE_NUMBA:
        import numba

        numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))
