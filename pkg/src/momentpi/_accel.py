"""Backend selection for the stochastic simulation kernels.

``MOMENT_PI_NUMBA=0`` forces the pure-numpy path even when numba is
installed. ``MOMENT_PI_THREADS`` caps the numba thread pool.
"""

from __future__ import annotations

import os
import warnings

_FALSY = {"0", "false", "no", "off"}

try:
    import numba

    HAVE_NUMBA = True
    # older system TBB builds trigger a harmless fallback warning on first parallel launch
    warnings.filterwarnings("ignore", message="The TBB threading layer")
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("MOMENT_PI_NUMBA", "1").strip().lower() not in _FALSY


def thread_cap() -> int | None:
    raw = os.environ.get("MOMENT_PI_THREADS")
    if not raw:
        return None
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"MOMENT_PI_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ValueError(f"MOMENT_PI_THREADS must be a positive integer, got {raw!r}")
    return n


def default_backend() -> str:
    return "numba" if USE_NUMBA else "numpy"


def resolve_backend(backend: str | None) -> str:
    if backend is None:
        return default_backend()
    if backend not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {backend!r}")
    if backend == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba backend requested but numba is not installed")
    return backend


def apply_thread_cap() -> None:
    n = thread_cap()
    if n is not None and HAVE_NUMBA:
        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def njit(*args, **kwargs):
    """``numba.njit`` when numba is importable, identity decorator otherwise."""
    if not HAVE_NUMBA:
        if args and callable(args[0]):
            return args[0]
        return lambda f: f
    return numba.njit(*args, **kwargs)


# numba only parallelizes loops over its own prange object
prange = numba.prange if HAVE_NUMBA else range
