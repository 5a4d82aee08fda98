"""Backend selection for the hot loops.

Set ``FRACBDSDE_BACKEND=numpy`` to force the pure-numpy fallbacks, and
``FRACBDSDE_WORKERS=<n>`` to cap the numba thread count.
"""

from __future__ import annotations

import os

BACKEND_ENV = "FRACBDSDE_BACKEND"
WORKERS_ENV = "FRACBDSDE_WORKERS"

try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None
else:
    # the bundled TBB is often too old; prefer layers that always load
    if "NUMBA_THREADING_LAYER" not in os.environ:
        _numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]


def _requested_backend() -> str:
    value = os.environ.get(BACKEND_ENV, "numba").strip().lower()
    if value not in ("numba", "numpy"):
        raise ValueError(f"{BACKEND_ENV} must be 'numba' or 'numpy', got {value!r}")
    return value


HAVE_NUMBA = _numba is not None


def use_numba() -> bool:
    """True when the numba kernels should run (re-read on every call)."""
    return HAVE_NUMBA and _requested_backend() == "numba"


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV)
    if raw is None:
        return os.cpu_count() or 1
    n = int(raw)
    if n < 1:
        raise ValueError(f"{WORKERS_ENV} must be a positive integer")
    return n


def configure_workers() -> int:
    """Apply the worker count to numba's thread pool and return it."""
    n = worker_count()
    if HAVE_NUMBA:
        n = min(n, _numba.config.NUMBA_NUM_THREADS)
        _numba.set_num_threads(n)
    return n


def jit(*args, **kwargs):
    """``numba.njit`` when numba is importable, otherwise a no-op decorator."""
    if HAVE_NUMBA:
        return _numba.njit(*args, **kwargs)

    def wrap(fn):
        return fn

    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return wrap


if HAVE_NUMBA:
    prange = _numba.prange
else:  # pragma: no cover
    prange = range
