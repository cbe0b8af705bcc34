"""Engine backend selection.

The scalar RK4 kernel ships in two builds: the numba ``@njit`` compile
of :func:`memsolve.engine.rk4_run` and the same function left as pure
Python (in which case Monte Carlo sweeps use the vectorized numpy batch
kernel instead of a per-iteration loop).

Selection order: explicit ``backend=`` argument, then the
``MEMSOLVE_BACKEND`` environment variable (``numba`` | ``numpy`` |
``auto``), then ``numba`` when importable.
"""

from __future__ import annotations

import os

from . import engine

BACKEND_ENV = "MEMSOLVE_BACKEND"
THREADS_ENV = "MEMSOLVE_THREADS"

rk4_python = engine.rk4_run

try:
    import numba

    rk4_numba = numba.njit(cache=True, nogil=True, error_model="numpy")(engine.rk4_run)
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a default dependency
    rk4_numba = None
    HAVE_NUMBA = False


def available_backends() -> tuple[str, ...]:
    return ("numba", "numpy") if HAVE_NUMBA else ("numpy",)


def resolve_backend(backend: str | None = None) -> str:
    """Resolve a backend name from the argument or the environment."""
    name = backend or os.environ.get(BACKEND_ENV, "auto").strip().lower() or "auto"
    if name == "auto":
        return "numba" if HAVE_NUMBA else "numpy"
    if name == "numba":
        if not HAVE_NUMBA:
            raise RuntimeError("MEMSOLVE_BACKEND=numba but numba is not importable")
        return "numba"
    if name == "numpy":
        return "numpy"
    raise ValueError(f"unknown backend {name!r} (expected numba, numpy or auto)")


def rk4_kernel(backend: str | None = None):
    return rk4_numba if resolve_backend(backend) == "numba" else rk4_python


def thread_count() -> int:
    """Worker cap for embarrassingly parallel sweeps (MEMSOLVE_THREADS)."""
    raw = os.environ.get(THREADS_ENV, "").strip()
    if raw:
        try:
            n = int(raw)
        except ValueError:
            raise ValueError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
        if n < 1:
            raise ValueError(f"{THREADS_ENV} must be >= 1, got {n}")
        return n
    return os.cpu_count() or 1
