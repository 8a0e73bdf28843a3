"""Hot numeric kernels with two interchangeable backends.

The compiled (numba) backend is used when available; a pure-numpy fallback
implements the identical contracts.  Selection:

    GEPOWER_BACKEND=auto   numba if importable, else numpy (default)
    GEPOWER_BACKEND=numba  require the compiled backend
    GEPOWER_BACKEND=numpy  force the fallback

Both backends consume the same flat-array inputs and agree to float
round-off on the Bellman sweep and bit-for-bit on simulation streams;
``benchmarks/bench_backends.py`` compares their speed.
"""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

ENV_VAR = "GEPOWER_BACKEND"

# Policy dispatch codes for simulate_batch.
POLICY_GRID = 0
POLICY_MYOPIC = 1
POLICY_ALL_ON = 2
POLICY_BEST_SINGLE = 3
POLICY_NONE = 4
POLICY_UNIFORM = 5


@dataclass
class SweepTables:
    """Precomputed per-grid data consumed by the Bellman sweep kernels.

    The belief grid has identical axes, so one set of 1-D tables serves every
    dimension: ``lo``/``frac`` place the propagated coordinate of each axis
    point inside its cell, and ``i0``/``i1`` are the exact axis indices of
    the two post-observation beliefs.
    """

    ax: np.ndarray       # (G,) axis coordinates
    lo: np.ndarray       # (G,) int64 cell index of propagated coordinate
    frac: np.ndarray     # (G,) float64 in-cell fraction
    i0: int              # axis index holding lambda0
    i1: int              # axis index holding lambda1
    masks: np.ndarray    # (A, N) uint8 action masks, ascending mask order
    kcard: np.ndarray    # (A,) int64 used-channel counts
    gain: np.ndarray     # (A,) float64 R_k + C_k (0.0 for the empty action)
    offset: np.ndarray   # (A,) float64 k * C_k
    digits: np.ndarray   # (S, N) int64 per-point axis indices, C order
    strides: np.ndarray  # (N,) int64 flat strides
    shape: tuple


def _numba_available() -> bool:
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


_cached_name: str | None = None


def backend_name() -> str:
    """Resolve the active backend once; reset_backend_cache() re-reads the env."""
    global _cached_name
    if _cached_name is not None:
        return _cached_name
    mode = os.environ.get(ENV_VAR, "auto").strip().lower()
    if mode not in ("auto", "numba", "numpy"):
        raise ValueError(f"{ENV_VAR} must be auto, numba, or numpy (got {mode!r})")
    if mode == "numpy":
        _cached_name = "numpy"
    elif mode == "numba":
        if not _numba_available():
            raise RuntimeError(f"{ENV_VAR}=numba but numba is not importable")
        _cached_name = "numba"
    else:
        _cached_name = "numba" if _numba_available() else "numpy"
    return _cached_name


def reset_backend_cache() -> None:
    global _cached_name
    _cached_name = None


def _backend_module(name: str | None = None):
    name = name or backend_name()
    if name == "numba":
        from . import numba_backend as mod
    else:
        from . import numpy_backend as mod
    return mod


def action_values(values: np.ndarray, tables: SweepTables, beta: float,
                  backend: str | None = None) -> np.ndarray:
    """Per-action one-step lookahead values on the whole grid: (A, *shape)."""
    return _backend_module(backend).action_values(values, tables, beta)


def simulate_batch(*args, backend: str | None = None) -> np.ndarray:
    """Discounted episode rewards, one float per episode."""
    return _backend_module(backend).simulate_batch(*args)
