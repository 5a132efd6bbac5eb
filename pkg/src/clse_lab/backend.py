"""Backend selection for the hot kernels.

Two interchangeable kernel sets exist: numba-compiled loops
(:mod:`clse_lab._kernels_numba`) and vectorized numpy fallbacks
(:mod:`clse_lab._kernels_numpy`).  The active set is chosen by the
``CLSE_LAB_BACKEND`` environment variable:

``auto`` (default)
    numba when importable, numpy otherwise.
``numba``
    force the compiled kernels; raises if numba is unavailable.
``numpy``
    force the pure-numpy fallbacks.

`set_backend` overrides the choice at runtime (used by the benchmark and the
equivalence tests).  All public kernel entry points dispatch through the
active set, so callers never import a kernel module directly.
"""
from __future__ import annotations

import os
from types import ModuleType

import numpy as np

from . import _kernels_numpy

try:
    from . import _kernels_numba

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - exercised only without numba
    _kernels_numba = None
    NUMBA_AVAILABLE = False

_VALID = ("auto", "numba", "numpy")
_active_name: str | None = None


def _resolve(name: str) -> str:
    if name not in _VALID:
        raise ValueError(f"unknown backend {name!r}; expected one of {_VALID}")
    if name == "auto":
        return "numba" if NUMBA_AVAILABLE else "numpy"
    if name == "numba" and not NUMBA_AVAILABLE:
        raise RuntimeError("numba backend requested but numba is not importable")
    return name


def set_backend(name: str) -> str:
    """Select the kernel set by name; returns the resolved backend."""
    global _active_name
    _active_name = _resolve(name)
    return _active_name


def active_backend() -> str:
    """Name of the kernel set currently in use (``numba`` or ``numpy``)."""
    global _active_name
    if _active_name is None:
        _active_name = _resolve(os.environ.get("CLSE_LAB_BACKEND", "auto").lower())
    return _active_name


def _impl() -> ModuleType:
    return _kernels_numba if active_backend() == "numba" else _kernels_numpy


def comp_sum(x: np.ndarray) -> float:
    """Compensated sum of a float64 array."""
    return _impl().comp_sum(np.ascontiguousarray(x, dtype=np.float64))


def comp_cumsum(x: np.ndarray) -> np.ndarray:
    """Compensated running sums of a float64 array."""
    return _impl().comp_cumsum(np.ascontiguousarray(x, dtype=np.float64))


def sse_bgw(values: np.ndarray, m: float, lo: int, hi: int) -> tuple[float, int]:
    return _impl().sse_bgw(values, float(m), int(lo), int(hi))


def sse_pcr(
    values: np.ndarray,
    k_cap: float,
    s_alpha: float,
    alpha: float,
    s_sat: float,
    lo: int,
    hi: int,
) -> tuple[float, int]:
    return _impl().sse_pcr(
        values, float(k_cap), float(s_alpha), float(alpha), float(s_sat), int(lo), int(hi)
    )


def sse_pcr_m2(
    values: np.ndarray,
    k_cap: float,
    c_rate: float,
    s_thresh: float,
    lo: int,
    hi: int,
) -> tuple[float, int]:
    return _impl().sse_pcr_m2(
        values, float(k_cap), float(c_rate), float(s_thresh), int(lo), int(hi)
    )


def sse_arch(
    values: np.ndarray, a0: float, a1: float, lo: int, hi: int
) -> tuple[float, int]:
    return _impl().sse_arch(values, float(a0), float(a1), int(lo), int(hi))
