"""Pure-numpy reference implementations of the hot kernels.

These are the fallback bodies behind :mod:`clse_lab.backend`.  Each function
has a numba twin in :mod:`clse_lab._kernels_numba` with identical semantics;
the two are held to agreement by the backend test suite.

Conventions shared by both backends:

* ``values`` is the raw trajectory ``Z_0, ..., Z_N`` as float64.
* A window ``(lo, hi)`` selects the terms ``k = lo+1, ..., hi``; term ``k``
  pairs ``values[k-1]`` (the conditioning state) with ``values[k]``.
* Sum-of-squares objectives return ``(sse, excluded)`` where ``excluded``
  counts window steps skipped because the conditioning state makes the
  normalized observation undefined.
"""
from __future__ import annotations

import math

import numpy as np

_LONGDOUBLE_OK = np.finfo(np.longdouble).eps < 1e-18


def comp_sum(x: np.ndarray) -> float:
    """Compensated sum of a 1-d float array (exact up to one final rounding)."""
    return math.fsum(x.tolist())


def comp_cumsum(x: np.ndarray) -> np.ndarray:
    """Running sums of ``x`` with extended-precision accumulation."""
    x = np.asarray(x, dtype=np.float64)
    if _LONGDOUBLE_OK:
        return np.cumsum(x, dtype=np.longdouble).astype(np.float64)
    out = np.empty(x.shape[0], dtype=np.float64)
    total = 0.0
    comp = 0.0
    for i in range(x.shape[0]):
        v = x[i]
        t = total + v
        if abs(total) >= abs(v):
            comp += (total - t) + v
        else:
            comp += (v - t) + total
        total = t
        out[i] = total + comp
    return out


def sse_bgw(values: np.ndarray, m: float, lo: int, hi: int) -> tuple[float, int]:
    """Windowed squared-residual objective for the branching mean model.

    Observation scale: ``Y_k = Z_k / sqrt(Z_{k-1})`` against mean
    ``m * sqrt(Z_{k-1})``.  Steps with ``Z_{k-1} <= 0`` are excluded.
    """
    prev = values[lo:hi]
    cur = values[lo + 1 : hi + 1]
    ok = prev > 0.0
    resid = cur[ok] - m * prev[ok]
    terms = (resid * resid) / prev[ok]
    return float(np.sum(terms)), int(prev.shape[0] - np.count_nonzero(ok))


def sse_pcr(
    values: np.ndarray,
    k_cap: float,
    s_alpha: float,
    alpha: float,
    s_sat: float,
    lo: int,
    hi: int,
) -> tuple[float, int]:
    """Windowed squared-residual objective for the saturating amplification model.

    Success probability at state ``N``:
    ``p = K / (K + Ns) * (1 + s_alpha * Ns**(-alpha)) / 2`` with
    ``Ns = max(N, s_sat)``; conditional mean ``(1 + p) * N``.  The plain
    hyperbolic model is the special case ``s_alpha = 1, alpha = 0``.
    """
    prev = values[lo:hi]
    cur = values[lo + 1 : hi + 1]
    pos = prev > 0.0
    ns = np.maximum(prev, s_sat)
    f = np.zeros_like(prev)
    if np.any(pos):
        nsp = ns[pos]
        p = k_cap / (k_cap + nsp) * (1.0 + s_alpha * nsp ** (-alpha)) * 0.5
        f[pos] = (1.0 + p) * prev[pos]
    resid = cur - f
    return float(np.sum(resid * resid)), 0


def sse_pcr_m2(
    values: np.ndarray,
    k_cap: float,
    c_rate: float,
    s_thresh: float,
    lo: int,
    hi: int,
) -> tuple[float, int]:
    """Windowed squared-residual objective for the exponential-onset model.

    ``p = K / (K + Ns) * (1 + exp(-C * (Ns / S - 1))) / 2`` with
    ``Ns = max(N, S)``; below threshold the exponential factor is 1 and
    ``p`` reduces to ``K / (K + S)``.
    """
    prev = values[lo:hi]
    cur = values[lo + 1 : hi + 1]
    pos = prev > 0.0
    ns = np.maximum(prev, s_thresh)
    f = np.zeros_like(prev)
    if np.any(pos):
        nsp = ns[pos]
        eterm = np.exp(-c_rate * (nsp / s_thresh - 1.0))
        p = k_cap / (k_cap + nsp) * (1.0 + eterm) * 0.5
        f[pos] = (1.0 + p) * prev[pos]
    resid = cur - f
    return float(np.sum(resid * resid)), 0


def sse_arch(
    values: np.ndarray, a0: float, a1: float, lo: int, hi: int
) -> tuple[float, int]:
    """Windowed squared-residual objective for the squared-volatility recursion.

    ``Z_k`` regresses on mean ``a0 + a1 * Z_{k-1}``; every step is usable.
    """
    prev = values[lo:hi]
    cur = values[lo + 1 : hi + 1]
    resid = cur - (a0 + a1 * prev)
    return float(np.sum(resid * resid)), 0
