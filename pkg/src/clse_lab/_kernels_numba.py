"""Numba-compiled twins of the hot kernels.

Importing this module requires numba; :mod:`clse_lab.backend` degrades to the
numpy bodies when the import fails.  Semantics are documented once in
:mod:`clse_lab._kernels_numpy`.  All accumulators use Neumaier compensation
so the two backends agree to near machine precision.
"""
from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def _neumaier_add(total: float, comp: float, v: float) -> tuple[float, float]:
    t = total + v
    if abs(total) >= abs(v):
        comp += (total - t) + v
    else:
        comp += (v - t) + total
    return t, comp


@njit(cache=True)
def comp_sum(x: np.ndarray) -> float:
    total = 0.0
    comp = 0.0
    for i in range(x.shape[0]):
        total, comp = _neumaier_add(total, comp, x[i])
    return total + comp


@njit(cache=True)
def comp_cumsum(x: np.ndarray) -> np.ndarray:
    out = np.empty(x.shape[0], dtype=np.float64)
    total = 0.0
    comp = 0.0
    for i in range(x.shape[0]):
        total, comp = _neumaier_add(total, comp, x[i])
        out[i] = total + comp
    return out


@njit(cache=True)
def sse_bgw(values: np.ndarray, m: float, lo: int, hi: int) -> tuple[float, int]:
    total = 0.0
    comp = 0.0
    excluded = 0
    for k in range(lo + 1, hi + 1):
        prev = values[k - 1]
        if prev <= 0.0:
            excluded += 1
            continue
        resid = values[k] - m * prev
        total, comp = _neumaier_add(total, comp, resid * resid / prev)
    return total + comp, excluded


@njit(cache=True)
def sse_pcr(
    values: np.ndarray,
    k_cap: float,
    s_alpha: float,
    alpha: float,
    s_sat: float,
    lo: int,
    hi: int,
) -> tuple[float, int]:
    total = 0.0
    comp = 0.0
    for k in range(lo + 1, hi + 1):
        prev = values[k - 1]
        if prev > 0.0:
            ns = prev if prev > s_sat else s_sat
            p = k_cap / (k_cap + ns) * (1.0 + s_alpha * ns ** (-alpha)) * 0.5
            f = (1.0 + p) * prev
        else:
            f = 0.0
        resid = values[k] - f
        total, comp = _neumaier_add(total, comp, resid * resid)
    return total + comp, 0


@njit(cache=True)
def sse_pcr_m2(
    values: np.ndarray,
    k_cap: float,
    c_rate: float,
    s_thresh: float,
    lo: int,
    hi: int,
) -> tuple[float, int]:
    total = 0.0
    comp = 0.0
    for k in range(lo + 1, hi + 1):
        prev = values[k - 1]
        if prev > 0.0:
            ns = prev if prev > s_thresh else s_thresh
            eterm = np.exp(-c_rate * (ns / s_thresh - 1.0))
            p = k_cap / (k_cap + ns) * (1.0 + eterm) * 0.5
            f = (1.0 + p) * prev
        else:
            f = 0.0
        resid = values[k] - f
        total, comp = _neumaier_add(total, comp, resid * resid)
    return total + comp, 0


@njit(cache=True)
def sse_arch(
    values: np.ndarray, a0: float, a1: float, lo: int, hi: int
) -> tuple[float, int]:
    total = 0.0
    comp = 0.0
    for k in range(lo + 1, hi + 1):
        resid = values[k] - (a0 + a1 * values[k - 1])
        total, comp = _neumaier_add(total, comp, resid * resid)
    return total + comp, 0
