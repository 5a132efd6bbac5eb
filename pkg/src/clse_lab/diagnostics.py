"""Numerical probes of the consistency machinery.

Everything here is a simulation-mode tool: the truth point is required (it
comes with the grid) and the quantities probed are the ones that drive
strong consistency and asymptotic normality of the windowed least-squares
estimator:

* mean-separation profile ``D_n(theta) = sum_k d_k(theta)**2`` with
  ``d_k(theta) = f_k(theta0) - f_k(theta)`` — divergence off a ball around
  the truth is the identifiability requirement;
* the weighted series ``sum_k sigma_k**2 d_k**2 / D_k**2`` whose convergence
  feeds the martingale strong law;
* the uniform ratio ``sup |L_n| / D_n`` with ``L_n = sum_k eta_k d_k``, whose
  decay is the key lemma behind consistency;
* window-comparison, nuisance-negligibility and derivative-continuity
  ratios;
* the two exact sequence lemmas used by the proofs, as checkable
  (lhs, rhs) pairs.

Suprema/infima over the parameter set are approximated on a finite grid;
the grid resolution is recorded in every report.  Ratios with vanishing
denominators are flagged ``undefined``, never silently dropped.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from . import backend, rng
from .models import ConditionalModel, Trajectory, _as_values

logger = logging.getLogger(__name__)

GRID_POINT_CAP = 33**3


@dataclass
class ThetaGrid:
    """Finite evaluation grid with a marked exclusion region.

    ``outside`` flags the points with ``||theta - theta0|| >= delta``
    (Euclidean norm) — the region over which the identifiability and
    uniform-ratio conditions take their sup/inf.
    """

    theta0: np.ndarray
    points: np.ndarray
    delta: float
    outside: np.ndarray = field(init=False)
    resolution: int | None = None

    def __post_init__(self) -> None:
        self.theta0 = np.atleast_1d(np.asarray(self.theta0, dtype=np.float64))
        self.points = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        if self.points.shape[1] != self.theta0.shape[0]:
            raise ValueError("grid points and theta0 disagree in dimension")
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        dist = np.sqrt(np.sum((self.points - self.theta0) ** 2, axis=1))
        self.outside = dist >= self.delta
        if not np.any(self.outside):
            raise ValueError("grid has no point outside the delta-ball")

    @classmethod
    def build(
        cls,
        theta0: np.ndarray,
        box: Sequence[tuple[float, float]],
        resolution: int,
        delta: float,
    ) -> "ThetaGrid":
        """Full-factorial grid over a box (capped at 33**3 points)."""
        theta0 = np.atleast_1d(np.asarray(theta0, dtype=np.float64))
        box_arr = np.atleast_2d(np.asarray(box, dtype=np.float64))
        if box_arr.shape != (theta0.shape[0], 2):
            raise ValueError("box must provide one (low, high) pair per coordinate")
        if resolution < 2:
            raise ValueError("resolution must be at least 2")
        if resolution ** theta0.shape[0] > GRID_POINT_CAP:
            raise ValueError(
                f"grid of {resolution}^{theta0.shape[0]} points exceeds "
                f"the cap of {GRID_POINT_CAP}"
            )
        axes = [
            np.linspace(box_arr[i, 0], box_arr[i, 1], resolution)
            for i in range(theta0.shape[0])
        ]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack(mesh, axis=-1).reshape(-1, theta0.shape[0])
        grid = cls(theta0=theta0, points=pts, delta=delta)
        grid.resolution = int(resolution)
        return grid

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    def metadata(self) -> dict[str, Any]:
        return {
            "n_points": int(self.n_points),
            "n_outside": int(np.count_nonzero(self.outside)),
            "delta": float(self.delta),
            "resolution": self.resolution,
            "theta0": [float(v) for v in self.theta0],
        }


def _truth_pieces(model: ConditionalModel, values: np.ndarray, grid: ThetaGrid):
    """Common per-step arrays: usable mask, mean at truth, residuals at truth."""
    prev = values[:-1]
    cur = values[1:]
    usable = model.usable(prev)
    lam = model.lam(prev)
    y = np.zeros(prev.shape[0])
    y[usable] = cur[usable] / np.sqrt(lam[usable])
    f0 = model.mean_y(prev, grid.theta0)
    eta = np.where(usable, y - f0, 0.0)
    return prev, usable, f0, eta


def _d_rows(
    model: ConditionalModel,
    prev: np.ndarray,
    usable: np.ndarray,
    f0: np.ndarray,
    thetas: np.ndarray,
) -> np.ndarray:
    """Mean-separation rows d_k(theta) = f_k(theta0) - f_k(theta), masked."""
    rows = np.empty((thetas.shape[0], prev.shape[0]), dtype=np.float64)
    for j in range(thetas.shape[0]):
        rows[j] = np.where(usable, f0 - model.mean_y(prev, thetas[j]), 0.0)
    return rows


def _check_checkpoints(checkpoints: Sequence[int], n_steps: int) -> np.ndarray:
    chk = np.asarray(checkpoints, dtype=np.int64)
    if chk.ndim != 1 or chk.shape[0] == 0:
        raise ValueError("checkpoints must be a nonempty 1-d sequence")
    if np.any(chk < 1) or np.any(chk > n_steps):
        raise ValueError(f"checkpoints must lie in 1..{n_steps}")
    if np.any(np.diff(chk) <= 0):
        raise ValueError("checkpoints must be strictly increasing")
    return chk


# ---------------------------------------------------------------------------
# identifiability profile
# ---------------------------------------------------------------------------


@dataclass
class IdentifiabilityProfile:
    """Mean-separation sums per grid point at each checkpoint."""

    checkpoints: np.ndarray
    d_n: np.ndarray  # shape (n_points, n_checkpoints)
    inf_outside: np.ndarray
    argmin_outside: np.ndarray
    grid: ThetaGrid

    def to_record(self) -> dict[str, Any]:
        return {
            "checkpoints": [int(c) for c in self.checkpoints],
            "inf_outside": [float(v) for v in self.inf_outside],
            "argmin_outside": [
                [float(v) for v in self.grid.points[j]] for j in self.argmin_outside
            ],
            "grid": self.grid.metadata(),
        }


def identifiability_profile(
    model: ConditionalModel,
    trajectory: Trajectory | np.ndarray,
    grid: ThetaGrid,
    checkpoints: Sequence[int],
) -> IdentifiabilityProfile:
    """Cumulative squared mean-separation over the grid at each checkpoint."""
    values = _as_values(trajectory)
    prev, usable, f0, _ = _truth_pieces(model, values, grid)
    chk = _check_checkpoints(checkpoints, prev.shape[0])
    rows = _d_rows(model, prev, usable, f0, grid.points)
    d_n = np.empty((grid.n_points, chk.shape[0]), dtype=np.float64)
    for j in range(grid.n_points):
        cum = backend.comp_cumsum(rows[j] ** 2)
        d_n[j] = cum[chk - 1]
    out_idx = np.flatnonzero(grid.outside)
    block = d_n[out_idx]
    arg = out_idx[np.argmin(block, axis=0)]
    return IdentifiabilityProfile(
        checkpoints=chk,
        d_n=d_n,
        inf_outside=block.min(axis=0),
        argmin_outside=arg,
        grid=grid,
    )


# ---------------------------------------------------------------------------
# condition ratios
# ---------------------------------------------------------------------------


@dataclass
class VarConditionResult:
    """Per-point weighted series values and their sup over the exclusion region."""

    per_point: np.ndarray
    sup_outside: float
    argmax_outside: np.ndarray
    n: int


def var_condition_sum(
    model: ConditionalModel,
    trajectory: Trajectory | np.ndarray,
    grid: ThetaGrid,
    n: int | None = None,
    sigma2: float | np.ndarray | None = None,
) -> VarConditionResult:
    """Partial sums of ``sigma_k**2 d_k**2 / D_k**2`` per grid point.

    Terms with ``D_k = 0`` (no separation accumulated yet, so ``d_k = 0``
    too) are defined as 0.  ``sigma2`` overrides the model's conditional
    variance at the truth (scalar or per-step array); by default the model
    supplies it.
    """
    values = _as_values(trajectory)
    prev, usable, f0, _ = _truth_pieces(model, values, grid)
    n_steps = prev.shape[0] if n is None else int(n)
    if not 1 <= n_steps <= prev.shape[0]:
        raise ValueError(f"n must lie in 1..{prev.shape[0]}")
    if sigma2 is None:
        sig = model.var_y(prev, grid.theta0)
    else:
        sig = np.broadcast_to(np.asarray(sigma2, dtype=np.float64), prev.shape).copy()
    sig = np.where(usable, sig, 0.0)[:n_steps]
    rows = _d_rows(model, prev, usable, f0, grid.points)[:, :n_steps]
    per_point = np.empty(grid.n_points, dtype=np.float64)
    for j in range(grid.n_points):
        dsq = rows[j] ** 2
        cum = backend.comp_cumsum(dsq)
        terms = np.zeros(n_steps, dtype=np.float64)
        ok = cum > 0
        terms[ok] = sig[ok] * dsq[ok] / cum[ok] ** 2
        per_point[j] = backend.comp_sum(terms)
    out_idx = np.flatnonzero(grid.outside)
    j_max = out_idx[int(np.argmax(per_point[out_idx]))]
    return VarConditionResult(
        per_point=per_point,
        sup_outside=float(per_point[j_max]),
        argmax_outside=grid.points[j_max],
        n=n_steps,
    )


@dataclass
class SupRatioSeries:
    """Per-checkpoint supremum of a ratio over the exclusion region."""

    checkpoints: np.ndarray
    sup: np.ndarray
    undefined: np.ndarray
    skipped_points: np.ndarray


def sllnsm_ratio(
    model: ConditionalModel,
    trajectory: Trajectory | np.ndarray,
    grid: ThetaGrid,
    checkpoints: Sequence[int],
) -> SupRatioSeries:
    """Supremum over the exclusion region of ``|L_n(theta)| / D_n(theta)``.

    ``L_n(theta) = sum_k eta_k d_k(theta)`` with residuals taken at the
    truth.  Grid points with ``D_n(theta) = 0`` are skipped and counted; a
    checkpoint where every point was skipped is flagged undefined.
    """
    values = _as_values(trajectory)
    prev, usable, f0, eta = _truth_pieces(model, values, grid)
    chk = _check_checkpoints(checkpoints, prev.shape[0])
    out_idx = np.flatnonzero(grid.outside)
    rows = _d_rows(model, prev, usable, f0, grid.points[out_idx])
    sup = np.zeros(chk.shape[0], dtype=np.float64)
    undefined = np.zeros(chk.shape[0], dtype=bool)
    skipped = np.zeros(chk.shape[0], dtype=np.int64)
    ratios = np.empty((rows.shape[0], chk.shape[0]), dtype=np.float64)
    for j in range(rows.shape[0]):
        d = rows[j]
        l_cum = backend.comp_cumsum(eta * d)[chk - 1]
        d_cum = backend.comp_cumsum(d * d)[chk - 1]
        with np.errstate(divide="ignore", invalid="ignore"):
            ratios[j] = np.abs(l_cum) / d_cum
        ratios[j, d_cum <= 0] = np.nan
    for i in range(chk.shape[0]):
        col = ratios[:, i]
        good = np.isfinite(col)
        skipped[i] = int(np.count_nonzero(~good))
        if not np.any(good):
            undefined[i] = True
            sup[i] = math.nan
        else:
            sup[i] = float(col[good].max())
    return SupRatioSeries(checkpoints=chk, sup=sup, undefined=undefined, skipped_points=skipped)


@dataclass
class RatioValue:
    value: float
    undefined: bool
    skipped_points: int


def rat_ratio(
    model: ConditionalModel,
    trajectory: Trajectory | np.ndarray,
    grid: ThetaGrid,
    h: int,
    n: int,
) -> RatioValue:
    """Supremum over the exclusion region of ``D_n(theta) / D_{h,n}(theta)``.

    ``D_{h,n} = D_n - D_h`` is the window tail; points where it vanishes are
    skipped and counted, and the result is undefined if none remain.
    """
    values = _as_values(trajectory)
    prev, usable, f0, _ = _truth_pieces(model, values, grid)
    if not 0 <= h < n <= prev.shape[0]:
        raise ValueError(f"need 0 <= h < n <= {prev.shape[0]}")
    out_idx = np.flatnonzero(grid.outside)
    rows = _d_rows(model, prev, usable, f0, grid.points[out_idx])
    best = -math.inf
    skipped = 0
    for j in range(rows.shape[0]):
        cum = backend.comp_cumsum(rows[j] ** 2)
        d_n = cum[n - 1]
        d_head = 0.0 if h == 0 else cum[h - 1]
        d_tail = d_n - d_head
        if d_tail <= 0:
            skipped += 1
            continue
        best = max(best, d_n / d_tail)
    if skipped == rows.shape[0]:
        return RatioValue(value=math.nan, undefined=True, skipped_points=skipped)
    return RatioValue(value=float(best), undefined=False, skipped_points=skipped)


@dataclass
class StepRatioSeries:
    """Per-step ratio sequence with vanishing-denominator flags."""

    ratios: np.ndarray
    flagged: np.ndarray


def an_ratio(
    model: ConditionalModel,
    trajectory: Trajectory | np.ndarray,
    grid: ThetaGrid,
    n: int | None = None,
) -> StepRatioSeries:
    """Per-step negligibility ratio of the frozen-nuisance mean part.

    At each step ``k``, ``sup |d_k2(theta)| / inf |d_k1(theta)|`` over the
    exclusion region, where the model's mean splits into an own-parameter
    part (``d_k1`` rows) and a frozen-nuisance part (``d_k2`` rows).  Steps
    with a vanishing infimum and nonvanishing supremum are flagged; a
    vanishing supremum yields ratio 0.
    """
    if not getattr(model, "fixed", None):
        raise ValueError(
            f"model {model.model_id!r} declares no own/nuisance mean split"
        )
    values = _as_values(trajectory)
    prev = values[:-1]
    usable = model.usable(prev)
    n_steps = prev.shape[0] if n is None else int(n)
    if not 1 <= n_steps <= prev.shape[0]:
        raise ValueError(f"n must lie in 1..{prev.shape[0]}")
    f0_own, f0_frozen = model.mean_y_parts(prev, grid.theta0)
    out_pts = grid.points[grid.outside]
    sup2 = np.zeros(n_steps, dtype=np.float64)
    inf1 = np.full(n_steps, math.inf, dtype=np.float64)
    for j in range(out_pts.shape[0]):
        own, frozen = model.mean_y_parts(prev, out_pts[j])
        d1 = np.where(usable, f0_own - own, 0.0)[:n_steps]
        d2 = np.where(usable, f0_frozen - frozen, 0.0)[:n_steps]
        sup2 = np.maximum(sup2, np.abs(d2))
        inf1 = np.minimum(inf1, np.abs(d1))
    ratios = np.zeros(n_steps, dtype=np.float64)
    flagged = np.zeros(n_steps, dtype=bool)
    zero_inf = inf1 <= 0
    pos = ~zero_inf
    ratios[pos] = sup2[pos] / inf1[pos]
    bad = zero_inf & (sup2 > 0)
    ratios[bad] = math.nan
    flagged[bad] = True
    return StepRatioSeries(ratios=ratios, flagged=flagged)


def unc_ratio(
    model: ConditionalModel,
    trajectory: Trajectory | np.ndarray,
    theta_near: np.ndarray,
    theta0: np.ndarray,
    n: int | None = None,
) -> float:
    """Uniform relative change of the mean gradient between two points.

    ``max over steps k and coordinates i`` of
    ``|f'_{k,i}(theta_near) / f'_{k,i}(theta0) - 1|``, skipping entries with
    a vanishing denominator.  Raises if every denominator vanishes.
    """
    values = _as_values(trajectory)
    prev = values[:-1]
    usable = model.usable(prev)
    n_steps = prev.shape[0] if n is None else int(n)
    if not 1 <= n_steps <= prev.shape[0]:
        raise ValueError(f"n must lie in 1..{prev.shape[0]}")
    theta_near = model.validate_theta(theta_near)
    theta0 = model.validate_theta(theta0)
    g_near = model.dmean_y(prev, theta_near)[:n_steps]
    g_zero = model.dmean_y(prev, theta0)[:n_steps]
    mask = usable[:n_steps, None] & (g_zero != 0.0)
    if not np.any(mask):
        raise ValueError("every gradient denominator vanishes on the window")
    rel = np.abs(g_near[mask] / g_zero[mask] - 1.0)
    return float(rel.max())


# ---------------------------------------------------------------------------
# exact sequence lemmas
# ---------------------------------------------------------------------------


def lemma_a2_bound(a: np.ndarray) -> tuple[float, float]:
    """Exact bound for the weighted reciprocal-square series.

    For ``a_k >= 0`` with ``a_1 > 0`` and partial sums ``S_k``, returns
    ``(sum_k a_k / S_k**2, 2/a_1 - 1/S_n)``; the first never exceeds the
    second.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 1 or a.shape[0] == 0:
        raise ValueError("a must be a nonempty 1-d sequence")
    if np.any(a < 0):
        raise ValueError("a must be nonnegative")
    if not a[0] > 0:
        raise ValueError("a_1 must be positive")
    s = backend.comp_cumsum(a)
    lhs = backend.comp_sum(a / s**2)
    rhs = 2.0 / a[0] - 1.0 / s[-1]
    return float(lhs), float(rhs)


def lemma_a3_identity(s: np.ndarray, d: np.ndarray) -> tuple[float, float]:
    """Summation-by-parts identity relating increments of ``S`` and ``D``.

    ``S`` has length n+1 with ``S[0] = 0``; ``d`` has length n and
    ``D_k = sum_{l<=k} d_l**2``.  Returns
    ``(sum_k (S_{k+1}-S_k) D_k, sum_k (S_{n+1}-S_k) d_k**2)``.
    """
    s = np.asarray(s, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    if s.ndim != 1 or d.ndim != 1 or s.shape[0] != d.shape[0] + 1:
        raise ValueError("need len(s) = len(d) + 1")
    if s[0] != 0.0:
        raise ValueError("the sequence must start at S_1 = 0")
    dsq = d * d
    d_cum = backend.comp_cumsum(dsq)
    lhs = backend.comp_sum(np.diff(s) * d_cum)
    rhs = backend.comp_sum((s[-1] - s[:-1]) * dsq)
    return float(lhs), float(rhs)


# ---------------------------------------------------------------------------
# objective decomposition (exact split of the objective difference)
# ---------------------------------------------------------------------------


def objective_decomposition(
    model: ConditionalModel,
    trajectory: Trajectory | np.ndarray,
    theta: np.ndarray,
    theta0: np.ndarray,
    window: tuple[int, int] | None = None,
) -> dict[str, float]:
    """Split the objective difference into separation and cross terms.

    Returns the pieces of
    ``S(theta) - S(theta0) = D(theta) + 2 L(theta)`` over the window, where
    ``D = sum d_k**2``, ``L = sum eta_k d_k``, ``d_k = f_k(theta0) - f_k(theta)``
    and ``eta_k`` are the truth residuals.  The identity is exact up to
    rounding; tests hold it to 1e-10 relative.
    """
    values = _as_values(trajectory)
    last = values.shape[0] - 1
    if window is None:
        window = (0, last)
    h, n = int(window[0]), int(window[1])
    if not (0 <= h < n <= last):
        raise ValueError(f"window (h={h}, n={n}) must satisfy 0 <= h < n <= {last}")
    theta = model.validate_theta(theta)
    theta0 = model.validate_theta(theta0)
    prev = values[h:n]
    cur = values[h + 1 : n + 1]
    usable = model.usable(prev)
    lam = model.lam(prev)
    y = np.zeros(prev.shape[0])
    y[usable] = cur[usable] / np.sqrt(lam[usable])
    f0 = model.mean_y(prev, theta0)
    f1 = model.mean_y(prev, theta)
    eta = np.where(usable, y - f0, 0.0)
    d = np.where(usable, f0 - f1, 0.0)
    s_theta = backend.comp_sum(np.where(usable, (y - f1) ** 2, 0.0))
    s_theta0 = backend.comp_sum(np.where(usable, eta**2, 0.0))
    d_sum = backend.comp_sum(d * d)
    l_sum = backend.comp_sum(eta * d)
    return {
        "s_theta": float(s_theta),
        "s_theta0": float(s_theta0),
        "d_n": float(d_sum),
        "l_n": float(l_sum),
        "lhs": float(s_theta - s_theta0),
        "rhs": float(d_sum + 2.0 * l_sum),
    }


# ---------------------------------------------------------------------------
# rescaled supercritical probe (arbitrary horizons without overflow)
# ---------------------------------------------------------------------------


@dataclass
class SupRatioProbe:
    """Uniform-ratio probe of a geometrically growing two-point population.

    Populations at the probed horizons are astronomically large, so the
    probe tracks the rescaled limit variable ``W_k = N_k m**(-k)`` instead
    of ``N_k``: offspring draws are exact binomials while the population
    fits comfortably in integers, and switch to their Gaussian increment
    (relative error O(N^{-1/2}) ~ 1e-5 at the switch) afterwards.  For this
    family the supremum over the exclusion region has the closed form
    ``|sum_k eta_k sqrt(N_{k-1})| / (delta_eff * sum_k N_{k-1})`` with
    ``delta_eff`` the smallest excluded distance, which the probe
    accumulates in rescaled coordinates.
    """

    checkpoints: np.ndarray
    ratios: np.ndarray
    delta_eff: float
    switched_at: int | None


def bgw_sllnsm_probe(
    p0: float,
    n0: int,
    checkpoints: Sequence[int],
    delta_eff: float,
    seed: int,
    exact_threshold: int = 2**31,
) -> SupRatioProbe:
    """Run the rescaled uniform-ratio probe to arbitrary horizons.

    While the population is below ``exact_threshold`` the offspring noise is
    the exact centered binomial; beyond it the increments follow the
    matching Gaussian law.  With the same seed the exact phase reproduces
    the standard simulator draw for draw.
    """
    if not 0.0 < p0 <= 1.0:
        raise ValueError("p0 must lie in (0, 1]")
    if n0 < 1:
        raise ValueError("n0 must be at least 1")
    if not delta_eff > 0:
        raise ValueError("delta_eff must be positive")
    chk = np.asarray(sorted(set(int(c) for c in checkpoints)), dtype=np.int64)
    if np.any(chk < 1):
        raise ValueError("checkpoints must be >= 1")
    m0 = 1.0 + p0
    sigma0 = math.sqrt(p0 * (1.0 - p0))
    inv_m0 = 1.0 / m0
    inv_sqrt_m0 = 1.0 / math.sqrt(m0)
    gen = rng.generator(seed)

    a = 0.0  # A_n * m0**(-(n-1)/2),  A_n = sum eta_k sqrt(N_{k-1})
    b = 0.0  # B_n * m0**(-(n-1)),    B_n = sum N_{k-1}
    pop = int(n0)
    w = float(n0)
    exact = True
    switched_at: int | None = None
    pow_neg = 1.0  # m0**(-(k-1))
    pow_half = inv_m0  # m0**(-(k+1)/2)
    pow_ratio = 1.0  # m0**(-(k-1)/2)
    ratios = np.empty(chk.shape[0], dtype=np.float64)
    pos = 0
    for k in range(1, int(chk[-1]) + 1):
        if exact:
            w_prev = pop * pow_neg
            new_pop = pop + int(gen.binomial(pop, p0))
            eta = (new_pop - m0 * pop) / math.sqrt(pop)
            a = a * inv_sqrt_m0 + eta * math.sqrt(w_prev)
            b = b * inv_m0 + w_prev
            pop = new_pop
            if pop > exact_threshold:
                exact = False
                switched_at = k
                w = pop * pow_neg * inv_m0
        else:
            w_prev = w
            eta = sigma0 * gen.standard_normal()
            sw = math.sqrt(w_prev)
            a = a * inv_sqrt_m0 + eta * sw
            b = b * inv_m0 + w_prev
            w = w_prev + eta * sw * pow_half
        if pos < chk.shape[0] and k == chk[pos]:
            ratios[pos] = abs(a) / (delta_eff * b) * pow_ratio
            pos += 1
        pow_neg *= inv_m0
        pow_half *= inv_sqrt_m0
        pow_ratio *= inv_sqrt_m0
    return SupRatioProbe(
        checkpoints=chk, ratios=ratios, delta_eff=float(delta_eff), switched_at=switched_at
    )


@dataclass
class VarianceProbe:
    """Residual-variance estimate of a geometrically growing population.

    Same rescaled recursion as `bgw_sllnsm_probe`; the refit identity

        sigma2_hat = (sum eta_k**2 - A_n**2 / B_n) / n

    (with ``A_n = sum eta_k sqrt(N_{k-1})``, ``B_n = sum N_{k-1}``) lets the
    plug-in residual variance be accumulated entirely in rescaled
    coordinates — the rescaling factors of ``A**2`` and ``B`` cancel exactly
    — so horizons far beyond the integer-count domain remain reachable.
    """

    sigma2_hat: float
    m_hat: float
    n: int
    switched_at: int | None


def bgw_variance_probe(
    p0: float,
    n0: int,
    n: int,
    seed: int,
    exact_threshold: int = 2**31,
) -> VarianceProbe:
    """Growth-ratio refit and residual variance along one rescaled path.

    Returns the closed-form ratio estimate of the offspring mean together
    with the mean squared refit residual on the normalized scale, equal (in
    exact arithmetic) to fitting the simulated path directly.  The offspring
    draws are exact binomials below ``exact_threshold`` — draw for draw the
    standard simulator stream — and Gaussian increments beyond it.
    """
    if not 0.0 < p0 <= 1.0:
        raise ValueError("p0 must lie in (0, 1]")
    if n0 < 1:
        raise ValueError("n0 must be at least 1")
    if n < 1:
        raise ValueError("n must be at least 1")
    m0 = 1.0 + p0
    sigma0 = math.sqrt(p0 * (1.0 - p0))
    inv_m0 = 1.0 / m0
    inv_sqrt_m0 = 1.0 / math.sqrt(m0)
    gen = rng.generator(seed)

    a = 0.0  # A_k * m0**(-(k-1)/2)
    b = 0.0  # B_k * m0**(-(k-1))
    eta_sq = np.empty(n, dtype=np.float64)
    pop = int(n0)
    w = float(n0)
    exact = True
    switched_at: int | None = None
    pow_neg = 1.0
    pow_half = inv_m0
    pow_ratio = 1.0  # m0**(-(k-1)/2)
    m_hat = m0
    for k in range(1, n + 1):
        if exact:
            w_prev = pop * pow_neg
            new_pop = pop + int(gen.binomial(pop, p0))
            eta = (new_pop - m0 * pop) / math.sqrt(pop)
            a = a * inv_sqrt_m0 + eta * math.sqrt(w_prev)
            b = b * inv_m0 + w_prev
            pop = new_pop
            if pop > exact_threshold:
                exact = False
                switched_at = k
                w = pop * pow_neg * inv_m0
        else:
            w_prev = w
            eta = sigma0 * gen.standard_normal()
            sw = math.sqrt(w_prev)
            a = a * inv_sqrt_m0 + eta * sw
            b = b * inv_m0 + w_prev
            w = w_prev + eta * sw * pow_half
        eta_sq[k - 1] = eta * eta
        if k == n:
            m_hat = m0 + (a / b) * pow_ratio
        pow_neg *= inv_m0
        pow_half *= inv_sqrt_m0
        pow_ratio *= inv_sqrt_m0
    sigma2 = (backend.comp_sum(eta_sq) - a * a / b) / n
    return VarianceProbe(
        sigma2_hat=float(sigma2),
        m_hat=float(m_hat),
        n=int(n),
        switched_at=switched_at,
    )


# ---------------------------------------------------------------------------
# composite report
# ---------------------------------------------------------------------------


@dataclass
class DiagnosticsReport:
    """Checkpointed bundle of every condition probe, JSON-serializable."""

    checkpoints: np.ndarray
    inf_d: np.ndarray
    var_sup: np.ndarray
    sllnsm_sup: np.ndarray
    sllnsm_undefined: np.ndarray
    rat: np.ndarray
    rat_undefined: np.ndarray
    an_last: np.ndarray | None
    unc: float | None
    grid_meta: dict[str, Any]

    def to_record(self) -> dict[str, Any]:
        def _clean(arr: np.ndarray) -> list:
            return [None if (isinstance(v, float) and math.isnan(v)) else float(v) for v in arr]

        rec: dict[str, Any] = {
            "checkpoints": [int(c) for c in self.checkpoints],
            "inf_d_outside": _clean(self.inf_d),
            "var_sum_sup": _clean(self.var_sup),
            "sllnsm_sup": _clean(self.sllnsm_sup),
            "sllnsm_undefined": [bool(v) for v in self.sllnsm_undefined],
            "rat_sup": _clean(self.rat),
            "rat_undefined": [bool(v) for v in self.rat_undefined],
            "grid": self.grid_meta,
        }
        rec["an_ratio_at_checkpoint"] = None if self.an_last is None else _clean(self.an_last)
        rec["unc_ratio"] = None if self.unc is None else float(self.unc)
        return rec


def diagnostics_report(
    model: ConditionalModel,
    trajectory: Trajectory | np.ndarray,
    grid: ThetaGrid,
    checkpoints: Sequence[int],
    theta_near: np.ndarray | None = None,
) -> DiagnosticsReport:
    """Evaluate every condition probe at the given checkpoints.

    The window-comparison ratio uses ``h = n // 2`` at each checkpoint; the
    nuisance-negligibility sequence is included when the model declares a
    frozen split, and the gradient-continuity ratio when ``theta_near`` is
    supplied.
    """
    values = _as_values(trajectory)
    chk = _check_checkpoints(checkpoints, values.shape[0] - 1)
    ident = identifiability_profile(model, values, grid, chk)
    sllnsm = sllnsm_ratio(model, values, grid, chk)
    var_sup = np.array(
        [var_condition_sum(model, values, grid, n=int(c)).sup_outside for c in chk]
    )
    rat_vals = np.empty(chk.shape[0])
    rat_undef = np.zeros(chk.shape[0], dtype=bool)
    for i, c in enumerate(chk):
        r = rat_ratio(model, values, grid, h=int(c) // 2, n=int(c))
        rat_vals[i] = r.value
        rat_undef[i] = r.undefined
    an_last = None
    if getattr(model, "fixed", None):
        seq = an_ratio(model, values, grid, n=int(chk[-1]))
        an_last = seq.ratios[chk - 1]
    unc = None
    if theta_near is not None:
        unc = unc_ratio(model, values, theta_near, grid.theta0, n=int(chk[-1]))
    return DiagnosticsReport(
        checkpoints=chk,
        inf_d=ident.inf_outside,
        var_sup=var_sup,
        sllnsm_sup=sllnsm.sup,
        sllnsm_undefined=sllnsm.undefined,
        rat=rat_vals,
        rat_undefined=rat_undef,
        an_last=an_last,
        unc=unc,
        grid_meta=grid.metadata(),
    )
