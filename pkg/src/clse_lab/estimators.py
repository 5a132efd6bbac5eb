"""Windowed least-squares and quasi-likelihood estimation.

The core estimator minimizes the windowed sum of squared normalized
residuals

    S_{h,n}(theta) = sum_{k=h+1}^{n} (Y_k - f_k(theta))**2

over a box by a deterministic two-phase search: a full-factorial grid
prescan followed by simplex refinement from the best grid points.  The
quasi-likelihood estimator instead drives the score

    Q(theta) = sum_k (Z_k - g_k(theta)) * g_k'(theta) / b_k(theta)

to zero, with ``b_k`` either the conditional variance (efficient weighting)
or the normalization weight ``lam_k`` (which reproduces the least-squares
stationarity condition).  Both searches are deterministic given their
configuration; no randomness enters estimation.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Any, Mapping, Sequence

import numpy as np
from scipy.optimize import minimize

from . import backend
from .models import (
    AmplificationPowerDecay,
    ConditionalModel,
    Trajectory,
    _as_values,
)

logger = logging.getLogger(__name__)

GRID_POINT_CAP = 33**3


@dataclass(frozen=True)
class OptimizerConfig:
    """Deterministic search settings shared by all estimators.

    Attributes
    ----------
    grid_resolution : int
        Grid points per coordinate in the prescan (>= 3).  The full grid is
        capped at ``33**3`` points.
    n_starts : int
        Number of best grid points promoted to simplex starts.
    refine : bool
        Run Nelder-Mead refinement from each start (grid-only when False).
    rel_obj_tol : float
        Relative objective tolerance for simplex termination.
    param_tol : float
        Simplex spread tolerance on the parameters.
    max_iter : int
        Iteration/evaluation budget per simplex start.
    newton_polish : bool
        For the score estimator only: finish with a damped Newton pass on
        the score vector.
    qle_weighting : str
        ``"variance"`` (efficient) or ``"lambda"`` (least-squares weights).
    """

    grid_resolution: int = 33
    n_starts: int = 5
    refine: bool = True
    rel_obj_tol: float = 1e-12
    param_tol: float = 1e-9
    max_iter: int = 10_000
    newton_polish: bool = True
    qle_weighting: str = "variance"

    def __post_init__(self) -> None:
        if self.grid_resolution < 3:
            raise ValueError("grid_resolution must be at least 3")
        if self.n_starts < 1:
            raise ValueError("n_starts must be at least 1")
        if self.qle_weighting not in ("variance", "lambda"):
            raise ValueError("qle_weighting must be 'variance' or 'lambda'")


@dataclass
class EstimationResult:
    """Outcome of one estimation call."""

    theta_hat: np.ndarray
    objective: float
    window: tuple[int, int]
    nuisance: dict[str, float] | None
    converged: bool
    starts_evaluated: int
    best_start_index: int
    excluded_steps: int
    message: str = ""

    def to_record(self) -> dict[str, Any]:
        """JSON-ready record of the estimate."""
        return {
            "theta_hat": [float(v) for v in np.atleast_1d(self.theta_hat)],
            "objective": float(self.objective),
            "window": [int(self.window[0]), int(self.window[1])],
            "nuisance": None
            if self.nuisance is None
            else {k: float(v) for k, v in sorted(self.nuisance.items())},
            "converged": bool(self.converged),
            "excluded_steps": int(self.excluded_steps),
            "starts_evaluated": int(self.starts_evaluated),
            "best_start_index": int(self.best_start_index),
            "message": self.message,
        }


@dataclass
class VarianceEstimate:
    """Plug-in estimate of the normalized one-step variance level."""

    sigma2: float
    n_used: int
    window: tuple[int, int]


@dataclass
class TwoStageResult:
    """Pilot-window fit plus full-window refit with frozen decay nuisances."""

    stage1: EstimationResult | None
    stage2: EstimationResult
    nuisance: dict[str, float]
    mode: str


def _resolve_window(values: np.ndarray, window: tuple[int, int] | None) -> tuple[int, int]:
    last = values.shape[0] - 1
    if window is None:
        window = (0, last)
    h, n = int(window[0]), int(window[1])
    if not (0 <= h < n <= last):
        raise ValueError(
            f"window (h={h}, n={n}) must satisfy 0 <= h < n <= {last}"
        )
    return h, n


def _validate_box(box: Sequence[tuple[float, float]], dim: int) -> np.ndarray:
    arr = np.asarray(box, dtype=np.float64)
    if arr.ndim == 1 and arr.shape[0] == 2 and dim == 1:
        arr = arr[None, :]
    if arr.shape != (dim, 2):
        raise ValueError(f"box must contain {dim} (low, high) pair(s)")
    if not np.all(arr[:, 0] < arr[:, 1]):
        raise ValueError("box bounds must satisfy low < high in every coordinate")
    return arr


def _grid_points(box: np.ndarray, resolution: int) -> np.ndarray:
    dim = box.shape[0]
    if resolution**dim > GRID_POINT_CAP:
        raise ValueError(
            f"grid of {resolution}^{dim} points exceeds the cap of {GRID_POINT_CAP}; "
            "lower grid_resolution"
        )
    axes = [np.linspace(box[i, 0], box[i, 1], resolution) for i in range(dim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack(mesh, axis=-1).reshape(-1, dim)


def _lexicographic_order(thetas: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Sort by objective value, breaking ties lexicographically in theta."""
    keys = tuple(thetas[:, j] for j in range(thetas.shape[1] - 1, -1, -1)) + (values,)
    return np.lexsort(keys)


def _minimize_multistart(fun, box: np.ndarray, config: OptimizerConfig):
    """Grid prescan + simplex refinement; returns the winning candidate.

    The returned objective never exceeds any grid-start value: grid points
    themselves stay in the candidate set.
    """
    grid = _grid_points(box, config.grid_resolution)
    grid_vals = np.array([fun(grid[i]) for i in range(grid.shape[0])])
    order = _lexicographic_order(grid, grid_vals)
    n_starts = min(config.n_starts, grid.shape[0])
    starts = order[:n_starts]

    lo = box[:, 0]
    hi = box[:, 1]

    def penalized(t: np.ndarray) -> float:
        # multiplicative out-of-box penalty: scaling the objective by a
        # positive constant rescales every penalized value by the same
        # constant, so the search path is invariant under weight rescaling
        tc = np.clip(t, lo, hi)
        base = fun(tc)
        excess = t - tc
        d2 = float(np.dot(excess, excess))
        if d2 > 0.0:
            base = base * (1.0 + 1e3 * d2) if base > 0.0 else d2
        return base

    candidates: list[tuple[np.ndarray, float, bool, int]] = []
    for rank, idx in enumerate(starts):
        x0 = grid[idx]
        candidates.append((x0.copy(), float(grid_vals[idx]), True, rank))
        if not config.refine:
            continue
        # purely relative f-tolerance: rescaling the objective by a positive
        # constant rescales fatol identically, keeping the search path (and
        # hence the arg min) invariant under weight rescaling
        fatol = config.rel_obj_tol * abs(float(grid_vals[idx]))
        res = minimize(
            penalized,
            x0,
            method="Nelder-Mead",
            options={
                "xatol": config.param_tol,
                "fatol": fatol,
                "maxiter": config.max_iter,
                "maxfev": config.max_iter,
            },
        )
        xc = np.clip(res.x, lo, hi)
        candidates.append((xc, float(fun(xc)), bool(res.success), rank))

    thetas = np.array([c[0] for c in candidates])
    values = np.array([c[1] for c in candidates])
    best = _lexicographic_order(thetas, values)[0]
    theta_best, val_best, success_best, start_rank = candidates[best]
    return theta_best, val_best, success_best, n_starts, start_rank


def _model_nuisance(model: ConditionalModel) -> dict[str, float] | None:
    fixed = getattr(model, "fixed", None)
    if not fixed:
        return None
    return {k: float(v) for k, v in fixed.items()}


def _require_usable_steps(model: ConditionalModel, values: np.ndarray, h: int, n: int) -> None:
    if not bool(np.any(model.usable(values[h:n]))):
        raise ValueError("no usable steps in window; objective undefined")


def clse(
    trajectory: Trajectory | np.ndarray,
    model: ConditionalModel,
    box: Sequence[tuple[float, float]],
    window: tuple[int, int] | None = None,
    config: OptimizerConfig | None = None,
) -> EstimationResult:
    """Windowed conditional least squares over a box.

    Parameters
    ----------
    trajectory : Trajectory or array
        Raw path ``Z_0..Z_N``.
    model : ConditionalModel
        Conditional-mean specification; frozen coordinates of flexible
        models are reported back as the nuisance.
    box : sequence of (low, high)
        Search box, one pair per free coordinate.
    window : (h, n), optional
        Sum over steps ``k = h+1..n``.  Defaults to the whole path.
    config : OptimizerConfig, optional
    """
    values = _as_values(trajectory)
    h, n = _resolve_window(values, window)
    config = config or OptimizerConfig()
    box_arr = _validate_box(box, model.theta_dim)
    values = np.ascontiguousarray(values)
    _require_usable_steps(model, values, h, n)

    def fun(theta: np.ndarray) -> float:
        return model.sse(values, theta, h, n)[0]

    theta_best, val_best, success, n_starts, rank = _minimize_multistart(
        fun, box_arr, config
    )
    _, excluded = model.sse(values, theta_best, h, n)
    return EstimationResult(
        theta_hat=theta_best,
        objective=val_best,
        window=(h, n),
        nuisance=_model_nuisance(model),
        converged=bool(success),
        starts_evaluated=n_starts,
        best_start_index=int(rank),
        excluded_steps=int(excluded),
    )


def harris_closed_form(
    trajectory: Trajectory | np.ndarray, window: tuple[int, int] | None = None
) -> float:
    """Ratio of total offspring to total parents over the window.

    This is the exact minimizer of the branching-model least squares
    criterion with weights equal to the parent population.
    """
    values = _as_values(trajectory)
    h, n = _resolve_window(values, window)
    num = math.fsum(values[h + 1 : n + 1].tolist())
    den = math.fsum(values[h:n].tolist())
    if den <= 0:
        raise ValueError("window contains no parents; ratio undefined")
    return num / den


def lotka_nagaev(trajectory: Trajectory | np.ndarray, n: int | None = None) -> float:
    """One-step growth ratio ``Z_n / Z_{n-1}``.

    Equals the windowed least-squares estimate restricted to the single
    terminal step ``(h, n) = (n-1, n)``.
    """
    values = _as_values(trajectory)
    if n is None:
        n = values.shape[0] - 1
    if not (1 <= n <= values.shape[0] - 1):
        raise ValueError(f"step index n={n} outside 1..{values.shape[0] - 1}")
    if values[n - 1] <= 0:
        raise ValueError("previous state is zero; ratio undefined")
    return float(values[n] / values[n - 1])


def _score_parts(
    values: np.ndarray,
    model: ConditionalModel,
    h: int,
    n: int,
    weighting: str,
):
    prev = values[h:n]
    cur = values[h + 1 : n + 1]
    usable = model.usable(prev)
    lam = model.lam(prev)

    def q_vec(theta: np.ndarray) -> np.ndarray:
        g = model.mean_z(prev, theta)
        if weighting == "variance":
            b = model.var_z(prev, theta)
        else:
            b = lam
        dg = model.dmean_y(prev, theta) * np.sqrt(lam)[:, None]
        ok = usable & (b > 0) & np.isfinite(b)
        w = np.zeros(prev.shape[0])
        w[ok] = (cur[ok] - g[ok]) / b[ok]
        comps = [backend.comp_sum(w * dg[:, j]) for j in range(dg.shape[1])]
        return np.asarray(comps, dtype=np.float64)

    return q_vec


def _newton_polish(q_vec, theta: np.ndarray, box: np.ndarray, max_steps: int = 15):
    """Damped finite-difference Newton iteration on the score vector."""
    lo, hi = box[:, 0], box[:, 1]
    theta = np.clip(theta, lo, hi)
    q = q_vec(theta)
    best_norm = float(np.linalg.norm(q))
    for _ in range(max_steps):
        p = theta.shape[0]
        jac = np.empty((p, p))
        for j in range(p):
            step = 1e-6 * max(abs(theta[j]), 1e-2)
            tp = theta.copy()
            tm = theta.copy()
            tp[j] = min(theta[j] + step, hi[j])
            tm[j] = max(theta[j] - step, lo[j])
            denom = tp[j] - tm[j]
            if denom == 0:
                return theta, best_norm
            jac[:, j] = (q_vec(tp) - q_vec(tm)) / denom
        try:
            delta = np.linalg.solve(jac, -q)
        except np.linalg.LinAlgError:
            return theta, best_norm
        scale = 1.0
        improved = False
        for _ in range(8):
            trial = np.clip(theta + scale * delta, lo, hi)
            q_trial = q_vec(trial)
            norm_trial = float(np.linalg.norm(q_trial))
            if norm_trial < best_norm:
                theta, q, best_norm = trial, q_trial, norm_trial
                improved = True
                break
            scale *= 0.5
        if not improved:
            break
    return theta, best_norm


def qle(
    trajectory: Trajectory | np.ndarray,
    model: ConditionalModel,
    box: Sequence[tuple[float, float]],
    window: tuple[int, int] | None = None,
    config: OptimizerConfig | None = None,
) -> EstimationResult:
    """Quasi-likelihood scoring: drive the weighted score vector to zero.

    The search minimizes ``||Q(theta)||**2`` by the shared multistart
    machinery, optionally polishing with damped Newton steps.  Candidate
    roots within the residual tolerance are ranked by the least-squares
    objective and then lexicographically; if no candidate reaches the
    tolerance the best point is returned with ``converged=False`` and an
    explanatory message.
    """
    values = _as_values(trajectory)
    h, n = _resolve_window(values, window)
    config = config or OptimizerConfig()
    box_arr = _validate_box(box, model.theta_dim)
    values = np.ascontiguousarray(values)
    _require_usable_steps(model, values, h, n)

    q_vec = _score_parts(values, model, h, n, config.qle_weighting)
    center = box_arr.mean(axis=1)
    tol = 1e-8 * (1.0 + float(np.linalg.norm(q_vec(center))))

    def fun(theta: np.ndarray) -> float:
        q = q_vec(theta)
        return float(np.dot(q, q))

    grid = _grid_points(box_arr, config.grid_resolution)
    grid_vals = np.array([fun(grid[i]) for i in range(grid.shape[0])])
    order = _lexicographic_order(grid, grid_vals)
    n_starts = min(config.n_starts, grid.shape[0])

    lo, hi = box_arr[:, 0], box_arr[:, 1]

    def penalized(t: np.ndarray) -> float:
        tc = np.clip(t, lo, hi)
        base = fun(tc)
        excess = t - tc
        if np.any(excess):
            base = base + 1e3 * (1.0 + abs(base)) * float(np.dot(excess, excess))
        return base

    endpoints: list[tuple[np.ndarray, int]] = []
    for rank, idx in enumerate(order[:n_starts]):
        x0 = grid[idx]
        if config.refine:
            res = minimize(
                penalized,
                x0,
                method="Nelder-Mead",
                options={
                    "xatol": config.param_tol,
                    "fatol": config.rel_obj_tol * (1.0 + abs(float(grid_vals[idx]))),
                    "maxiter": config.max_iter,
                    "maxfev": config.max_iter,
                },
            )
            xc = np.clip(res.x, lo, hi)
        else:
            xc = x0.copy()
        if config.newton_polish:
            xc, _ = _newton_polish(q_vec, xc, box_arr)
        endpoints.append((xc, rank))

    roots = [
        (theta, rank)
        for theta, rank in endpoints
        if float(np.linalg.norm(q_vec(theta))) <= tol
    ]
    pool = roots if roots else endpoints
    ranked = sorted(
        pool,
        key=lambda tr: (model.sse(values, tr[0], h, n)[0], tuple(tr[0])),
    )
    theta_best, rank_best = ranked[0]
    resid_norm = float(np.linalg.norm(q_vec(theta_best)))
    sse_best, excluded = model.sse(values, theta_best, h, n)
    converged = resid_norm <= tol
    message = "" if converged else (
        f"no root within tolerance: |Q|={resid_norm:.3e} > {tol:.3e}"
    )
    if not converged:
        logger.warning("qle did not locate a root: %s", message)
    return EstimationResult(
        theta_hat=theta_best,
        objective=float(sse_best),
        window=(h, n),
        nuisance=_model_nuisance(model),
        converged=converged,
        starts_evaluated=n_starts,
        best_start_index=int(rank_best),
        excluded_steps=int(excluded),
        message=message,
    )


def estimate_variance_nuisance(
    trajectory: Trajectory | np.ndarray,
    model: ConditionalModel,
    theta_hat: np.ndarray,
    window: tuple[int, int] | None = None,
) -> VarianceEstimate:
    """Second-stage fit of the normalized residual variance level.

    Regresses the squared normalized residuals at ``theta_hat`` on a
    constant, whose least-squares solution is their exact mean over the
    usable window steps.
    """
    values = _as_values(trajectory)
    h, n = _resolve_window(values, window)
    theta_hat = model.validate_theta(theta_hat)
    prev = values[h:n]
    cur = values[h + 1 : n + 1]
    usable = model.usable(prev)
    if not np.any(usable):
        raise ValueError("no usable steps in window; variance undefined")
    lam = model.lam(prev)[usable]
    y = cur[usable] / np.sqrt(lam)
    f = model.mean_y(prev, theta_hat)[usable]
    ytil = (y - f) ** 2
    sigma2 = math.fsum(ytil.tolist()) / ytil.shape[0]
    return VarianceEstimate(sigma2=float(sigma2), n_used=int(ytil.shape[0]), window=(h, n))


def two_stage_pcr(
    trajectory: Trajectory | np.ndarray,
    n0: int,
    n: int,
    stage1_box: Sequence[tuple[float, float]],
    stage2_box: Sequence[tuple[float, float]],
    mode: str = "scalar",
    s_sat: float = 0.0,
    config: OptimizerConfig | None = None,
    stage1_config: OptimizerConfig | None = None,
    stage1_nuisance: Mapping[str, float] | None = None,
) -> TwoStageResult:
    """Pilot fit of the power-decay family, then a refit with frozen decay.

    Stage 1 estimates ``(k, s_alpha, alpha)`` on the pilot window ``(0, n0)``;
    its decay coordinates are frozen as plug-in nuisances for stage 2 on
    ``(0, n)``, which re-estimates ``k`` alone (``mode="scalar"``) or
    ``(k, s_alpha)`` (``mode="pair"``).

    ``stage1_nuisance`` bypasses stage 1 with externally supplied values
    (keys ``s_alpha`` and ``alpha``); with the decay frozen this way the
    call reduces exactly to a one-stage fit of the remaining coordinates.
    """
    if mode not in ("scalar", "pair"):
        raise ValueError("mode must be 'scalar' or 'pair'")
    values = _as_values(trajectory)
    last = values.shape[0] - 1
    if not (0 < n0 <= n <= last):
        raise ValueError(f"need 0 < n0 <= n <= {last}, got n0={n0}, n={n}")
    config = config or OptimizerConfig()

    stage1 = None
    if stage1_nuisance is None:
        box1 = _validate_box(stage1_box, 3)
        alpha_lo, alpha_hi = box1[2]
        if not (0.0 < alpha_lo and alpha_hi < 0.5):
            raise ValueError(
                "stage-1 alpha box must lie strictly inside (0, 0.5); "
                f"got ({alpha_lo}, {alpha_hi})"
            )
        model1 = AmplificationPowerDecay(s_sat=s_sat)
        stage1 = clse(
            values, model1, box1, window=(0, n0), config=stage1_config or config
        )
        nuis = {
            "s_alpha": float(stage1.theta_hat[1]),
            "alpha": float(stage1.theta_hat[2]),
        }
    else:
        nuis = {
            "s_alpha": float(stage1_nuisance["s_alpha"]),
            "alpha": float(stage1_nuisance["alpha"]),
        }

    if mode == "scalar":
        model2 = AmplificationPowerDecay(
            free=("k",), fixed=dict(nuis), s_sat=s_sat
        )
    else:
        model2 = AmplificationPowerDecay(
            free=("k", "s_alpha"), fixed={"alpha": nuis["alpha"]}, s_sat=s_sat
        )
    stage2 = clse(values, model2, stage2_box, window=(0, n), config=config)
    return TwoStageResult(stage1=stage1, stage2=stage2, nuisance=nuis, mode=mode)
