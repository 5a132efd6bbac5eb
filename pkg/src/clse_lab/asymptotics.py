"""Normalization objects for limit laws: information matrices, deterministic
scalings, standardized errors, confidence intervals, and the non-normal
branching reference law.

The standardized error of an estimate is ``scaling @ (theta_hat - theta0)``,
optionally divided by a scalar scale estimate; under the right scaling it
converges to a standard normal (amplification models) or to a normal mixture
``U / W`` built from the branching limit variable (geometric-growth model).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any

import numpy as np

from . import rng
from .models import ConditionalModel, Trajectory, _as_values

_SQRT2 = math.sqrt(2.0)
_SQRT_2PI = math.sqrt(2.0 * math.pi)


# ---------------------------------------------------------------------------
# normal CDF / quantile helpers (self-contained, no statistics dependency)
# ---------------------------------------------------------------------------


def _phi_scalar(x: float) -> float:
    return 0.5 * math.erfc(-x / _SQRT2)


# Rational approximation of the standard normal quantile (Acklam's
# coefficients: max absolute error ~1.15e-9 before refinement).
_ACKLAM_A = (
    -3.969683028665376e01,
    2.209460984245205e02,
    -2.759285104469687e02,
    1.383577518672690e02,
    -3.066479806614716e01,
    2.506628277459239e00,
)
_ACKLAM_B = (
    -5.447609879822406e01,
    1.615858368580409e02,
    -1.556989798598866e02,
    6.680131188771972e01,
    -1.328068155288572e01,
)
_ACKLAM_C = (
    -7.784894002430293e-03,
    -3.223964580411365e-01,
    -2.400758277161838e00,
    -2.549732539343734e00,
    4.374664141464968e00,
    2.938163982698783e00,
)
_ACKLAM_D = (
    7.784695709041462e-03,
    3.224671290700398e-01,
    2.445134137142996e00,
    3.754408661907416e00,
)
_P_LOW = 0.02425


def normal_quantile(p: float) -> float:
    """Standard normal quantile by rational approximation plus one Halley step.

    Accurate to well below 1e-8 over (0, 1).
    """
    if not 0.0 < p < 1.0:
        raise ValueError("quantile argument must lie strictly in (0, 1)")
    a, b, c, d = _ACKLAM_A, _ACKLAM_B, _ACKLAM_C, _ACKLAM_D
    if p < _P_LOW:
        r = math.sqrt(-2.0 * math.log(p))
        x = (((((c[0] * r + c[1]) * r + c[2]) * r + c[3]) * r + c[4]) * r + c[5]) / (
            (((d[0] * r + d[1]) * r + d[2]) * r + d[3]) * r + 1.0
        )
    elif p <= 1.0 - _P_LOW:
        q = p - 0.5
        r = q * q
        x = (
            (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5])
            * q
            / (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0)
        )
    else:
        r = math.sqrt(-2.0 * math.log(1.0 - p))
        x = -(
            (((((c[0] * r + c[1]) * r + c[2]) * r + c[3]) * r + c[4]) * r + c[5])
            / ((((d[0] * r + d[1]) * r + d[2]) * r + d[3]) * r + 1.0)
        )
    # one Halley refinement against the erfc-based CDF
    e = _phi_scalar(x) - p
    u = e * _SQRT_2PI * math.exp(0.5 * x * x)
    x = x - u / (1.0 + 0.5 * x * u)
    return x


def sqrtm_spd(matrix: np.ndarray) -> np.ndarray:
    """Symmetric square root of a symmetric positive (semi)definite matrix."""
    matrix = np.asarray(matrix, dtype=np.float64)
    sym_gap = float(np.max(np.abs(matrix - matrix.T))) if matrix.size else 0.0
    scale = float(np.max(np.abs(matrix))) if matrix.size else 0.0
    if sym_gap > 1e-12 * max(scale, 1.0):
        raise ValueError("matrix is not symmetric")
    vals, vecs = np.linalg.eigh(matrix)
    if np.any(vals < -1e-10 * max(vals.max(initial=0.0), 1.0)):
        raise ValueError("matrix has a negative eigenvalue; no real square root")
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


# ---------------------------------------------------------------------------
# information matrix
# ---------------------------------------------------------------------------


@dataclass
class InfoMatrix:
    """Windowed outer-product sum of normalized mean gradients."""

    matrix: np.ndarray
    window: tuple[int, int]
    n_used: int
    singular: bool
    null_basis: np.ndarray | None
    condition: float

    @property
    def inverse(self) -> np.ndarray:
        if self.singular:
            raise ValueError(
                "information matrix is singular; inverse withheld "
                f"(null space dimension {0 if self.null_basis is None else self.null_basis.shape[1]})"
            )
        return np.linalg.inv(self.matrix)

    def to_record(self) -> dict[str, Any]:
        rec: dict[str, Any] = {
            "matrix": self.matrix.tolist(),
            "window": [int(self.window[0]), int(self.window[1])],
            "n_used": int(self.n_used),
            "singular": bool(self.singular),
            "condition": float(self.condition),
        }
        rec["inverse"] = None if self.singular else self.inverse.tolist()
        if self.null_basis is not None:
            rec["null_basis"] = self.null_basis.tolist()
        return rec


def info_matrix(
    model: ConditionalModel,
    trajectory: Trajectory | np.ndarray,
    theta: np.ndarray,
    window: tuple[int, int] | None = None,
) -> InfoMatrix:
    """Sum of gradient outer products of the normalized mean over a window.

    Singularity (within relative eigenvalue tolerance 1e-12) is reported with
    a null-space basis instead of an inverse.
    """
    values = _as_values(trajectory)
    last = values.shape[0] - 1
    if window is None:
        window = (0, last)
    h, n = int(window[0]), int(window[1])
    if not (0 <= h < n <= last):
        raise ValueError(f"window (h={h}, n={n}) must satisfy 0 <= h < n <= {last}")
    theta = model.validate_theta(theta)
    prev = values[h:n]
    usable = model.usable(prev)
    if not np.any(usable):
        raise ValueError("window has no usable steps")
    grad = model.dmean_y(prev, theta)[usable]
    mat = grad.T @ grad
    mat = 0.5 * (mat + mat.T)
    vals = np.linalg.eigvalsh(mat)
    vmax = float(vals.max(initial=0.0))
    singular = vmax <= 0.0 or float(vals.min()) <= 1e-12 * vmax
    null_basis = None
    if singular:
        _, vecs = np.linalg.eigh(mat)
        mask = vals <= 1e-12 * max(vmax, 1.0)
        null_basis = vecs[:, mask]
    condition = math.inf if singular else vmax / float(vals.min())
    return InfoMatrix(
        matrix=mat,
        window=(h, n),
        n_used=int(np.count_nonzero(usable)),
        singular=bool(singular),
        null_basis=null_basis,
        condition=condition,
    )


# ---------------------------------------------------------------------------
# deterministic scalings
# ---------------------------------------------------------------------------


@dataclass
class PhiScaling:
    """Deterministic scaling for the amplification limit laws.

    ``phi_sq`` follows the plug-in construction for the power-decay family:
    scalar case ``sum_k ((1 + s_alpha * 2**alpha * K**(-alpha) * (k-1)**(-alpha))/2)**2``
    (the k=1 term is dropped when ``alpha > 0``; with no decay every term is
    1/4), two-parameter case the order-skeleton matrix
    ``(1/4) [[n, K n^{1-a}], [K n^{1-a}, K**2 a_n]]`` with
    ``a_n = n^{1-2a}`` for ``2a < 1`` and ``ln n`` at ``2a = 1``.
    ``phi`` is the positive-semidefinite square-root factor.
    """

    family: str
    p: int
    n: int
    phi_sq: np.ndarray
    phi: np.ndarray

    @property
    def scalar(self) -> float:
        if self.p != 1:
            raise ValueError("scalar form only defined for p=1")
        return float(self.phi[0, 0])


def phi_scaling(
    family: str,
    p: int,
    n: int,
    k_cap: float,
    alpha_hat: float,
    s_alpha_hat: float,
) -> PhiScaling:
    """Build the deterministic scaling of the amplification limit laws.

    Parameters
    ----------
    family : {"m1", "m3"}
        Catalog family the plug-ins come from (``m1`` is the no-decay case).
    p : {1, 2}
        Scalar scaling for the capacity coordinate, or the two-parameter
        order-skeleton matrix for (capacity, decay-scale).
    n : int
        Horizon (>= 2).
    k_cap, alpha_hat, s_alpha_hat : float
        Plug-in values; ``alpha_hat`` must lie in [0, 1/2].
    """
    if family not in ("m1", "m3"):
        raise ValueError("family must be 'm1' or 'm3'")
    if p not in (1, 2):
        raise ValueError("p must be 1 or 2")
    if n < 2:
        raise ValueError("n must be at least 2")
    if not 0.0 <= alpha_hat <= 0.5:
        raise ValueError("alpha_hat must lie in [0, 1/2]")
    if not k_cap > 0:
        raise ValueError("k_cap must be positive")
    if p == 1:
        coef = s_alpha_hat * 2.0**alpha_hat * k_cap ** (-alpha_hat)
        if alpha_hat == 0.0 or coef == 0.0:
            per = ((1.0 + coef) / 2.0) ** 2
            phi2 = np.array([[n * per]])
        else:
            ks = np.arange(2, n + 1, dtype=np.float64)
            terms = ((1.0 + coef * (ks - 1.0) ** (-alpha_hat)) / 2.0) ** 2
            phi2 = np.array([[float(np.sum(terms))]])
        phi = np.sqrt(phi2)
    else:
        if alpha_hat == 0.5:
            a_n = math.log(n)
        else:
            a_n = float(n) ** (1.0 - 2.0 * alpha_hat)
        off = k_cap * float(n) ** (1.0 - alpha_hat)
        phi2 = 0.25 * np.array([[float(n), off], [off, k_cap**2 * a_n]])
        phi = sqrtm_spd(phi2)
    return PhiScaling(family=family, p=p, n=int(n), phi_sq=phi2, phi=phi)


# ---------------------------------------------------------------------------
# standardized errors
# ---------------------------------------------------------------------------


@dataclass
class StandardizedError:
    """Scaled estimation error, optionally divided by a scalar scale."""

    value: np.ndarray
    scaling: np.ndarray
    s: float | None

    @property
    def scalar(self) -> float:
        if self.value.shape != (1,):
            raise ValueError("scalar form only defined in dimension 1")
        return float(self.value[0])


def standardized_error(
    theta_hat: np.ndarray,
    theta0: np.ndarray,
    scaling: "float | np.ndarray | PhiScaling",
    s: float | None = None,
) -> StandardizedError:
    """``scaling @ (theta_hat - theta0)``, optionally divided by ``s``.

    A matrix scaling must be symmetric positive definite; the singular
    order-skeleton matrices are rejected here by design (use the information
    route for joint laws).
    """
    theta_hat = np.atleast_1d(np.asarray(theta_hat, dtype=np.float64))
    theta0 = np.atleast_1d(np.asarray(theta0, dtype=np.float64))
    if theta_hat.shape != theta0.shape:
        raise ValueError("theta_hat and theta0 must have the same shape")
    if isinstance(scaling, PhiScaling):
        if scaling.p > 1:
            sk = np.linalg.eigvalsh(scaling.phi_sq)
            if float(sk.min()) <= 1e-12 * max(float(sk.max()), 0.0):
                raise ValueError(
                    "order-skeleton scaling is singular; "
                    "standardize through the information matrix instead"
                )
            scaling = scaling.phi
        else:
            scaling = scaling.scalar
    if np.isscalar(scaling) or np.ndim(scaling) == 0:
        mat = np.eye(theta_hat.shape[0]) * float(scaling)
    else:
        mat = np.asarray(scaling, dtype=np.float64)
        if mat.shape != (theta_hat.shape[0], theta_hat.shape[0]):
            raise ValueError("matrix scaling has the wrong shape")
    if not np.all(np.isfinite(mat)):
        raise ValueError("scaling must be finite")
    if mat.shape[0] > 0:
        gap = float(np.max(np.abs(mat - mat.T)))
        if gap > 1e-12 * max(float(np.max(np.abs(mat))), 1.0):
            raise ValueError("matrix scaling must be symmetric")
        eigs = np.linalg.eigvalsh(mat)
        if float(eigs.min()) <= 1e-12 * max(float(eigs.max()), 0.0):
            raise ValueError("matrix scaling must be positive definite")
    value = mat @ (theta_hat - theta0)
    if s is not None:
        if not s > 0:
            raise ValueError("scale s must be positive")
        value = value / float(s)
    return StandardizedError(value=value, scaling=mat, s=s)


# ---------------------------------------------------------------------------
# branching mixture reference law
# ---------------------------------------------------------------------------


@dataclass
class LimitSample:
    """Draws from the mixture law ``U / W`` on the survival event.

    ``w_all`` records the limit-variable proxy of every replicate (0 for
    extinct ones); ``ratios`` holds ``U / W`` for the surviving replicates.
    """

    ratios: np.ndarray
    w_all: np.ndarray
    n_extinct: int
    horizon: int

    @property
    def reps(self) -> int:
        return self.w_all.shape[0]


def sample_bgw_limit(
    m0: float,
    sigma0_sq: float,
    n0: int,
    reps: int,
    horizon: int = 30,
    seed: int = 0,
) -> LimitSample:
    """Sample the non-normal limit law of the geometric-growth model.

    Each replicate runs the two-point offspring population ``horizon`` steps
    and forms the limit-variable proxy ``W = N_horizon * m0**(-horizon)``
    (mean ``n0``), paired with an independent ``N(0, sigma0_sq)`` draw ``U``;
    the sample is ``U / W`` on survival.  Extinct replicates are excluded and
    counted.
    """
    if not 1.0 < m0 <= 2.0:
        raise ValueError("m0 must lie in (1, 2] for the two-point offspring law")
    if sigma0_sq < 0:
        raise ValueError("sigma0_sq must be non-negative")
    if n0 < 1:
        raise ValueError("n0 must be at least 1")
    if reps < 1:
        raise ValueError("reps must be at least 1")
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    p0 = m0 - 1.0
    sigma0 = math.sqrt(sigma0_sq)
    scale = m0 ** (-float(horizon))
    w_all = np.zeros(reps, dtype=np.float64)
    ratios = []
    for r in range(reps):
        gen = rng.replicate_generator(seed, r)
        pop = int(n0)
        for _ in range(horizon):
            if pop == 0:
                break
            pop = pop + int(gen.binomial(pop, p0))
        u = sigma0 * gen.standard_normal()
        if pop == 0:
            continue
        w = pop * scale
        w_all[r] = w
        ratios.append(u / w)
    if not ratios:
        raise RuntimeError("all replicates extinct; mixture law unsampled")
    return LimitSample(
        ratios=np.asarray(ratios, dtype=np.float64),
        w_all=w_all,
        n_extinct=int(reps - len(ratios)),
        horizon=int(horizon),
    )


# ---------------------------------------------------------------------------
# confidence intervals
# ---------------------------------------------------------------------------


def wald_ci(
    theta_hat: np.ndarray,
    info: "InfoMatrix | np.ndarray",
    sigma2_hat: float,
    level: float = 0.95,
) -> list[tuple[float, float]]:
    """Per-coordinate normal-theory intervals from the information matrix.

    Interval i is ``theta_hat[i] +- z * sqrt(sigma2_hat * inv(info)[i, i])``
    with ``z`` the ``(1+level)/2`` standard normal quantile.  A zero variance
    estimate degenerates to the point ``{theta_hat[i]}``.
    """
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    if sigma2_hat < 0:
        raise ValueError("sigma2_hat must be non-negative")
    theta_hat = np.atleast_1d(np.asarray(theta_hat, dtype=np.float64))
    if isinstance(info, InfoMatrix):
        inv = info.inverse
    else:
        mat = np.asarray(info, dtype=np.float64)
        if mat.shape != (theta_hat.shape[0], theta_hat.shape[0]):
            raise ValueError("info matrix has the wrong shape")
        inv = np.linalg.inv(mat)
    z = normal_quantile(0.5 * (1.0 + level))
    out = []
    for i in range(theta_hat.shape[0]):
        half = z * math.sqrt(sigma2_hat * float(inv[i, i]))
        out.append((float(theta_hat[i] - half), float(theta_hat[i] + half)))
    return out
