"""Catalog of conditional-mean models and their simulators.

Every model describes a time series ``Z_0, Z_1, ...`` through its one-step
conditional mean and variance given the previous state.  Estimation works on
the normalized scale ``Y_k = Z_k / sqrt(lam_k)`` where ``lam_k`` is a
model-declared weight of the conditioning state (population size for the
branching family, 1 elsewhere), so that the normalized residuals have
comparable conditional variances along a growing path.

The catalog:

``bgw``
    Branching population whose mean grows geometrically, ``E(Z_k|F) = m Z_{k-1}``,
    with a two-point (each individual leaves 1 or 2 descendants) or Poisson
    offspring law.  Weight ``lam_k = Z_{k-1}``.
``pcr_m1``
    Amplification with hyperbolic success probability ``p = K / (K + N)``;
    ``E(Z_k|F) = (1 + p) Z_{k-1}``.
``pcr_m2``
    Amplification whose efficiency decays exponentially once the population
    passes a threshold ``S``: ``p = K/(K+Ns) * (1 + exp(-C(Ns/S - 1)))/2``
    with ``Ns = max(N, S)``.
``pcr_m3``
    Amplification with power-law efficiency decay
    ``p = K/(K+Ns) * (1 + s_alpha * Ns**(-alpha))/2``; any subset of
    ``(k, s_alpha, alpha)`` may be estimated while the rest stay frozen.
``arch``
    Squared conditionally heteroscedastic recursion: ``Z_k = xi_k**2`` with
    ``xi_k = sqrt(a0 + a1 Z_{k-1}) U_k`` and standard normal innovations, so
    ``E(Z_k|F) = a0 + a1 Z_{k-1}``.

Derivatives of the normalized mean are analytic; the finite-difference suite
checks them model by model.
"""
from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

from . import backend, io, rng

logger = logging.getLogger(__name__)

#: largest population for which another doubling step cannot overflow int64
_MAX_COUNT = 2**62

_PCR_KINDS = ("m1", "m2", "m3")


@dataclass
class Trajectory:
    """A simulated or loaded path ``Z_0..Z_n`` plus provenance metadata."""

    values: np.ndarray
    meta: dict[str, Any] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.values.shape[0] - 1

    def to_csv(self, path: str) -> None:
        io.write_trajectory_csv(path, self.values, self.meta)

    @classmethod
    def from_csv(cls, path: str) -> "Trajectory":
        values, meta = io.read_trajectory_csv(path)
        return cls(values=values, meta=meta)


def _as_values(trajectory: "Trajectory | np.ndarray") -> np.ndarray:
    if isinstance(trajectory, Trajectory):
        return np.asarray(trajectory.values, dtype=np.float64)
    return np.asarray(trajectory, dtype=np.float64)


@dataclass
class NormalizedPath:
    """Per-step normalized quantities for ``k = 1..n``.

    Entries at unusable steps (zero weight) are stored as 0 and masked out by
    ``usable``; downstream sums must multiply by the mask rather than test
    for NaN.
    """

    y: np.ndarray
    mean: np.ndarray
    resid: np.ndarray
    var: np.ndarray
    lam: np.ndarray
    usable: np.ndarray

    @property
    def n(self) -> int:
        return self.y.shape[0]


class ConditionalModel(ABC):
    """One-step conditional mean/variance specification.

    Subclasses fix the parameter layout ``theta`` and provide vectorized
    evaluators over an array of conditioning states.  ``theta`` is always a
    1-d float array in the order of ``theta_names``.
    """

    model_id: str = ""
    theta_names: tuple[str, ...] = ()

    @property
    def theta_dim(self) -> int:
        return len(self.theta_names)

    # -- raw scale -----------------------------------------------------
    @abstractmethod
    def lam(self, prev: np.ndarray) -> np.ndarray:
        """Normalization weight per step."""

    @abstractmethod
    def mean_z(self, prev: np.ndarray, theta: np.ndarray) -> np.ndarray:
        """Conditional mean of ``Z_k`` given ``Z_{k-1} = prev``."""

    @abstractmethod
    def var_z(self, prev: np.ndarray, theta: np.ndarray) -> np.ndarray:
        """Conditional variance of ``Z_k`` given ``Z_{k-1} = prev``."""

    # -- normalized scale ----------------------------------------------
    def usable(self, prev: np.ndarray) -> np.ndarray:
        """Mask of steps that enter objective/diagnostic sums."""
        return np.ones(prev.shape[0], dtype=bool)

    def mean_y(self, prev: np.ndarray, theta: np.ndarray) -> np.ndarray:
        lam = self.lam(prev)
        ok = self.usable(prev)
        out = np.zeros(prev.shape[0], dtype=np.float64)
        out[ok] = self.mean_z(prev[ok], theta) / np.sqrt(lam[ok])
        return out

    def var_y(self, prev: np.ndarray, theta: np.ndarray) -> np.ndarray:
        lam = self.lam(prev)
        ok = self.usable(prev)
        out = np.zeros(prev.shape[0], dtype=np.float64)
        out[ok] = self.var_z(prev[ok], theta) / lam[ok]
        return out

    @abstractmethod
    def dmean_y(self, prev: np.ndarray, theta: np.ndarray) -> np.ndarray:
        """Gradient of the normalized mean: shape ``(n, theta_dim)``."""

    @abstractmethod
    def d2mean_y(self, prev: np.ndarray, theta: np.ndarray) -> np.ndarray:
        """Hessian of the normalized mean: shape ``(n, theta_dim, theta_dim)``."""

    def mean_y_parts(
        self, prev: np.ndarray, theta: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray]:
        """Split of the normalized mean into (own-parameter, frozen-nuisance) parts.

        Models with no frozen nuisance return a zero second part.
        """
        return self.mean_y(prev, theta), np.zeros(prev.shape[0], dtype=np.float64)

    # -- fused objective ------------------------------------------------
    @abstractmethod
    def sse(
        self, values: np.ndarray, theta: np.ndarray, lo: int, hi: int
    ) -> tuple[float, int]:
        """Windowed sum of squared normalized residuals, kernel-dispatched."""

    def validate_theta(self, theta: np.ndarray) -> np.ndarray:
        theta = np.atleast_1d(np.asarray(theta, dtype=np.float64))
        if theta.shape != (self.theta_dim,):
            raise ValueError(
                f"{self.model_id}: theta must have {self.theta_dim} "
                f"coordinate(s) {self.theta_names}, got shape {theta.shape}"
            )
        return theta

    def normalized(
        self, trajectory: "Trajectory | np.ndarray", theta: np.ndarray
    ) -> NormalizedPath:
        return normalize(trajectory, self, theta)


def normalize(
    trajectory: "Trajectory | np.ndarray",
    model: ConditionalModel,
    theta: np.ndarray,
) -> NormalizedPath:
    """Project a raw path onto the normalized observation scale.

    Returns per-step arrays for ``k = 1..n``: observation
    ``Y_k = Z_k / sqrt(lam_k)``, model mean, residual, conditional variance of
    ``Y_k``, the weight ``lam_k``, and the usability mask.
    """
    values = _as_values(trajectory)
    if values.shape[0] < 2:
        raise ValueError("trajectory must contain at least two states")
    theta = model.validate_theta(theta)
    prev = values[:-1]
    cur = values[1:]
    lam = model.lam(prev)
    ok = model.usable(prev)
    y = np.zeros(prev.shape[0], dtype=np.float64)
    y[ok] = cur[ok] / np.sqrt(lam[ok])
    mean = model.mean_y(prev, theta)
    var = model.var_y(prev, theta)
    resid = np.where(ok, y - mean, 0.0)
    return NormalizedPath(y=y, mean=mean, resid=resid, var=var, lam=lam, usable=ok)


# ---------------------------------------------------------------------------
# branching population with geometric mean growth
# ---------------------------------------------------------------------------


class BranchingMean(ConditionalModel):
    """Mean-``m`` branching population, two-point or Poisson offspring.

    theta = (m,).  Weight ``lam = Z_{k-1}``; steps at zero population are
    unusable.  On the normalized scale the mean is exactly linear in ``m``
    with step-wise slope ``sqrt(Z_{k-1})``, which makes the least-squares
    problem quadratic — the closed-form ratio estimator (total offspring over
    total parents) is its exact minimizer.
    """

    model_id = "bgw"
    theta_names = ("m",)

    def __init__(self, law: str = "binary"):
        if law not in ("binary", "poisson"):
            raise ValueError(f"unknown offspring law {law!r}")
        self.law = law

    def lam(self, prev: np.ndarray) -> np.ndarray:
        return np.asarray(prev, dtype=np.float64)

    def usable(self, prev: np.ndarray) -> np.ndarray:
        return prev > 0

    def mean_z(self, prev: np.ndarray, theta: np.ndarray) -> np.ndarray:
        return theta[0] * prev

    def var_z(self, prev: np.ndarray, theta: np.ndarray) -> np.ndarray:
        m = theta[0]
        if self.law == "binary":
            return prev * (m - 1.0) * (2.0 - m)
        return prev * m

    def mean_y(self, prev: np.ndarray, theta: np.ndarray) -> np.ndarray:
        return np.where(prev > 0, theta[0] * np.sqrt(np.maximum(prev, 0.0)), 0.0)

    def var_y(self, prev: np.ndarray, theta: np.ndarray) -> np.ndarray:
        m = theta[0]
        sig = (m - 1.0) * (2.0 - m) if self.law == "binary" else m
        return np.where(prev > 0, sig, 0.0)

    def dmean_y(self, prev: np.ndarray, theta: np.ndarray) -> np.ndarray:
        col = np.where(prev > 0, np.sqrt(np.maximum(prev, 0.0)), 0.0)
        return col[:, None]

    def d2mean_y(self, prev: np.ndarray, theta: np.ndarray) -> np.ndarray:
        return np.zeros((prev.shape[0], 1, 1), dtype=np.float64)

    def sse(
        self, values: np.ndarray, theta: np.ndarray, lo: int, hi: int
    ) -> tuple[float, int]:
        return backend.sse_bgw(values, theta[0], lo, hi)


# ---------------------------------------------------------------------------
# amplification family
# ---------------------------------------------------------------------------


def replication_prob(model: str, params: Mapping[str, float], n_prev: float) -> float:
    """Per-individual success probability of one amplification step.

    Parameters
    ----------
    model : str
        ``"m1"``, ``"m2"`` or ``"m3"``.
    params : mapping
        ``m1``: ``k``.  ``m2``: ``k, c, s``.  ``m3``: ``k, alpha, s``
        (``s`` doubles as decay scale and saturation threshold).
    n_prev : float
        Current population size (non-negative).

    Returns
    -------
    float in [0, 1].
    """
    if model not in _PCR_KINDS:
        raise ValueError(f"unknown amplification model {model!r}")
    if n_prev < 0:
        raise ValueError("population size must be non-negative")
    k_cap = float(params["k"])
    if not k_cap > 0:
        raise ValueError("k must be positive")
    if model == "m1":
        return k_cap / (k_cap + n_prev)
    s = float(params["s"])
    if not s >= 1:
        raise ValueError("s must be >= 1")
    ns = max(n_prev, s)
    if model == "m2":
        c = float(params["c"])
        if not c >= 0:
            raise ValueError("c must be non-negative")
        return k_cap / (k_cap + ns) * (1.0 + np.exp(-c * (ns / s - 1.0))) * 0.5
    alpha = float(params["alpha"])
    if not alpha >= 0:
        raise ValueError("alpha must be non-negative")
    return k_cap / (k_cap + ns) * (1.0 + s**alpha * ns ** (-alpha)) * 0.5


class AmplificationHyperbolic(ConditionalModel):
    """Hyperbolic-efficiency amplification: ``p = K / (K + N)``, theta = (K,)."""

    model_id = "pcr_m1"
    theta_names = ("k",)

    def lam(self, prev: np.ndarray) -> np.ndarray:
        return np.ones(prev.shape[0], dtype=np.float64)

    def _p(self, prev: np.ndarray, k_cap: float) -> np.ndarray:
        return k_cap / (k_cap + prev)

    def mean_z(self, prev: np.ndarray, theta: np.ndarray) -> np.ndarray:
        return (1.0 + self._p(prev, theta[0])) * prev

    def var_z(self, prev: np.ndarray, theta: np.ndarray) -> np.ndarray:
        p = self._p(prev, theta[0])
        return prev * p * (1.0 - p)

    def dmean_y(self, prev: np.ndarray, theta: np.ndarray) -> np.ndarray:
        k_cap = theta[0]
        return (prev * prev / (k_cap + prev) ** 2)[:, None]

    def d2mean_y(self, prev: np.ndarray, theta: np.ndarray) -> np.ndarray:
        k_cap = theta[0]
        out = np.empty((prev.shape[0], 1, 1), dtype=np.float64)
        out[:, 0, 0] = -2.0 * prev * prev / (k_cap + prev) ** 3
        return out

    def sse(
        self, values: np.ndarray, theta: np.ndarray, lo: int, hi: int
    ) -> tuple[float, int]:
        return backend.sse_pcr(values, theta[0], 1.0, 0.0, 0.0, lo, hi)


_M3_ORDER = ("k", "s_alpha", "alpha")
_M2_ORDER = ("k", "c", "s")


class AmplificationPowerDecay(ConditionalModel):
    """Power-law efficiency decay, estimable on any subset of its coordinates.

    Success probability ``p = K/(K+Ns) * (1 + s_alpha * Ns**(-alpha)) / 2``
    with ``Ns = max(N, s_sat)``.  ``free`` lists the coordinates exposed as
    theta (canonical order ``k, s_alpha, alpha``); the rest are frozen at
    the values given in ``fixed`` and act as plug-in nuisances.  The
    saturation floor ``s_sat`` is structural, not a coordinate.
    """

    model_id = "pcr_m3"

    def __init__(
        self,
        free: tuple[str, ...] = _M3_ORDER,
        fixed: Mapping[str, float] | None = None,
        s_sat: float = 0.0,
    ):
        free = tuple(free)
        fixed = dict(fixed or {})
        if set(free) | set(fixed) != set(_M3_ORDER) or set(free) & set(fixed):
            raise ValueError(
                f"free={free} and fixed={sorted(fixed)} must partition {_M3_ORDER}"
            )
        if tuple(n for n in _M3_ORDER if n in free) != free:
            raise ValueError(f"free coordinates must follow the order {_M3_ORDER}")
        self.theta_names = free
        self.fixed = fixed
        self.s_sat = float(s_sat)

    def _coords(self, theta: np.ndarray) -> tuple[float, float, float]:
        byname = dict(zip(self.theta_names, theta))
        byname.update(self.fixed)
        return byname["k"], byname["s_alpha"], byname["alpha"]

    def lam(self, prev: np.ndarray) -> np.ndarray:
        return np.ones(prev.shape[0], dtype=np.float64)

    def _pieces(self, prev: np.ndarray, theta: np.ndarray):
        k_cap, s_alpha, alpha = self._coords(theta)
        pos = prev > 0
        ns = np.maximum(prev, self.s_sat)
        ns_safe = np.where(ns > 0, ns, 1.0)
        base = k_cap / (k_cap + ns_safe)
        decay = s_alpha * ns_safe ** (-alpha)
        return k_cap, s_alpha, alpha, pos, ns_safe, base, decay

    def mean_z(self, prev: np.ndarray, theta: np.ndarray) -> np.ndarray:
        _, _, _, pos, _, base, decay = self._pieces(prev, theta)
        p = base * (1.0 + decay) * 0.5
        return np.where(pos, (1.0 + p) * prev, 0.0)

    def var_z(self, prev: np.ndarray, theta: np.ndarray) -> np.ndarray:
        _, _, _, pos, _, base, decay = self._pieces(prev, theta)
        p = base * (1.0 + decay) * 0.5
        return np.where(pos, prev * p * (1.0 - p), 0.0)

    def mean_y_parts(
        self, prev: np.ndarray, theta: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray]:
        _, _, _, pos, _, base, decay = self._pieces(prev, theta)
        if not self.fixed:
            return self.mean_y(prev, theta), np.zeros(prev.shape[0])
        own = np.where(pos, prev * (1.0 + base * 0.5), 0.0)
        frozen = np.where(pos, prev * base * decay * 0.5, 0.0)
        return own, frozen

    def dmean_y(self, prev: np.ndarray, theta: np.ndarray) -> np.ndarray:
        k_cap, s_alpha, alpha, pos, ns, base, decay = self._pieces(prev, theta)
        cols = {}
        if "k" in self.theta_names:
            cols["k"] = prev * ns / (k_cap + ns) ** 2 * (1.0 + decay) * 0.5
        if "s_alpha" in self.theta_names:
            cols["s_alpha"] = prev * base * ns ** (-alpha) * 0.5
        if "alpha" in self.theta_names:
            cols["alpha"] = -prev * base * s_alpha * np.log(ns) * ns ** (-alpha) * 0.5
        out = np.stack([np.where(pos, cols[n], 0.0) for n in self.theta_names], axis=1)
        return out

    def d2mean_y(self, prev: np.ndarray, theta: np.ndarray) -> np.ndarray:
        k_cap, s_alpha, alpha, pos, ns, base, decay = self._pieces(prev, theta)
        logns = np.log(ns)
        pow_a = ns ** (-alpha)
        blocks = {
            ("k", "k"): -prev * ns / (k_cap + ns) ** 3 * (1.0 + decay),
            ("k", "s_alpha"): prev * ns / (k_cap + ns) ** 2 * pow_a * 0.5,
            ("k", "alpha"): -prev * ns / (k_cap + ns) ** 2 * s_alpha * logns * pow_a * 0.5,
            ("s_alpha", "s_alpha"): np.zeros(prev.shape[0]),
            ("s_alpha", "alpha"): -prev * base * logns * pow_a * 0.5,
            ("alpha", "alpha"): prev * base * s_alpha * logns**2 * pow_a * 0.5,
        }
        p = self.theta_dim
        out = np.zeros((prev.shape[0], p, p), dtype=np.float64)
        for i, ni in enumerate(self.theta_names):
            for j, nj in enumerate(self.theta_names):
                key = (ni, nj) if (ni, nj) in blocks else (nj, ni)
                out[:, i, j] = np.where(pos, blocks[key], 0.0)
        return out

    def sse(
        self, values: np.ndarray, theta: np.ndarray, lo: int, hi: int
    ) -> tuple[float, int]:
        k_cap, s_alpha, alpha = self._coords(theta)
        return backend.sse_pcr(values, k_cap, s_alpha, alpha, self.s_sat, lo, hi)


class AmplificationExpOnset(ConditionalModel):
    """Exponential-onset efficiency decay above a threshold the model estimates.

    ``p = K/(K+Ns) * (1 + exp(-C*(Ns/S - 1)))/2`` with ``Ns = max(N, S)``;
    below the threshold this is exactly ``K/(K+S)``.  The mean is piecewise
    smooth with a kink on the surface ``N = S``, so derivative evaluations
    are branch-resolved per step.
    """

    model_id = "pcr_m2"

    def __init__(
        self,
        free: tuple[str, ...] = _M2_ORDER,
        fixed: Mapping[str, float] | None = None,
    ):
        free = tuple(free)
        fixed = dict(fixed or {})
        if set(free) | set(fixed) != set(_M2_ORDER) or set(free) & set(fixed):
            raise ValueError(
                f"free={free} and fixed={sorted(fixed)} must partition {_M2_ORDER}"
            )
        if tuple(n for n in _M2_ORDER if n in free) != free:
            raise ValueError(f"free coordinates must follow the order {_M2_ORDER}")
        self.theta_names = free
        self.fixed = fixed

    def _coords(self, theta: np.ndarray) -> tuple[float, float, float]:
        byname = dict(zip(self.theta_names, theta))
        byname.update(self.fixed)
        return byname["k"], byname["c"], byname["s"]

    def lam(self, prev: np.ndarray) -> np.ndarray:
        return np.ones(prev.shape[0], dtype=np.float64)

    def mean_z(self, prev: np.ndarray, theta: np.ndarray) -> np.ndarray:
        k_cap, c_rate, s = self._coords(theta)
        pos = prev > 0
        ns = np.maximum(prev, s)
        eterm = np.exp(-c_rate * (ns / s - 1.0))
        p = k_cap / (k_cap + ns) * (1.0 + eterm) * 0.5
        return np.where(pos, (1.0 + p) * prev, 0.0)

    def var_z(self, prev: np.ndarray, theta: np.ndarray) -> np.ndarray:
        k_cap, c_rate, s = self._coords(theta)
        pos = prev > 0
        ns = np.maximum(prev, s)
        eterm = np.exp(-c_rate * (ns / s - 1.0))
        p = k_cap / (k_cap + ns) * (1.0 + eterm) * 0.5
        return np.where(pos, prev * p * (1.0 - p), 0.0)

    def _dp_all(self, prev: np.ndarray, theta: np.ndarray):
        """First and second partials of p in canonical (k, c, s) order."""
        k_cap, c_rate, s = self._coords(theta)
        n = prev
        above = n > s
        d1 = np.zeros((n.shape[0], 3), dtype=np.float64)
        d2 = np.zeros((n.shape[0], 3, 3), dtype=np.float64)

        # below threshold: p = K / (K + S)
        kps = k_cap + s
        d1[~above, 0] = s / kps**2
        d1[~above, 2] = -k_cap / kps**2
        d2[~above, 0, 0] = -2.0 * s / kps**3
        d2[~above, 0, 2] = d2[~above, 2, 0] = (k_cap - s) / kps**3
        d2[~above, 2, 2] = 2.0 * k_cap / kps**3

        # above threshold: p = K/(K+N) * (1 + exp(-C (N/S - 1)))/2
        na = n[above]
        a_frac = k_cap / (k_cap + na)
        b_exc = na / s - 1.0
        e = np.exp(-c_rate * b_exc)
        d1[above, 0] = na / (k_cap + na) ** 2 * (1.0 + e) * 0.5
        d1[above, 1] = -a_frac * b_exc * e * 0.5
        d1[above, 2] = a_frac * c_rate * na / s**2 * e * 0.5
        d2[above, 0, 0] = -na * (1.0 + e) / (k_cap + na) ** 3
        d2[above, 0, 1] = d2[above, 1, 0] = -na / (k_cap + na) ** 2 * b_exc * e * 0.5
        d2[above, 0, 2] = d2[above, 2, 0] = (
            na / (k_cap + na) ** 2 * c_rate * na / s**2 * e * 0.5
        )
        d2[above, 1, 1] = a_frac * b_exc**2 * e * 0.5
        d2[above, 1, 2] = d2[above, 2, 1] = (
            a_frac * e * na / s**2 * (1.0 - c_rate * b_exc) * 0.5
        )
        d2[above, 2, 2] = (
            a_frac * e * c_rate * na / (2.0 * s**3) * (c_rate * na / s - 2.0)
        )
        return d1, d2

    def _free_index(self) -> list[int]:
        return [_M2_ORDER.index(name) for name in self.theta_names]

    def dmean_y(self, prev: np.ndarray, theta: np.ndarray) -> np.ndarray:
        d1, _ = self._dp_all(prev, theta)
        pos = prev > 0
        idx = self._free_index()
        out = prev[:, None] * d1[:, idx]
        out[~pos] = 0.0
        return out

    def d2mean_y(self, prev: np.ndarray, theta: np.ndarray) -> np.ndarray:
        _, d2 = self._dp_all(prev, theta)
        pos = prev > 0
        idx = self._free_index()
        out = prev[:, None, None] * d2[:, idx][:, :, idx]
        out[~pos] = 0.0
        return out

    def sse(
        self, values: np.ndarray, theta: np.ndarray, lo: int, hi: int
    ) -> tuple[float, int]:
        k_cap, c_rate, s = self._coords(theta)
        return backend.sse_pcr_m2(values, k_cap, c_rate, s, lo, hi)


# ---------------------------------------------------------------------------
# squared conditionally heteroscedastic recursion
# ---------------------------------------------------------------------------


class SquaredVolatility(ConditionalModel):
    """Squares of a first-order conditionally heteroscedastic sequence.

    theta = (a0, a1); ``E(Z_k|F) = a0 + a1 Z_{k-1}`` and, under normal
    innovations, ``Var(Z_k|F) = 2 (a0 + a1 Z_{k-1})**2``.
    """

    model_id = "arch"
    theta_names = ("a0", "a1")

    def lam(self, prev: np.ndarray) -> np.ndarray:
        return np.ones(prev.shape[0], dtype=np.float64)

    def mean_z(self, prev: np.ndarray, theta: np.ndarray) -> np.ndarray:
        return theta[0] + theta[1] * prev

    def var_z(self, prev: np.ndarray, theta: np.ndarray) -> np.ndarray:
        s2 = theta[0] + theta[1] * prev
        return 2.0 * s2 * s2

    def dmean_y(self, prev: np.ndarray, theta: np.ndarray) -> np.ndarray:
        out = np.empty((prev.shape[0], 2), dtype=np.float64)
        out[:, 0] = 1.0
        out[:, 1] = prev
        return out

    def d2mean_y(self, prev: np.ndarray, theta: np.ndarray) -> np.ndarray:
        return np.zeros((prev.shape[0], 2, 2), dtype=np.float64)

    def sse(
        self, values: np.ndarray, theta: np.ndarray, lo: int, hi: int
    ) -> tuple[float, int]:
        return backend.sse_arch(values, theta[0], theta[1], lo, hi)


# ---------------------------------------------------------------------------
# simulators
# ---------------------------------------------------------------------------


def _check_count_domain(prev: int, step: int) -> None:
    if prev > _MAX_COUNT:
        raise OverflowError(
            f"population {prev} at step {step} exceeds the int64-safe domain"
        )


def simulate_bgw(
    law: str, param: float, n0: int, steps: int, seed: int
) -> Trajectory:
    """Simulate a branching population.

    Parameters
    ----------
    law : {"binary", "poisson"}
        ``binary``: each individual leaves 1 or 2 descendants, doubling with
        probability ``param`` (one binomial draw per step).  ``poisson``:
        next state is one Poisson draw with mean ``param * N``.
    param : float
        Doubling probability in [0, 1] (binary) or mean ``m > 0`` (poisson).
    n0, steps, seed : int
        Initial population, number of steps, RNG seed.
    """
    if law == "binary":
        if not 0.0 <= param <= 1.0:
            raise ValueError("binary doubling probability must be in [0, 1]")
    elif law == "poisson":
        if not param > 0.0:
            raise ValueError("poisson mean must be positive")
    else:
        raise ValueError(f"unknown offspring law {law!r}")
    if n0 < 0 or steps < 0:
        raise ValueError("n0 and steps must be non-negative")
    gen = rng.generator(seed)
    values = np.zeros(steps + 1, dtype=np.int64)
    values[0] = n0
    for k in range(1, steps + 1):
        prev = int(values[k - 1])
        if prev == 0:
            break
        _check_count_domain(prev, k - 1)
        if law == "binary":
            values[k] = prev + gen.binomial(prev, param)
        else:
            mean = param * prev
            if mean >= float(_MAX_COUNT):
                raise OverflowError(
                    f"poisson mean {mean} at step {k} exceeds the int64-safe domain"
                )
            values[k] = gen.poisson(mean)
    meta = {
        "model": "bgw",
        "law": law,
        "param": float(param),
        "n0": int(n0),
        "steps": int(steps),
        "seed": int(seed),
    }
    return Trajectory(values=values, meta=meta)


def simulate_pcr(
    model: str, params: Mapping[str, float], n0: int, steps: int, seed: int
) -> Trajectory:
    """Simulate an amplification path: each individual copies with the
    state-dependent probability of `replication_prob`, one binomial draw per
    step."""
    if n0 < 0 or steps < 0:
        raise ValueError("n0 and steps must be non-negative")
    replication_prob(model, params, float(max(n0, 1)))  # validate params early
    gen = rng.generator(seed)
    values = np.zeros(steps + 1, dtype=np.int64)
    values[0] = n0
    for k in range(1, steps + 1):
        prev = int(values[k - 1])
        if prev == 0:
            break
        _check_count_domain(prev, k - 1)
        p = replication_prob(model, params, float(prev))
        values[k] = prev + gen.binomial(prev, p)
    meta = {
        "model": f"pcr_{model}",
        "params": {k: float(v) for k, v in sorted(params.items())},
        "n0": int(n0),
        "steps": int(steps),
        "seed": int(seed),
    }
    return Trajectory(values=values, meta=meta)


def simulate_arch(
    alpha0: float,
    alpha1: float,
    steps: int,
    seed: int,
    xi0: float = 0.0,
    innovations: np.ndarray | None = None,
) -> Trajectory:
    """Simulate the squared-volatility recursion.

    ``Z_0 = xi0**2`` and ``Z_k = (alpha0 + alpha1 Z_{k-1}) * U_k**2`` with
    standard normal ``U_k``.  ``innovations`` substitutes a deterministic
    innovation array (length ``steps``) for the normal draws; it exists for
    exact-path tests.
    """
    if not alpha0 > 0:
        raise ValueError("alpha0 must be positive")
    if not 0.0 <= alpha1 < 1.0:
        raise ValueError("alpha1 must lie in [0, 1)")
    if steps < 0:
        raise ValueError("steps must be non-negative")
    if innovations is None:
        u = rng.generator(seed).standard_normal(steps)
    else:
        u = np.asarray(innovations, dtype=np.float64)
        if u.shape != (steps,):
            raise ValueError(f"innovations must have shape ({steps},)")
    values = np.empty(steps + 1, dtype=np.float64)
    values[0] = xi0 * xi0
    usq = u * u
    for k in range(1, steps + 1):
        values[k] = (alpha0 + alpha1 * values[k - 1]) * usq[k - 1]
    meta = {
        "model": "arch",
        "params": {"a0": float(alpha0), "a1": float(alpha1)},
        "xi0": float(xi0),
        "steps": int(steps),
        "seed": int(seed),
    }
    return Trajectory(values=values, meta=meta)


# ---------------------------------------------------------------------------
# factory
# ---------------------------------------------------------------------------


def make_model(kind: str, **options: Any) -> ConditionalModel:
    """Build a catalog model from a config-style description.

    ``kind`` is one of ``bgw``, ``pcr_m1``, ``pcr_m2``, ``pcr_m3``, ``arch``.
    Options mirror the constructor arguments (``law`` for bgw; ``free`` /
    ``fixed`` / ``s_sat`` for the flexible amplification families).
    """
    if kind == "bgw":
        return BranchingMean(law=options.get("law", "binary"))
    if kind == "pcr_m1":
        return AmplificationHyperbolic()
    if kind == "pcr_m3":
        return AmplificationPowerDecay(
            free=tuple(options.get("free", _M3_ORDER)),
            fixed=options.get("fixed"),
            s_sat=options.get("s_sat", 0.0),
        )
    if kind == "pcr_m2":
        return AmplificationExpOnset(
            free=tuple(options.get("free", _M2_ORDER)),
            fixed=options.get("fixed"),
        )
    if kind == "arch":
        return SquaredVolatility()
    raise ValueError(f"unknown model kind {kind!r}")


def model_from_config(config: Mapping[str, Any]) -> ConditionalModel:
    """`make_model` driven by a JSON-style dict with a ``kind`` key."""
    options = {k: v for k, v in config.items() if k != "kind"}
    if "free" in options and options["free"] is not None:
        options["free"] = tuple(options["free"])
    return make_model(str(config["kind"]), **options)
