"""Replicated simulation studies with worker-count-independent results.

A `Scenario` is a JSON-serializable description of one study: a simulator
config, an estimator config, the truth point, a standardization rule for
the estimation error, an optional reference law to test against, and an
optional confidence-interval check.  `run_mc` executes the replicates —
inline or on a process pool — and reduces them to a `MonteCarloSummary`.

Determinism contract: replicate ``r`` always runs with the seed
``mix_seed(base_seed, r)``, and the reduction only depends on the ordered
list of replicate outcomes, so the summary (and the samples table) is
bit-identical for any worker count.  Wall time is recorded on the summary
object but deliberately kept out of its serialized record.
"""
from __future__ import annotations

import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

import numpy as np
from scipy.special import erfc

from . import asymptotics, estimators, io, rng
from .models import BranchingMean, Trajectory, model_from_config, simulate_arch, simulate_bgw, simulate_pcr

logger = logging.getLogger(__name__)

_ESTIMATOR_KINDS = ("clse", "qle", "harris", "lotka_nagaev", "two_stage")
_SCALING_KINDS = ("none", "m1_root_n", "phi_scalar", "info_root", "psi_observable")
_REFERENCE_KINDS = ("none", "std_normal", "bgw_mixture")
_BRANCHING_KINDS = ("bgw", "pcr_m1", "pcr_m2", "pcr_m3")

SAMPLES_HEADER = "replicate,coordinate,value"


# ---------------------------------------------------------------------------
# distribution utilities
# ---------------------------------------------------------------------------


def normal_cdf(x):
    """Standard normal distribution function, elementwise."""
    arr = np.asarray(x, dtype=np.float64)
    out = 0.5 * erfc(-arr / math.sqrt(2.0))
    if np.isscalar(x) or arr.ndim == 0:
        return float(out)
    return out


def ks_statistic(samples: np.ndarray, reference_cdf: Callable) -> float:
    """Kolmogorov-Smirnov distance of a sample to a reference law.

    Uses the order-statistic form
    ``D = max_i max(i/n - F(x_(i)), F(x_(i)) - (i-1)/n)``.
    """
    x = np.sort(np.asarray(samples, dtype=np.float64).ravel())
    n = x.shape[0]
    if n == 0:
        raise ValueError("cannot compute a distribution distance of an empty sample")
    f = np.asarray(reference_cdf(x), dtype=np.float64)
    i = np.arange(1, n + 1, dtype=np.float64)
    return float(np.max(np.maximum(i / n - f, f - (i - 1.0) / n)))


def ecdf(reference: np.ndarray) -> Callable:
    """Empirical distribution function of a reference sample, as a callable."""
    ref = np.sort(np.asarray(reference, dtype=np.float64).ravel())
    if ref.shape[0] == 0:
        raise ValueError("reference sample is empty")

    def cdf(x):
        return np.searchsorted(ref, np.asarray(x, dtype=np.float64), side="right") / ref.shape[0]

    return cdf


def coverage(intervals: Sequence, theta0: np.ndarray) -> np.ndarray:
    """Per-coordinate fraction of intervals containing the truth.

    ``intervals`` is a sequence over replicates of per-coordinate
    ``(low, high)`` pairs.
    """
    theta0 = np.atleast_1d(np.asarray(theta0, dtype=np.float64))
    arr = np.asarray(intervals, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[1:] != (theta0.shape[0], 2):
        raise ValueError(
            f"intervals must have shape (reps, {theta0.shape[0]}, 2), got {arr.shape}"
        )
    if np.any(arr[:, :, 0] > arr[:, :, 1]):
        raise ValueError("interval lower bounds must not exceed upper bounds")
    hit = (arr[:, :, 0] <= theta0) & (theta0 <= arr[:, :, 1])
    return hit.mean(axis=0)


# ---------------------------------------------------------------------------
# scenario description
# ---------------------------------------------------------------------------


@dataclass
class Scenario:
    """One replicated study, fully described by plain JSON-able data.

    Fields
    ------
    model : dict
        Simulator config.  ``{"kind": "bgw", "law", "param", "n0", "steps"}``,
        ``{"kind": "pcr_m1"|"pcr_m2"|"pcr_m3", "params": {...}, "n0", "steps"}``
        or ``{"kind": "arch", "alpha0", "alpha1", "xi0", "steps"}``.
    estimator : dict
        ``kind`` one of clse / qle / harris / lotka_nagaev / two_stage plus
        the matching arguments (fit-model config, box(es), window, optimizer
        knobs; pilot length / mode / s_sat for two_stage).
    theta0 : list of float
        Truth point, in the fit model's coordinate order.
    scaling : dict
        How to standardize ``theta_hat - theta0`` per replicate: ``kind``
        in none / m1_root_n / phi_scalar / info_root / psi_observable, with
        an optional explicit ``noise_scale`` divisor.
    reference : dict
        Law the scalar standardized sample is tested against: ``kind`` in
        none / std_normal / bgw_mixture (the latter with the limit-sampler
        arguments).
    ci : dict or None
        ``{"level": q}`` adds a per-replicate Wald interval check.
    nonextinction : str
        Policy for absorbed branching paths; only ``"exclude"`` is defined.
    """

    name: str
    model: dict
    estimator: dict
    theta0: list
    reps: int
    base_seed: int
    scaling: dict = field(default_factory=lambda: {"kind": "none"})
    reference: dict = field(default_factory=lambda: {"kind": "none"})
    ci: dict | None = None
    nonextinction: str = "exclude"

    def validate(self) -> None:
        if self.reps < 1:
            raise ValueError("reps must be at least 1")
        if self.base_seed < 0:
            raise ValueError("base_seed must be non-negative")
        if not self.theta0:
            raise ValueError("theta0 must be nonempty")
        if self.estimator.get("kind") not in _ESTIMATOR_KINDS:
            raise ValueError(f"estimator kind must be one of {_ESTIMATOR_KINDS}")
        if self.scaling.get("kind") not in _SCALING_KINDS:
            raise ValueError(f"scaling kind must be one of {_SCALING_KINDS}")
        if self.reference.get("kind") not in _REFERENCE_KINDS:
            raise ValueError(f"reference kind must be one of {_REFERENCE_KINDS}")
        if self.ci is not None and not 0.0 < float(self.ci["level"]) < 1.0:
            raise ValueError("ci level must lie in (0, 1)")
        if self.nonextinction != "exclude":
            raise ValueError("only the 'exclude' nonextinction policy is defined")
        if int(self.model.get("steps", 0)) < 2:
            raise ValueError("scenario paths need at least 2 steps")
        if self.model.get("kind") in _BRANCHING_KINDS and self.model.get("n0", 0) < 1:
            raise ValueError("branching scenarios need n0 >= 1")

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "model": io.jsonable(self.model),
            "estimator": io.jsonable(self.estimator),
            "theta0": [float(v) for v in self.theta0],
            "reps": int(self.reps),
            "base_seed": int(self.base_seed),
            "scaling": io.jsonable(self.scaling),
            "reference": io.jsonable(self.reference),
            "ci": None if self.ci is None else io.jsonable(self.ci),
            "nonextinction": self.nonextinction,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Scenario":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(data) - known
        if extra:
            raise ValueError(f"unknown scenario field(s): {sorted(extra)}")
        missing = {"name", "model", "estimator", "theta0", "reps", "base_seed"} - set(data)
        if missing:
            raise ValueError(f"scenario is missing field(s): {sorted(missing)}")
        return cls(**dict(data))


def replicate_seed(scenario: Scenario, r: int) -> int:
    """Seed replicate ``r`` runs with, independent of worker count."""
    return rng.mix_seed(scenario.base_seed, r)


def replicate_plan(scenario: Scenario) -> list[tuple[int, int]]:
    """(replicate, seed) table — what `run_mc` will execute."""
    return [(r, replicate_seed(scenario, r)) for r in range(scenario.reps)]


# ---------------------------------------------------------------------------
# one replicate
# ---------------------------------------------------------------------------


def _simulate(model_cfg: Mapping[str, Any], seed: int) -> Trajectory:
    kind = model_cfg["kind"]
    if kind == "bgw":
        return simulate_bgw(
            law=model_cfg.get("law", "binary"),
            param=model_cfg["param"],
            n0=model_cfg["n0"],
            steps=model_cfg["steps"],
            seed=seed,
        )
    if kind in ("pcr_m1", "pcr_m2", "pcr_m3"):
        return simulate_pcr(
            model=kind.removeprefix("pcr_"),
            params=model_cfg["params"],
            n0=model_cfg["n0"],
            steps=model_cfg["steps"],
            seed=seed,
        )
    if kind == "arch":
        return simulate_arch(
            alpha0=model_cfg["alpha0"],
            alpha1=model_cfg["alpha1"],
            steps=model_cfg["steps"],
            seed=seed,
            xi0=model_cfg.get("xi0", 0.0),
        )
    raise ValueError(f"unknown simulator kind {kind!r}")


def _optimizer(cfg: Mapping[str, Any] | None) -> estimators.OptimizerConfig | None:
    return None if cfg is None else estimators.OptimizerConfig(**cfg)


def _est_window(est: Mapping[str, Any], last: int) -> tuple[int, int]:
    if est.get("kind") == "two_stage":
        return (0, int(est.get("n") or last))
    w = est.get("window")
    return (0, last) if w is None else (int(w[0]), int(w[1]))


def _fit_model(est: Mapping[str, Any], nuisance: Mapping[str, float] | None):
    """Model object the fitted coordinates refer to (nuisances plugged in)."""
    kind = est["kind"]
    if kind in ("clse", "qle"):
        return model_from_config(est["model"])
    if kind in ("harris", "lotka_nagaev"):
        return BranchingMean(law=est.get("law", "binary"))
    # two_stage
    from .models import AmplificationPowerDecay

    s_sat = est.get("s_sat", 0.0)
    if est.get("mode", "scalar") == "scalar":
        return AmplificationPowerDecay(free=("k",), fixed=dict(nuisance), s_sat=s_sat)
    return AmplificationPowerDecay(
        free=("k", "s_alpha"), fixed={"alpha": nuisance["alpha"]}, s_sat=s_sat
    )


def _estimate(traj: Trajectory, est: Mapping[str, Any]):
    """Run the configured estimator: (theta_hat, nuisance, converged, message)."""
    kind = est["kind"]
    window = est.get("window")
    window = None if window is None else (int(window[0]), int(window[1]))
    if kind == "clse":
        res = estimators.clse(
            traj,
            model_from_config(est["model"]),
            est["box"],
            window=window,
            config=_optimizer(est.get("optimizer")),
        )
        return res.theta_hat, res.nuisance, res.converged, res.message
    if kind == "qle":
        res = estimators.qle(
            traj,
            model_from_config(est["model"]),
            est["box"],
            window=window,
            config=_optimizer(est.get("optimizer")),
        )
        return res.theta_hat, res.nuisance, res.converged, res.message
    if kind == "harris":
        value = estimators.harris_closed_form(traj, window=window)
        return np.array([value]), None, True, ""
    if kind == "lotka_nagaev":
        value = estimators.lotka_nagaev(traj)
        return np.array([value]), None, True, ""
    # two_stage
    last = traj.values.shape[0] - 1
    res = estimators.two_stage_pcr(
        traj,
        n0=int(est["pilot"]),
        n=int(est.get("n") or last),
        stage1_box=est.get("stage1_box"),
        stage2_box=est["stage2_box"],
        mode=est.get("mode", "scalar"),
        s_sat=est.get("s_sat", 0.0),
        config=_optimizer(est.get("optimizer")),
        stage1_config=_optimizer(est.get("stage1_optimizer")),
        stage1_nuisance=est.get("stage1_nuisance"),
    )
    converged = res.stage2.converged and (res.stage1 is None or res.stage1.converged)
    message = res.stage2.message or (res.stage1.message if res.stage1 else "")
    return res.stage2.theta_hat, res.nuisance, converged, message


def _standardize(
    scaling: Mapping[str, Any],
    theta_hat: np.ndarray,
    theta0: np.ndarray,
    traj: Trajectory,
    est: Mapping[str, Any],
    nuisance: Mapping[str, float] | None,
    window: tuple[int, int],
) -> np.ndarray:
    kind = scaling.get("kind", "none")
    diff = theta_hat - theta0
    h, n = window
    if kind == "none":
        return diff
    if kind == "m1_root_n":
        noise = scaling.get("noise_scale")
        noise = math.sqrt(theta0[0]) if noise is None else float(noise)
        return np.array([math.sqrt(n - h) * diff[0] / noise])
    noise = scaling.get("noise_scale")
    noise = math.sqrt(theta0[0] / 2.0) if noise is None else float(noise)
    if kind == "phi_scalar":
        phi = asymptotics.phi_scaling(
            "m3",
            1,
            n - h,
            k_cap=theta0[0],
            alpha_hat=nuisance["alpha"],
            s_alpha_hat=nuisance["s_alpha"],
        )
        return np.array([phi.scalar * diff[0] / noise])
    if kind == "info_root":
        model = _fit_model(est, nuisance)
        info = asymptotics.info_matrix(model, traj, theta0, window=window)
        root = asymptotics.sqrtm_spd(info.matrix)
        return root @ diff / noise
    if kind == "psi_observable":
        m0 = theta0[0]
        parents = traj.values[h:n].astype(np.float64)
        denom = math.sqrt(math.fsum(parents.tolist()))
        num = (n - h) if m0 == 1.0 else (m0**n - m0**h) / (m0 - 1.0)
        return np.array([num / denom * diff[0]])
    raise ValueError(f"unknown scaling kind {kind!r}")


def _run_replicate(scenario: Scenario, r: int) -> dict[str, Any]:
    seed = replicate_seed(scenario, r)
    traj = _simulate(scenario.model, seed)
    if scenario.model.get("kind") in _BRANCHING_KINDS and traj.values[-1] == 0:
        return {"replicate": r, "status": "excluded", "sample": None, "covered": None}
    theta0 = np.asarray(scenario.theta0, dtype=np.float64)
    try:
        theta_hat, nuisance, converged, message = _estimate(traj, scenario.estimator)
        if not converged:
            return {
                "replicate": r,
                "status": "failed",
                "sample": None,
                "covered": None,
                "message": message or "estimator did not converge",
            }
        window = _est_window(scenario.estimator, traj.values.shape[0] - 1)
        sample = _standardize(
            scenario.scaling, theta_hat, theta0, traj, scenario.estimator, nuisance, window
        )
        covered = None
        if scenario.ci is not None:
            model = _fit_model(scenario.estimator, nuisance)
            info = asymptotics.info_matrix(model, traj, theta_hat, window=window)
            if not info.singular:
                var = estimators.estimate_variance_nuisance(
                    traj, model, theta_hat, window=window
                )
                cis = asymptotics.wald_ci(
                    theta_hat, info, var.sigma2, float(scenario.ci["level"])
                )
                covered = [bool(lo <= t <= hi) for (lo, hi), t in zip(cis, theta0)]
    except (ValueError, KeyError, OverflowError, np.linalg.LinAlgError, RuntimeError) as exc:
        return {
            "replicate": r,
            "status": "failed",
            "sample": None,
            "covered": None,
            "message": f"{type(exc).__name__}: {exc}",
        }
    return {
        "replicate": r,
        "status": "ok",
        "sample": [float(v) for v in np.atleast_1d(sample)],
        "covered": covered,
    }


def _worker(args: tuple[dict, int]) -> dict[str, Any]:
    scenario_dict, r = args
    return _run_replicate(Scenario.from_dict(scenario_dict), r)


# ---------------------------------------------------------------------------
# reduction
# ---------------------------------------------------------------------------


@dataclass
class MonteCarloSummary:
    """Ordered reduction of a scenario's replicates.

    ``wall_time`` is measurement metadata: it stays off `to_record` so that
    reruns of the same scenario serialize identically.
    """

    scenario: dict
    reps: int
    n_used: int
    n_excluded: int
    n_failed: int
    replicate_ids: np.ndarray
    samples: np.ndarray
    mean: np.ndarray
    variance: np.ndarray
    correlation: float | None
    ks: float | None
    coverage_rate: list | None
    n_ci: int
    failed: bool
    messages: list[str]
    wall_time: float

    def to_record(self) -> dict[str, Any]:
        def _num(v):
            # non-finite stats (e.g. variance of a single replicate) are not
            # JSON numbers; record them as null
            return None if v is None or not math.isfinite(v) else float(v)

        return {
            "scenario": self.scenario,
            "reps": int(self.reps),
            "n_used": int(self.n_used),
            "n_excluded": int(self.n_excluded),
            "n_failed": int(self.n_failed),
            "mean": [_num(v) for v in self.mean],
            "variance": [_num(v) for v in self.variance],
            "correlation": _num(self.correlation),
            "ks": _num(self.ks),
            "coverage": None
            if self.coverage_rate is None
            else [float(v) for v in self.coverage_rate],
            "n_ci": int(self.n_ci),
            "failed": bool(self.failed),
            "messages": list(self.messages),
        }


def resolve_workers(workers: int | None) -> int:
    """Explicit argument, else the CLSE_LAB_WORKERS variable, else CPU count."""
    if workers is None:
        env = os.environ.get("CLSE_LAB_WORKERS", "").strip()
        workers = int(env) if env else (os.cpu_count() or 1)
    workers = int(workers)
    if workers < 1:
        raise ValueError("workers must be at least 1")
    return workers


def reference_cdf(reference: Mapping[str, Any]) -> Callable | None:
    """Resolve a scenario reference config to a distribution function."""
    kind = reference.get("kind", "none")
    if kind == "none":
        return None
    if kind == "std_normal":
        return normal_cdf
    if kind == "bgw_mixture":
        sample = asymptotics.sample_bgw_limit(
            m0=reference["m0"],
            sigma0_sq=reference["sigma0_sq"],
            n0=reference["n0"],
            reps=reference["reps"],
            horizon=reference.get("horizon", 30),
            seed=reference.get("seed", 0),
        )
        return ecdf(sample.ratios)
    raise ValueError(f"unknown reference kind {kind!r}")


def run_mc(scenario: Scenario, workers: int | None = None) -> MonteCarloSummary:
    """Execute every replicate of a scenario and reduce the results.

    Replicates are seeded individually, so any worker count produces the
    same summary; pools only change wall time.  Absorbed branching paths
    are excluded (and counted), estimator non-convergence or numerical
    failure marks a replicate failed, and the summary's ``failed`` flag
    trips when more than 5% of replicates fail.
    """
    scenario.validate()
    workers = resolve_workers(workers)
    t0 = time.perf_counter()
    sdict = scenario.to_dict()
    args = [(sdict, r) for r in range(scenario.reps)]
    if workers == 1:
        records = [_worker(a) for a in args]
    else:
        chunk = max(1, scenario.reps // (workers * 4))
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_worker, args, chunksize=chunk))

    n_excluded = sum(1 for rec in records if rec["status"] == "excluded")
    n_failed = sum(1 for rec in records if rec["status"] == "failed")
    messages = sorted(
        {rec["message"] for rec in records if rec["status"] == "failed" and rec.get("message")}
    )
    ok = [rec for rec in records if rec["status"] == "ok"]
    if not ok:
        raise RuntimeError(
            f"scenario {scenario.name!r}: no usable replicate "
            f"({n_excluded} excluded, {n_failed} failed)"
        )
    samples = np.array([rec["sample"] for rec in ok], dtype=np.float64)
    replicate_ids = np.array([rec["replicate"] for rec in ok], dtype=np.int64)
    n_used, dim = samples.shape
    # statistics run on a sorted copy so the reduction is insensitive to the
    # order replicates finish in (the samples table keeps replicate order)
    stats = samples[np.lexsort(samples.T[::-1])]
    mean = stats.mean(axis=0)
    variance = (
        stats.var(axis=0, ddof=1) if n_used >= 2 else np.full(dim, math.nan)
    )
    correlation = None
    if dim == 2 and n_used >= 2:
        sd = stats.std(axis=0, ddof=1)
        if np.all(sd > 0):
            centered = stats - mean
            correlation = float(
                (centered[:, 0] * centered[:, 1]).sum() / ((n_used - 1) * sd[0] * sd[1])
            )
        else:
            correlation = math.nan
    ks = None
    ref = reference_cdf(scenario.reference)
    if ref is not None and dim == 1:
        ks = ks_statistic(stats[:, 0], ref)
    cov = None
    with_ci = [rec for rec in ok if rec["covered"] is not None]
    if with_ci:
        hits = np.array([rec["covered"] for rec in with_ci], dtype=np.float64)
        cov = [float(v) for v in hits.mean(axis=0)]
    failed_flag = n_failed > 0.05 * scenario.reps
    if failed_flag:
        logger.warning(
            "scenario %s: %d of %d replicates failed", scenario.name, n_failed, scenario.reps
        )
    return MonteCarloSummary(
        scenario=sdict,
        reps=scenario.reps,
        n_used=n_used,
        n_excluded=n_excluded,
        n_failed=n_failed,
        replicate_ids=replicate_ids,
        samples=samples,
        mean=mean,
        variance=variance,
        correlation=correlation,
        ks=ks,
        coverage_rate=cov,
        n_ci=len(with_ci),
        failed=failed_flag,
        messages=messages,
        wall_time=time.perf_counter() - t0,
    )


def samples_csv_text(summary: MonteCarloSummary) -> str:
    """Long-format table of the standardized samples, in replicate order."""
    lines = [SAMPLES_HEADER]
    for rid, row in zip(summary.replicate_ids, summary.samples):
        for j, v in enumerate(row):
            lines.append(f"{int(rid)},{j},{io.format_number(float(v))}")
    return "\n".join(lines) + "\n"


def write_samples_csv(path, summary: MonteCarloSummary) -> None:
    io.atomic_write_text(path, samples_csv_text(summary))
