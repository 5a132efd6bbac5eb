"""Shared fixtures and the acceptance-checklist report.

The long Monte Carlo scenarios are session-scoped fixtures here because
several tests share one execution (the M1 scenario feeds both the limit-law
and the coverage checks; the two-stage scenarios feed the acceptance tests
and the estimator-consistency checks).  Acceptance tests register their
verdict through `record_criterion`; at the end of the run the collected
table prints one line per criterion so every pass/fail is visible at a
glance.
"""
from __future__ import annotations

import math

import pytest

from clse_lab import montecarlo

# ---------------------------------------------------------------------------
# acceptance reporting
# ---------------------------------------------------------------------------

_CRITERIA: dict[int, tuple[str, bool, str]] = {}


def record_criterion(number: int, label: str, passed: bool, detail: str = "") -> None:
    """Register one acceptance verdict for the end-of-run table."""
    _CRITERIA[number] = (label, bool(passed), detail)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        label, ok, detail = _CRITERIA[number]
        status = "PASS" if ok else "FAIL"
        suffix = f"  [{detail}]" if detail else ""
        terminalreporter.write_line(f"criterion {number:2d}: {status} — {label}{suffix}")


# ---------------------------------------------------------------------------
# shared Monte Carlo scenarios
# ---------------------------------------------------------------------------

M1_LIMIT_SCENARIO = montecarlo.Scenario(
    name="m1-limit-law",
    model={"kind": "pcr_m1", "params": {"k": 500.0}, "n0": 20, "steps": 3000},
    estimator={"kind": "clse", "model": {"kind": "pcr_m1"}, "box": [[100.0, 1500.0]]},
    theta0=[500.0],
    reps=300,
    base_seed=502026,
    scaling={"kind": "m1_root_n"},
    reference={"kind": "std_normal"},
    ci={"level": 0.95},
)

_M3_MODEL = {
    "kind": "pcr_m3",
    "params": {"k": 500.0, "alpha": 0.25, "s": 20.0},
    "n0": 20,
    "steps": 3000,
}

M3_SCALAR_SCENARIO = montecarlo.Scenario(
    name="m3-two-stage-scalar",
    model=dict(_M3_MODEL),
    estimator={
        "kind": "two_stage",
        "pilot": 3000,
        "n": 3000,
        "stage1_box": [[100.0, 1500.0], [1.0, 4.0], [0.05, 0.45]],
        "stage2_box": [[100.0, 1500.0]],
        "stage1_optimizer": {"grid_resolution": 9},
    },
    theta0=[500.0],
    reps=300,
    base_seed=602026,
    # the target law scales the error by sqrt(n) / sqrt(2 K0)
    scaling={"kind": "m1_root_n", "noise_scale": math.sqrt(2.0 * 500.0)},
    reference={"kind": "std_normal"},
)

M3_PAIR_SCENARIO = montecarlo.Scenario(
    name="m3-two-stage-pair",
    model=dict(_M3_MODEL),
    estimator={
        "kind": "two_stage",
        "pilot": 3000,
        "n": 3000,
        "mode": "pair",
        "stage1_box": [[100.0, 1500.0], [1.0, 4.0], [0.05, 0.45]],
        "stage2_box": [[100.0, 1500.0], [1.0, 4.0]],
        "stage1_optimizer": {"grid_resolution": 9},
    },
    theta0=[500.0, 20.0**0.25],
    reps=300,
    base_seed=702026,
    # info_root's default divisor sqrt(theta0[0] / 2) is the per-coordinate
    # sqrt(K0 / 2) unit of the target law
    scaling={"kind": "info_root"},
)

BGW_MIXTURE_SCENARIO = montecarlo.Scenario(
    name="bgw-mixture-limit",
    model={"kind": "bgw", "law": "binary", "param": 0.5, "n0": 3, "steps": 25},
    estimator={"kind": "harris"},
    theta0=[1.5],
    reps=500,
    base_seed=802026,
    scaling={"kind": "psi_observable"},
    reference={
        "kind": "bgw_mixture",
        "m0": 1.5,
        "sigma0_sq": 0.25,
        "n0": 3,
        "reps": 10000,
        "horizon": 30,
        "seed": 4242,
    },
)


@pytest.fixture(scope="session")
def m1_limit_run():
    return montecarlo.run_mc(M1_LIMIT_SCENARIO, workers=1)


@pytest.fixture(scope="session")
def m3_scalar_run():
    return montecarlo.run_mc(M3_SCALAR_SCENARIO, workers=1)


@pytest.fixture(scope="session")
def m3_pair_run():
    return montecarlo.run_mc(M3_PAIR_SCENARIO, workers=1)


@pytest.fixture(scope="session")
def bgw_mixture_run():
    return montecarlo.run_mc(BGW_MIXTURE_SCENARIO, workers=1)
