"""Diagnostics: separation profiles, condition ratios, sequence lemmas, probes."""
from __future__ import annotations

import math

import numpy as np
import pytest

from clse_lab import rng
from clse_lab.diagnostics import (
    ThetaGrid,
    an_ratio,
    bgw_sllnsm_probe,
    bgw_variance_probe,
    diagnostics_report,
    identifiability_profile,
    lemma_a2_bound,
    lemma_a3_identity,
    objective_decomposition,
    rat_ratio,
    sllnsm_ratio,
    unc_ratio,
    var_condition_sum,
)
from clse_lab.estimators import estimate_variance_nuisance, harris_closed_form
from clse_lab.models import (
    BranchingMean,
    make_model,
    normalize,
    replication_prob,
    simulate_arch,
    simulate_bgw,
    simulate_pcr,
)


def _bgw_grid(points, theta0=1.5, delta=0.1):
    return ThetaGrid(
        theta0=np.array([theta0]), points=np.array([[p] for p in points]), delta=delta
    )


def _mean_path_m1(k: float, n0: float, steps: int) -> np.ndarray:
    vals = [float(n0)]
    for _ in range(steps):
        vals.append((1.0 + replication_prob("m1", {"k": k}, vals[-1])) * vals[-1])
    return np.array(vals)


# ---------------------------------------------------------------------------
# theta grid
# ---------------------------------------------------------------------------


def test_grid_build_marks_the_exclusion_region():
    grid = ThetaGrid.build(np.array([1.5]), [(1.0, 2.0)], 11, delta=0.2)
    assert grid.n_points == 11
    dist = np.abs(grid.points[:, 0] - 1.5)
    np.testing.assert_array_equal(grid.outside, dist >= 0.2)
    assert grid.metadata()["n_outside"] == int(np.count_nonzero(grid.outside))


def test_grid_build_rejects_bad_arguments():
    with pytest.raises(ValueError, match="one \\(low, high\\) pair"):
        ThetaGrid.build(np.array([1.5]), [(1.0, 2.0), (0.0, 1.0)], 5, delta=0.1)
    with pytest.raises(ValueError, match="resolution must be at least 2"):
        ThetaGrid.build(np.array([1.5]), [(1.0, 2.0)], 1, delta=0.1)
    with pytest.raises(ValueError, match="delta must be positive"):
        ThetaGrid.build(np.array([1.5]), [(1.0, 2.0)], 5, delta=0.0)
    with pytest.raises(ValueError, match="no point outside"):
        ThetaGrid.build(np.array([1.5]), [(1.4, 1.6)], 3, delta=5.0)
    with pytest.raises(ValueError, match="exceeds the cap"):
        ThetaGrid.build(np.array([1.0, 1.0, 1.0]), [(0.0, 1.0)] * 3, 34, delta=0.1)


# ---------------------------------------------------------------------------
# identifiability
# ---------------------------------------------------------------------------


def test_identifiability_branching_closed_form():
    # d_k = (m0 - m) sqrt(N_{k-1}), so D_n = (m0 - m)^2 * sum N_{k-1}
    traj = simulate_bgw("binary", 0.5, 3, 40, seed=11)
    grid = _bgw_grid([1.2, 1.8])
    prof = identifiability_profile(BranchingMean(), traj, grid, [10, 25, 40])
    prev = traj.values[:-1].astype(float)
    for j, m in enumerate((1.2, 1.8)):
        for i, n in enumerate((10, 25, 40)):
            expected = (1.5 - m) ** 2 * math.fsum(prev[:n].tolist())
            assert prof.d_n[j, i] == pytest.approx(expected, rel=1e-12)


def test_identifiability_profile_is_nondecreasing_and_positive():
    traj = simulate_bgw("binary", 0.5, 3, 60, seed=12)
    grid = _bgw_grid([1.2, 1.35, 1.65, 1.8])
    prof = identifiability_profile(BranchingMean(), traj, grid, [5, 15, 30, 60])
    assert np.all(np.diff(prof.d_n, axis=1) >= 0)
    assert np.all(prof.inf_outside > 0)
    assert np.all(np.diff(prof.inf_outside) >= 0)


def test_identifiability_inf_ignores_points_inside_the_ball():
    traj = simulate_bgw("binary", 0.5, 3, 20, seed=13)
    # 1.52 sits inside the delta-ball and must not drag the infimum down
    grid = _bgw_grid([1.52, 1.2, 1.8])
    prof = identifiability_profile(BranchingMean(), traj, grid, [20])
    np.testing.assert_array_equal(grid.outside, [False, True, True])
    assert prof.inf_outside[0] == pytest.approx(min(prof.d_n[1, 0], prof.d_n[2, 0]), rel=1e-15)
    assert prof.d_n[0, 0] < prof.inf_outside[0]


# ---------------------------------------------------------------------------
# variance condition sums
# ---------------------------------------------------------------------------


def test_var_condition_vanishes_at_the_truth_point():
    traj = simulate_bgw("binary", 0.5, 3, 30, seed=14)
    grid = _bgw_grid([1.5, 1.9])
    res = var_condition_sum(BranchingMean(), traj, grid)
    assert res.per_point[0] == 0.0
    assert res.per_point[1] > 0.0
    assert res.sup_outside == res.per_point[1]


def test_var_condition_constant_path_partial_sum():
    # constant separation: terms reduce to (sigma^2/d^2) * sum 1/k^2
    n, c, m = 10_000, 4.0, 1.2
    values = np.full(n + 1, c)
    grid = _bgw_grid([m])
    res = var_condition_sum(BranchingMean(), values, grid, n=n)
    d2 = (1.5 - m) ** 2 * c
    sig2 = 0.25  # binary offspring variance at m0 = 1.5
    expected = (sig2 / d2) * math.fsum(1.0 / k**2 for k in range(1, n + 1))
    assert res.per_point[0] == pytest.approx(expected, rel=1e-12)
    # ... and sits within 1% of the series limit sigma^2 pi^2 / (6 d^2)
    assert res.per_point[0] == pytest.approx(sig2 * math.pi**2 / (6.0 * d2), rel=1e-2)


def test_var_condition_respects_the_reciprocal_square_bound():
    traj = simulate_bgw("binary", 0.5, 3, 50, seed=15)
    prev = traj.values[:-1].astype(float)
    grid = _bgw_grid([1.2, 1.8])
    res = var_condition_sum(BranchingMean(), traj, grid, sigma2=1.0)
    for j, m in enumerate((1.2, 1.8)):
        d_sq = (1.5 - m) ** 2 * prev
        _, bound = lemma_a2_bound(d_sq)
        assert res.per_point[j] <= bound * (1.0 + 1e-12)


def test_var_condition_sigma_override_and_range_check():
    traj = simulate_bgw("binary", 0.5, 3, 30, seed=16)
    grid = _bgw_grid([1.8])
    doubled = var_condition_sum(BranchingMean(), traj, grid, sigma2=0.5)
    base = var_condition_sum(BranchingMean(), traj, grid, sigma2=0.25)
    assert doubled.per_point[0] == pytest.approx(2.0 * base.per_point[0], rel=1e-12)
    with pytest.raises(ValueError, match="n must lie in"):
        var_condition_sum(BranchingMean(), traj, grid, n=0)


# ---------------------------------------------------------------------------
# uniform ratio conditions
# ---------------------------------------------------------------------------


def test_sllnsm_single_point_is_the_direct_ratio():
    traj = simulate_bgw("binary", 0.5, 3, 30, seed=41)
    path = normalize(traj, BranchingMean(), np.array([1.5]))
    prev = traj.values[:-1].astype(float)
    grid = _bgw_grid([1.3])
    series = sllnsm_ratio(BranchingMean(), traj, grid, [30])
    d = (1.5 - 1.3) * np.sqrt(prev)
    direct = abs(math.fsum((path.resid * d).tolist())) / math.fsum((d * d).tolist())
    assert series.sup[0] == pytest.approx(direct, rel=1e-12)
    assert not series.undefined[0] and series.skipped_points[0] == 0


def test_sllnsm_vanishes_on_the_mean_surface():
    values = _mean_path_m1(500.0, 30.0, 60)
    grid = ThetaGrid(theta0=np.array([500.0]), points=np.array([[420.0], [580.0]]), delta=50.0)
    series = sllnsm_ratio(make_model("pcr_m1"), values, grid, [20, 60])
    assert np.all(series.sup <= 1e-9)


def test_sllnsm_flags_undefined_when_every_point_is_skipped():
    grid = _bgw_grid([1.3])
    series = sllnsm_ratio(BranchingMean(), np.array([0.0, 0.0, 0.0]), grid, [2])
    assert series.undefined[0]
    assert math.isnan(series.sup[0])
    assert series.skipped_points[0] == 1


def test_rat_ratio_exact_cases():
    traj = simulate_bgw("binary", 0.5, 3, 40, seed=42)
    grid = _bgw_grid([1.2, 1.8])
    whole = rat_ratio(BranchingMean(), traj, grid, h=0, n=40)
    assert whole.value == 1.0 and not whole.undefined
    const = rat_ratio(BranchingMean(), np.full(41, 9.0), grid, h=10, n=40)
    assert const.value == pytest.approx(40.0 / 30.0, rel=1e-12)
    half = rat_ratio(BranchingMean(), traj, grid, h=20, n=40)
    assert math.isfinite(half.value) and half.value >= 1.0
    with pytest.raises(ValueError, match="need 0 <= h < n"):
        rat_ratio(BranchingMean(), traj, grid, h=40, n=40)


def test_an_ratio_matches_the_decay_formula():
    # grid over the capacity coordinate: the frozen part scales the own part
    # by s_alpha * prev**(-alpha), so the sup/inf ratio factorizes exactly
    model = make_model("pcr_m3", free=("k",), fixed={"s_alpha": 2.0, "alpha": 0.25})
    traj = simulate_pcr("m3", {"k": 500.0, "alpha": 0.25, "s": 16.0}, 20, 200, seed=71)
    grid = ThetaGrid(
        theta0=np.array([500.0]),
        points=np.array([[350.0], [430.0], [650.0]]),
        delta=50.0,
    )
    series = an_ratio(model, traj, grid, n=200)
    prev = traj.values[:-1].astype(float)
    base0 = 500.0 / (500.0 + prev)
    gaps = np.array([np.abs(base0 - k / (k + prev)) for k in (350.0, 430.0, 650.0)])
    formula = (gaps.max(axis=0) / gaps.min(axis=0)) * 2.0 * prev**-0.25
    np.testing.assert_allclose(series.ratios, formula, rtol=1e-10)
    assert not series.flagged.any()
    assert series.ratios[-1] < series.ratios[0]


def test_an_ratio_zero_when_the_frozen_part_vanishes():
    model = make_model("pcr_m3", free=("k",), fixed={"s_alpha": 0.0, "alpha": 0.25})
    traj = simulate_pcr("m3", {"k": 500.0, "alpha": 0.25, "s": 1.0}, 20, 50, seed=72)
    grid = ThetaGrid(theta0=np.array([500.0]), points=np.array([[350.0]]), delta=50.0)
    series = an_ratio(model, traj, grid, n=50)
    np.testing.assert_array_equal(series.ratios, np.zeros(50))


def test_an_ratio_requires_a_frozen_split():
    traj = simulate_bgw("binary", 0.5, 3, 20, seed=1)
    with pytest.raises(ValueError, match="no own/nuisance mean split"):
        an_ratio(BranchingMean(), traj, _bgw_grid([1.8]), n=20)


def test_unc_ratio_zero_and_parameter_free_gradient():
    traj = simulate_bgw("binary", 0.5, 3, 30, seed=2)
    t0 = np.array([1.5])
    assert unc_ratio(BranchingMean(), traj, t0, t0) == 0.0
    # the branching gradient sqrt(prev) does not depend on theta at all
    assert unc_ratio(BranchingMean(), traj, np.array([1.9]), t0) == 0.0


def test_unc_ratio_small_displacement_stays_small():
    traj = simulate_pcr("m3", {"k": 500.0, "alpha": 0.25, "s": 16.0}, 20, 1000, seed=72)
    t0 = np.array([500.0, 2.0, 0.25])
    assert unc_ratio(make_model("pcr_m3"), traj, 1.001 * t0, t0, n=1000) <= 1e-2


def test_unc_ratio_rejects_degenerate_windows():
    with pytest.raises(ValueError, match="every gradient denominator vanishes"):
        unc_ratio(BranchingMean(), np.array([0.0, 0.0, 0.0]), np.array([1.9]), np.array([1.5]))
    traj = simulate_bgw("binary", 0.5, 3, 10, seed=3)
    with pytest.raises(ValueError, match="n must lie in"):
        unc_ratio(BranchingMean(), traj, np.array([1.9]), np.array([1.5]), n=11)


# ---------------------------------------------------------------------------
# sequence lemmas
# ---------------------------------------------------------------------------


def test_lemma_a2_harmonic_square_value_and_bound():
    lhs, rhs = lemma_a2_bound(np.ones(10_000))
    assert lhs == pytest.approx(1.6448340718480599, rel=1e-12)
    assert rhs == pytest.approx(2.0 - 1e-4, rel=1e-15)
    assert lhs <= rhs


def test_lemma_a2_single_term_attains_the_bound():
    lhs, rhs = lemma_a2_bound(np.array([0.37]))
    assert lhs == rhs == pytest.approx(1.0 / 0.37, rel=1e-15)


def test_lemma_a2_random_sequences_never_violate():
    gen = rng.generator(1001)
    for _ in range(200):
        a = gen.uniform(0.01, 1.0, size=int(gen.integers(1, 60)))
        lhs, rhs = lemma_a2_bound(a)
        assert lhs <= rhs * (1.0 + 1e-12)


def test_lemma_a2_rejects_bad_sequences():
    with pytest.raises(ValueError, match="nonempty 1-d"):
        lemma_a2_bound(np.zeros((2, 2)))
    with pytest.raises(ValueError, match="nonnegative"):
        lemma_a2_bound(np.array([1.0, -1.0]))
    with pytest.raises(ValueError, match="a_1 must be positive"):
        lemma_a2_bound(np.array([0.0, 1.0]))


def test_lemma_a3_identity_cases():
    lhs, rhs = lemma_a3_identity(np.array([0.0, 0.7]), np.array([1.3]))
    assert lhs == rhs == pytest.approx(0.7 * 1.3**2, rel=1e-15)
    lhs, rhs = lemma_a3_identity(np.array([0.0, 1.0, -2.0]), np.zeros(2))
    assert lhs == rhs == 0.0
    gen = rng.generator(1002)
    for _ in range(200):
        n = int(gen.integers(1, 60))
        s = np.concatenate([[0.0], gen.normal(size=n)])
        d = gen.normal(size=n)
        lhs, rhs = lemma_a3_identity(s, d)
        assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-12)


def test_lemma_a3_rejects_bad_shapes():
    with pytest.raises(ValueError, match=r"len\(s\) = len\(d\) \+ 1"):
        lemma_a3_identity(np.array([0.0, 1.0]), np.array([1.0, 2.0]))
    with pytest.raises(ValueError, match="must start at S_1 = 0"):
        lemma_a3_identity(np.array([1.0, 2.0]), np.array([1.0]))


# ---------------------------------------------------------------------------
# objective decomposition
# ---------------------------------------------------------------------------


def test_decomposition_identity_on_branching_and_volatility_paths():
    cases = []
    for s in range(5):
        traj = simulate_bgw("binary", 0.5, 3, 50, seed=900 + s)
        cases.append((BranchingMean(), traj, np.array([1.5]), [1.2, 1.44, 1.81]))
    for s in range(5):
        traj = simulate_arch(1.0, 0.3, 50, seed=950 + s)
        cases.append((make_model("arch"), traj, np.array([1.0, 0.3]), [0.7, 1.1, 1.4]))
    for model, traj, theta0, firsts in cases:
        for first in firsts:
            theta = theta0.copy()
            theta[0] = first
            parts = objective_decomposition(model, traj, theta, theta0)
            assert parts["lhs"] == pytest.approx(parts["rhs"], rel=1e-10, abs=1e-12)
            assert parts["lhs"] == parts["s_theta"] - parts["s_theta0"]
            assert parts["rhs"] == parts["d_n"] + 2.0 * parts["l_n"]


def test_decomposition_at_the_truth_is_identically_zero():
    traj = simulate_bgw("binary", 0.5, 3, 30, seed=903)
    parts = objective_decomposition(BranchingMean(), traj, np.array([1.5]), np.array([1.5]))
    assert parts["d_n"] == 0.0 and parts["l_n"] == 0.0 and parts["lhs"] == 0.0
    with pytest.raises(ValueError, match="must satisfy 0 <= h < n"):
        objective_decomposition(
            BranchingMean(), traj, np.array([1.2]), np.array([1.5]), window=(30, 30)
        )


# ---------------------------------------------------------------------------
# rescaled probes
# ---------------------------------------------------------------------------


def test_variance_probe_matches_the_direct_refit():
    for seed in (5, 17, 91):
        probe = bgw_variance_probe(0.5, 3, 45, seed=seed)
        traj = simulate_bgw("binary", 0.5, 3, 45, seed=seed)
        m_hat = harris_closed_form(traj)
        direct = estimate_variance_nuisance(traj, BranchingMean(), np.array([m_hat]))
        assert probe.m_hat == m_hat
        assert probe.sigma2_hat == pytest.approx(direct.sigma2, rel=1e-10)
        assert probe.switched_at is None


def test_variance_probe_deterministic_doubling():
    probe = bgw_variance_probe(1.0, 4, 10, seed=3)
    assert probe.m_hat == 2.0
    assert probe.sigma2_hat == 0.0


def test_variance_probe_switches_to_the_gaussian_phase():
    probe = bgw_variance_probe(0.5, 3, 200, seed=9)
    assert probe.switched_at is not None and 30 < probe.switched_at < 80
    assert math.isfinite(probe.sigma2_hat) and probe.sigma2_hat > 0
    assert probe.m_hat == pytest.approx(1.5, rel=1e-3)


def test_sllnsm_probe_matches_the_direct_ratio_below_threshold():
    p0, n0, delta_eff, seed = 0.5, 3, 0.1, 77
    probe = bgw_sllnsm_probe(p0, n0, [30], delta_eff, seed=seed)
    traj = simulate_bgw("binary", p0, n0, 30, seed=seed)
    path = normalize(traj, BranchingMean(), np.array([1.0 + p0]))
    prev = traj.values[:-1].astype(float)
    direct = abs(math.fsum((path.resid * np.sqrt(prev)).tolist())) / (
        delta_eff * math.fsum(prev.tolist())
    )
    assert probe.ratios[0] == pytest.approx(direct, rel=1e-9)


def test_probe_argument_validation():
    with pytest.raises(ValueError, match=r"p0 must lie in \(0, 1\]"):
        bgw_variance_probe(0.0, 3, 10, seed=1)
    with pytest.raises(ValueError, match="n0 must be at least 1"):
        bgw_variance_probe(0.5, 0, 10, seed=1)
    with pytest.raises(ValueError, match="n must be at least 1"):
        bgw_variance_probe(0.5, 3, 0, seed=1)
    with pytest.raises(ValueError, match="delta_eff must be positive"):
        bgw_sllnsm_probe(0.5, 3, [10], 0.0, seed=1)
    with pytest.raises(ValueError, match="checkpoints must be >= 1"):
        bgw_sllnsm_probe(0.5, 3, [0, 10], 0.1, seed=1)


# ---------------------------------------------------------------------------
# combined report
# ---------------------------------------------------------------------------


def test_diagnostics_report_structure_and_record():
    model = make_model("pcr_m3", free=("k",), fixed={"s_alpha": 2.0, "alpha": 0.25})
    traj = simulate_pcr("m3", {"k": 500.0, "alpha": 0.25, "s": 16.0}, 20, 120, seed=55)
    grid = ThetaGrid.build(np.array([500.0]), [(300.0, 700.0)], 9, delta=50.0)
    report = diagnostics_report(
        model, traj, grid, [30, 60, 120], theta_near=np.array([505.0])
    )
    assert np.all(np.diff(report.inf_d) >= 0)
    record = report.to_record()
    assert set(record) == {
        "checkpoints", "inf_d_outside", "var_sum_sup", "sllnsm_sup",
        "sllnsm_undefined", "rat_sup", "rat_undefined", "grid",
        "an_ratio_at_checkpoint", "unc_ratio",
    }
    assert record["checkpoints"] == [30, 60, 120]
    assert record["grid"]["n_points"] == 9
    assert len(record["an_ratio_at_checkpoint"]) == 3
    assert isinstance(record["unc_ratio"], float)


def test_diagnostics_report_omits_optional_pieces():
    traj = simulate_bgw("binary", 0.5, 3, 40, seed=56)
    grid = ThetaGrid.build(np.array([1.5]), [(1.0, 2.0)], 9, delta=0.2)
    record = diagnostics_report(BranchingMean(), traj, grid, [20, 40]).to_record()
    assert record["an_ratio_at_checkpoint"] is None
    assert record["unc_ratio"] is None
    with pytest.raises(ValueError, match="checkpoints must lie in"):
        diagnostics_report(BranchingMean(), traj, grid, [20, 41])
