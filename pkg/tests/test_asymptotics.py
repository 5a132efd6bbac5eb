"""Asymptotics: quantiles, information matrices, scalings, reference laws."""
from __future__ import annotations

import math

import numpy as np
import pytest

from clse_lab import rng
from clse_lab.asymptotics import (
    info_matrix,
    normal_quantile,
    phi_scaling,
    sample_bgw_limit,
    sqrtm_spd,
    standardized_error,
    wald_ci,
)
from clse_lab.estimators import clse
from clse_lab.models import BranchingMean, make_model, simulate_bgw, simulate_pcr
from clse_lab.montecarlo import normal_cdf

Z_975 = 1.9599639845400538


# ---------------------------------------------------------------------------
# scalar normal helpers
# ---------------------------------------------------------------------------


def test_normal_quantile_values_and_round_trip():
    assert normal_quantile(0.5) == 0.0
    assert normal_quantile(0.975) == pytest.approx(Z_975, rel=1e-12)
    assert normal_quantile(0.025) == pytest.approx(-Z_975, rel=1e-12)
    for p in (0.01, 0.1, 0.5, 0.84, 0.975, 0.999):
        assert normal_cdf(normal_quantile(p)) == pytest.approx(p, abs=1e-12)
    with pytest.raises(ValueError, match=r"strictly in \(0, 1\)"):
        normal_quantile(0.0)
    with pytest.raises(ValueError, match=r"strictly in \(0, 1\)"):
        normal_quantile(1.0)


def test_sqrtm_spd_diagonal_and_round_trip():
    np.testing.assert_array_equal(
        sqrtm_spd(np.array([[4.0, 0.0], [0.0, 9.0]])), [[2.0, 0.0], [0.0, 3.0]]
    )
    gen = rng.generator(8)
    for _ in range(10):
        b = gen.normal(size=(3, 3))
        spd = b @ b.T + 0.5 * np.eye(3)
        root = sqrtm_spd(spd)
        np.testing.assert_allclose(root @ root, spd, rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(root, root.T, rtol=0, atol=1e-12)
    with pytest.raises(ValueError, match="not symmetric"):
        sqrtm_spd(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(ValueError, match="negative eigenvalue"):
        sqrtm_spd(np.array([[1.0, 0.0], [0.0, -1.0]]))


# ---------------------------------------------------------------------------
# information matrix
# ---------------------------------------------------------------------------


def test_info_matrix_branching_is_the_parent_total():
    traj = simulate_bgw("binary", 0.5, 3, 40, seed=21)
    prev = traj.values[:-1].astype(float)
    full = info_matrix(BranchingMean(), traj, np.array([1.5]))
    assert full.matrix.shape == (1, 1)
    assert full.matrix[0, 0] == pytest.approx(math.fsum(prev.tolist()), rel=1e-14)
    assert full.inverse[0, 0] == pytest.approx(1.0 / full.matrix[0, 0], rel=1e-15)
    windowed = info_matrix(BranchingMean(), traj, np.array([1.5]), window=(10, 40))
    assert windowed.matrix[0, 0] == pytest.approx(math.fsum(prev[10:40].tolist()), rel=1e-14)
    assert windowed.n_used == 30
    assert not full.singular and full.null_basis is None
    assert math.isfinite(full.condition)


def test_info_matrix_is_symmetric_positive_semidefinite():
    traj = simulate_pcr("m3", {"k": 500.0, "alpha": 0.25, "s": 16.0}, 20, 300, seed=22)
    info = info_matrix(make_model("pcr_m3"), traj, np.array([500.0, 2.0, 0.25]))
    np.testing.assert_allclose(info.matrix, info.matrix.T, rtol=0, atol=1e-9)
    assert np.all(np.linalg.eigvalsh(info.matrix) >= -1e-9)


def test_info_matrix_flags_degenerate_gradients():
    # on a constant path the volatility gradients (1, prev) are collinear
    info = info_matrix(make_model("arch"), np.full(21, 2.0), np.array([1.0, 0.3]))
    assert info.singular
    assert info.null_basis is not None and info.null_basis.shape == (2, 1)
    np.testing.assert_allclose(info.matrix @ info.null_basis, 0.0, atol=1e-9)
    with pytest.raises(ValueError, match="inverse withheld"):
        info.inverse
    record = info.to_record()
    assert record["inverse"] is None and record["singular"]


def test_info_matrix_window_errors():
    traj = simulate_bgw("binary", 0.5, 3, 20, seed=23)
    with pytest.raises(ValueError, match="must satisfy 0 <= h < n"):
        info_matrix(BranchingMean(), traj, np.array([1.5]), window=(20, 20))
    with pytest.raises(ValueError, match="no usable steps"):
        info_matrix(BranchingMean(), np.array([0.0, 0.0, 0.0]), np.array([1.5]))


# ---------------------------------------------------------------------------
# deterministic scalings
# ---------------------------------------------------------------------------


def test_phi_scaling_closed_forms():
    n = 3000
    flat = phi_scaling("m3", 1, n, 500.0, 0.0, 2.0)
    assert flat.phi_sq[0, 0] == n * ((1.0 + 2.0) / 2.0) ** 2
    base = phi_scaling("m1", 1, n, 500.0, 0.0, 0.0)
    assert base.phi_sq[0, 0] == n / 4.0
    assert base.scalar == math.sqrt(n) / 2.0


def test_phi_scaling_decay_correction_washes_out():
    small = phi_scaling("m3", 1, 10_000, 500.0, 0.25, 0.01)
    assert small.phi_sq[0, 0] == pytest.approx(10_000 / 4.0, rel=1e-2)
    grow = [phi_scaling("m3", 1, n, 500.0, 0.25, 2.0).phi_sq[0, 0] for n in (10, 50, 200)]
    assert grow[0] < grow[1] < grow[2]


def test_phi_scaling_pair_skeleton_is_rank_one():
    pair = phi_scaling("m3", 2, 3000, 500.0, 0.25, 2.0)
    assert pair.phi_sq.shape == (2, 2)
    assert pair.phi_sq[0, 0] == 3000 / 4.0
    eigs = np.linalg.eigvalsh(pair.phi_sq)
    assert eigs[0] <= 1e-10 * eigs[1]
    # ... so it cannot be used as a direct standardization
    with pytest.raises(ValueError, match="order-skeleton scaling is singular"):
        standardized_error(np.array([1.0, 2.0]), np.array([0.9, 2.1]), pair)


def test_phi_scaling_log_boundary_and_validation():
    boundary = phi_scaling("m3", 2, 3000, 500.0, 0.5, 2.0)
    assert boundary.phi_sq[1, 1] == pytest.approx(0.25 * 500.0**2 * math.log(3000), rel=1e-14)
    with pytest.raises(ValueError, match="family must be"):
        phi_scaling("m2", 1, 100, 500.0, 0.25, 2.0)
    with pytest.raises(ValueError, match="p must be 1 or 2"):
        phi_scaling("m3", 3, 100, 500.0, 0.25, 2.0)
    with pytest.raises(ValueError, match="n must be at least 2"):
        phi_scaling("m3", 1, 1, 500.0, 0.25, 2.0)
    with pytest.raises(ValueError, match=r"alpha_hat must lie in \[0, 1/2\]"):
        phi_scaling("m3", 1, 100, 500.0, 0.6, 2.0)
    with pytest.raises(ValueError, match="k_cap must be positive"):
        phi_scaling("m3", 1, 100, 0.0, 0.25, 2.0)


# ---------------------------------------------------------------------------
# standardized errors
# ---------------------------------------------------------------------------


def test_standardized_error_arithmetic():
    zero = standardized_error(np.array([1.5]), np.array([1.5]), 7.0)
    assert zero.scalar == 0.0
    one = standardized_error(np.array([2.0]), np.array([1.0]), 3.0, s=1.0)
    two = standardized_error(np.array([2.0]), np.array([1.0]), 3.0, s=2.0)
    assert two.scalar == one.scalar / 2.0
    phi = phi_scaling("m1", 1, 3000, 500.0, 0.0, 0.0)
    via_phi = standardized_error(np.array([501.0]), np.array([500.0]), phi)
    assert via_phi.scalar == phi.scalar


def test_standardized_error_golden_capacity_chain():
    # one full simulate -> fit -> standardize chain, frozen as a regression anchor
    traj = simulate_pcr("m1", {"k": 500.0}, 20, 3000, seed=20260816)
    res = clse(traj, make_model("pcr_m1"), [(100.0, 1500.0)])
    err = standardized_error(
        res.theta_hat, np.array([500.0]), math.sqrt(3000.0), s=math.sqrt(500.0)
    )
    assert res.theta_hat[0] == pytest.approx(500.4834223119542, rel=1e-6)
    assert err.scalar == pytest.approx(1.1841379945643433, rel=1e-6)
    assert err.scalar == math.sqrt(3000.0) * (res.theta_hat[0] - 500.0) / math.sqrt(500.0)


def test_standardized_error_validation():
    with pytest.raises(ValueError, match="same shape"):
        standardized_error(np.array([1.0, 2.0]), np.array([1.0]), 1.0)
    with pytest.raises(ValueError, match="wrong shape"):
        standardized_error(np.array([1.0]), np.array([0.0]), np.eye(2))
    with pytest.raises(ValueError, match="must be finite"):
        standardized_error(np.array([1.0]), np.array([0.0]), math.nan)
    with pytest.raises(ValueError, match="must be symmetric"):
        standardized_error(
            np.array([1.0, 2.0]), np.array([0.0, 0.0]),
            np.array([[1.0, 0.5], [0.0, 1.0]]),
        )
    with pytest.raises(ValueError, match="positive definite"):
        standardized_error(
            np.array([1.0, 2.0]), np.array([0.0, 0.0]),
            np.array([[1.0, 1.0], [1.0, 1.0]]),
        )
    with pytest.raises(ValueError, match="s must be positive"):
        standardized_error(np.array([1.0]), np.array([0.0]), 1.0, s=0.0)


# ---------------------------------------------------------------------------
# mixture reference law
# ---------------------------------------------------------------------------


def test_limit_sample_growth_proxy_is_centered_on_the_start_size():
    sample = sample_bgw_limit(1.5, 0.25, 3, 4000, horizon=25, seed=99)
    stderr = sample.w_all.std(ddof=1) / math.sqrt(sample.reps)
    assert abs(float(sample.w_all.mean()) - 3.0) <= 3.0 * stderr
    # the two-point offspring law never dies, so every replicate survives
    assert sample.n_extinct == 0
    assert sample.ratios.shape == (4000,)
    assert np.all(sample.w_all > 0)


def test_limit_sample_degenerate_cases():
    no_noise = sample_bgw_limit(1.5, 0.0, 3, 50, horizon=10, seed=6)
    np.testing.assert_array_equal(no_noise.ratios, np.zeros(50))
    doubling = sample_bgw_limit(2.0, 0.25, 3, 50, horizon=10, seed=5)
    np.testing.assert_array_equal(doubling.w_all, np.full(50, 3.0))


def test_limit_sample_validation():
    with pytest.raises(ValueError, match=r"m0 must lie in \(1, 2\]"):
        sample_bgw_limit(1.0, 0.25, 3, 10)
    with pytest.raises(ValueError, match="sigma0_sq must be non-negative"):
        sample_bgw_limit(1.5, -0.1, 3, 10)
    with pytest.raises(ValueError, match="n0 must be at least 1"):
        sample_bgw_limit(1.5, 0.25, 0, 10)
    with pytest.raises(ValueError, match="reps must be at least 1"):
        sample_bgw_limit(1.5, 0.25, 3, 0)
    with pytest.raises(ValueError, match="horizon must be at least 1"):
        sample_bgw_limit(1.5, 0.25, 3, 10, horizon=0)


# ---------------------------------------------------------------------------
# confidence intervals
# ---------------------------------------------------------------------------


def test_wald_ci_half_width_is_the_quantile():
    (lo, hi), = wald_ci(np.array([0.0]), np.array([[1.0]]), 1.0, level=0.95)
    assert hi == pytest.approx(Z_975, rel=1e-12)
    assert lo == -hi


def test_wald_ci_scales_with_information_and_noise():
    traj = simulate_bgw("binary", 0.5, 3, 40, seed=24)
    info = info_matrix(BranchingMean(), traj, np.array([1.5]))
    (lo, hi), = wald_ci(np.array([1.5]), info, 0.25, level=0.95)
    half = Z_975 * math.sqrt(0.25 / info.matrix[0, 0])
    assert hi - 1.5 == pytest.approx(half, rel=1e-12)
    assert 1.5 - lo == pytest.approx(half, rel=1e-12)


def test_wald_ci_degenerate_and_invalid():
    (lo, hi), = wald_ci(np.array([2.0]), np.array([[5.0]]), 0.0)
    assert lo == hi == 2.0
    with pytest.raises(ValueError, match=r"level must lie in \(0, 1\)"):
        wald_ci(np.array([0.0]), np.array([[1.0]]), 1.0, level=1.0)
    with pytest.raises(ValueError, match="sigma2_hat must be non-negative"):
        wald_ci(np.array([0.0]), np.array([[1.0]]), -1.0)
    with pytest.raises(ValueError, match="wrong shape"):
        wald_ci(np.array([0.0]), np.array([[1.0, 0.0], [0.0, 1.0]]), 1.0)
