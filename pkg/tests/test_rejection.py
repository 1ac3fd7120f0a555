import math

import numpy as np
import pytest
from scipy import stats

from scpc import (
    CovarianceKernel,
    DesignSpec,
    InputError,
    NumericError,
    SpatialDesign,
    bs_probability,
    calibrate_c0,
    covariance_matrix,
    critical_value,
    omega_spectrum,
    pc_weights,
    rejection_probability,
    sample_design,
    sup_rejection,
)
from scpc.rejection import spectrum_from_omega


def test_bs_exchangeable_pair():
    assert bs_probability([1.0]) == pytest.approx(0.5, abs=1e-12)


def test_bs_cauchy_third():
    # Z0/Z1 is standard Cauchy: P(|C| >= sqrt(3)) = 1 - (2/pi) arctan sqrt(3) = 1/3
    assert bs_probability([3.0]) == pytest.approx(1.0 / 3.0, abs=1e-12)


def test_bs_two_equal_weights():
    # P(F_{1,2} >= 2) = 1 - 1/sqrt(2)
    assert bs_probability([1.0, 1.0]) == pytest.approx(1.0 - 1.0 / math.sqrt(2.0), abs=1e-12)


def test_bs_zero_eta_is_one():
    assert bs_probability([0.0]) == pytest.approx(1.0, abs=1e-10)
    assert bs_probability([0.0, 0.0, 0.0]) == pytest.approx(1.0, abs=1e-10)


def test_bs_negative_eta_rejected():
    with pytest.raises(InputError):
        bs_probability([-0.1, 1.0])


def test_bs_strictly_decreasing_in_each_component():
    rng = np.random.default_rng(0)
    for _ in range(10):
        eta = rng.uniform(0.05, 3.0, size=6)
        p0 = bs_probability(eta)
        for i in range(6):
            bumped = eta.copy()
            bumped[i] += 1e-4
            assert bs_probability(bumped) < p0


def test_bs_schur_convexity_direction():
    # J is Schur convex, and replacing two components by their average is
    # majorization-decreasing, so the probability can only go down
    rng = np.random.default_rng(1)
    for _ in range(10):
        eta = rng.uniform(0.05, 3.0, size=5)
        i, j = rng.choice(5, size=2, replace=False)
        avg = eta.copy()
        avg[i] = avg[j] = 0.5 * (eta[i] + eta[j])
        assert bs_probability(avg) <= bs_probability(eta) + 1e-12


def _orthonormal_w0(n, q, rng):
    raw = np.column_stack([np.ones(n), rng.standard_normal((n, q))])
    qmat, _ = np.linalg.qr(raw)
    return np.column_stack([np.ones(n), qmat[:, 1:] * math.sqrt(n / q)])


def test_omega_spectrum_identity_closed_form():
    rng = np.random.default_rng(2)
    n, q, cv = 40, 5, 1.7
    w0 = _orthonormal_w0(n, q, rng)
    spec = omega_spectrum(w0, np.eye(n), cv)
    assert spec.omega[0] == pytest.approx(n, rel=1e-10)
    assert np.allclose(spec.omega[1:], -cv * cv * n / q, rtol=1e-10)
    assert np.allclose(spec.eta, cv * cv / q, rtol=1e-10)


def test_omega_eta_vanishes_as_cv_to_zero():
    rng = np.random.default_rng(3)
    w0 = _orthonormal_w0(30, 4, rng)
    spec = omega_spectrum(w0, np.eye(30), 1e-8)
    assert np.abs(spec.eta).max() < 1e-12


def test_omega_matches_nonsymmetric_eigensolve():
    # direct eigensolve of D(cv) Omega is the independent oracle
    rng = np.random.default_rng(4)
    for _ in range(5):
        a = rng.standard_normal((3, 3))
        omega = a @ a.T + 0.5 * np.eye(3)
        cv = 2.0
        d = np.diag([1.0, -cv * cv, -cv * cv])
        oracle = np.sort(np.linalg.eigvals(d @ omega).real)[::-1]
        spec = spectrum_from_omega(omega, cv)
        assert np.allclose(spec.omega, oracle, rtol=1e-9, atol=1e-9)


def test_omega_rank_deficient_rejected():
    w0 = np.column_stack([np.ones(10), np.ones(10)])  # second column duplicates the constant
    with pytest.raises(NumericError):
        omega_spectrum(w0, np.eye(10), 1.5)


@pytest.mark.parametrize("q", [1, 2, 5, 12, 20])
def test_f_reduction(q):
    rng = np.random.default_rng(5)
    n = 80
    w0 = _orthonormal_w0(n, q, rng)
    cv = math.sqrt(stats.f.ppf(0.95, 1, q))
    assert rejection_probability(w0, np.eye(n), cv) == pytest.approx(0.05, abs=1e-9)


def test_rejection_vanishes_for_huge_cv():
    rng = np.random.default_rng(6)
    w0 = _orthonormal_w0(50, 4, rng)
    assert rejection_probability(w0, np.eye(50), 60.0) < 1e-4


def test_rejection_scale_invariant_in_sigma():
    rng = np.random.default_rng(7)
    design = SpatialDesign(rng.random((35, 2)))
    sigma = covariance_matrix(CovarianceKernel("exponential", 4.0), design)
    w0 = pc_weights(sigma, 4).w0()
    p1 = rejection_probability(w0, sigma, 2.2)
    p2 = rejection_probability(w0, 7.3 * sigma, 2.2)
    assert p1 == pytest.approx(p2, abs=1e-12)


def test_rejection_matches_monte_carlo():
    rng = np.random.default_rng(8)
    reps = 1_000_000
    for trial in range(10):
        n = 25
        design = SpatialDesign(rng.random((n, 2)))
        c = rng.uniform(2.0, 20.0)
        sigma = covariance_matrix(CovarianceKernel("exponential", c), design)
        q = int(rng.integers(1, 6))
        w0 = pc_weights(sigma, q).w0()
        cv = rng.uniform(1.5, 3.0)
        p = rejection_probability(w0, sigma, cv)
        chol = np.linalg.cholesky(sigma + 1e-12 * np.eye(n))
        u = rng.standard_normal((reps, n)) @ chol.T
        num = u.mean(axis=1) * math.sqrt(n)
        s2 = (u @ (w0[:, 1:])) ** 2 @ np.ones(q) / n
        tau2 = num**2 / s2
        p_mc = (tau2 > cv * cv).mean()
        se = math.sqrt(max(p_mc * (1 - p_mc), 1e-12) / reps)
        assert abs(p - p_mc) < 3 * se + 1e-6


def _square_design_with_basis(n=80, rho0=0.05, q=4, seed=0):
    design = sample_design(DesignSpec(kind="uniform-rectangle", n=n, seed=seed))
    c0 = calibrate_c0(design, "exponential", rho0)
    sigma0 = covariance_matrix(CovarianceKernel("exponential", c0), design)
    return design, c0, pc_weights(sigma0, q).w0()


def test_sup_rejection_curve_shape():
    design, c0, w0 = _square_design_with_basis()
    curve = sup_rejection(w0, design, "exponential", c0, cv=2.3, grid_size=30)
    assert curve.c[0] == pytest.approx(c0)
    assert np.isinf(curve.c[-1])
    assert np.all((curve.prob >= 0) & (curve.prob <= 1))
    c_sup, p_sup = curve.sup
    assert p_sup >= curve.prob.max() - 1e-15
    # the exact basis is orthonormal under Sigma = I, so the iid endpoint
    # is the F_{1,q} reduction
    q = w0.shape[1] - 1
    assert curve.prob[-1] == pytest.approx(stats.f.sf(2.3**2, 1, q), abs=1e-9)


def test_critical_value_meets_alpha():
    design, c0, w0 = _square_design_with_basis()
    res = critical_value(w0, design, "exponential", c0, alpha=0.05)
    assert abs(res.curve.prob.max() - 0.05) < 2e-4
    assert res.cv > stats.t.ppf(0.975, 4) - 1e-9


def test_critical_value_alpha_monotone():
    design, c0, w0 = _square_design_with_basis(n=60, q=3, seed=1)
    cv01 = critical_value(w0, design, "exponential", c0, alpha=0.01).cv
    cv05 = critical_value(w0, design, "exponential", c0, alpha=0.05).cv
    assert cv01 > cv05


def test_critical_value_iid_limit_is_t_quantile():
    # with a nearly uncorrelated benchmark the whole curve sits at the
    # Sigma = I endpoint, whose exact solution is the two-sided t quantile
    design = sample_design(DesignSpec(kind="uniform-rectangle", n=60, seed=2))
    q = 8
    c0 = 1e7
    sigma0 = covariance_matrix(CovarianceKernel("exponential", c0), design)
    w0 = pc_weights(sigma0, q).w0()
    res = critical_value(w0, design, "exponential", c0, alpha=0.05)
    assert res.cv == pytest.approx(stats.t.ppf(0.975, q), abs=2e-3)
    assert res.cv == pytest.approx(2.306004, abs=2e-3)
