import math

import numpy as np
import pytest

from scpc import (
    CovarianceKernel,
    DesignSpec,
    SpatialDesign,
    ar1_mixture_check,
    calibrate_c0,
    covariance_matrix,
    ewc_design,
    ewc_solve,
    kinked_ar1_covariance,
    matern_robust_range,
    nu_margins,
    pc_weights,
    sample_design,
)


@pytest.fixture(scope="module")
def bench_setup():
    design = sample_design(DesignSpec(kind="uniform-rectangle", n=80, seed=0))
    c0 = calibrate_c0(design, "exponential", 0.03)
    sigma0 = covariance_matrix(CovarianceKernel("exponential", c0), design)
    w0 = pc_weights(sigma0, 5).w0()
    return design, c0, sigma0, w0


def test_margins_vanish_at_benchmark(bench_setup):
    _, _, sigma0, w0 = bench_setup
    m = nu_margins(sigma0, sigma0, w0, cv=2.4)
    assert np.abs(m.nu).max() < 1e-8
    assert m.feasible


def test_margins_scale_invariant(bench_setup):
    _, _, sigma0, w0 = bench_setup
    m2 = nu_margins(sigma0, 2.0 * sigma0, w0, cv=2.4)
    assert np.abs(m2.nu).max() < 1e-10
    m3 = nu_margins(3.0 * sigma0, sigma0, w0, cv=2.4)
    assert np.abs(m3.nu).max() < 1e-10
    rng = np.random.default_rng(0)
    design = SpatialDesign(rng.random((40, 2)))
    other = covariance_matrix(CovarianceKernel("matern32", 3.0), design)
    base = covariance_matrix(CovarianceKernel("exponential", 5.0), design)
    w0_small = pc_weights(base, 3).w0()
    a = nu_margins(base, other, w0_small, cv=2.2)
    b = nu_margins(0.7 * base, 5.0 * other, w0_small, cv=2.2)
    assert np.abs(a.nu - b.nu).max() < 1e-10


def test_margins_two_location_scalar_oracle():
    # n = 2, q = 1: everything is 2x2 and can be recomputed from scratch
    design = SpatialDesign([[0.0], [1.0]])
    sigma0 = covariance_matrix(CovarianceKernel("exponential", 1.0), design)
    sigma_t = covariance_matrix(CovarianceKernel("gaussian", 1.0), design)
    basis = pc_weights(sigma0, 1)
    w0 = basis.w0()
    cv = 2.0
    got = nu_margins(sigma0, sigma_t, w0, cv)

    d = np.diag([1.0, -cv * cv])
    a0 = d @ (w0.T @ sigma0 @ w0)
    vals, p = np.linalg.eig(a0)
    order = np.argsort(vals.real)[::-1]
    vals, p = vals.real[order], p.real[:, order]
    at = np.linalg.solve(p, d @ (w0.T @ sigma_t @ w0) @ p)
    lt = np.sort(np.linalg.eigvals(at).real)[::-1]
    at /= lt[0]
    abar = 0.5 * (at + at.T)
    lam_bar = np.sort(np.linalg.eigvalsh(abar))[::-1]
    # q = 1: nu_1 = lambda_1(-Abar) - lambda_1(Abar) lambda_1(-A0n) - (lambda_1(Abar) - 1)
    lam_neg_bar = np.sort(-lam_bar)[::-1]
    lam_neg_a0 = np.sort(-(vals / vals[0]))[::-1]
    nu1 = lam_neg_bar[0] - lam_bar[0] * lam_neg_a0[0] - (lam_bar[0] - 1.0)
    assert got.nu[0] == pytest.approx(nu1, abs=1e-12)


def test_matern_range_contains_benchmark(bench_setup):
    design, c0, sigma0, _ = bench_setup
    report = matern_robust_range(design, c0, q=5, cv=2.5, grid_points=20)
    assert report.rho_lower <= report.rho0 <= report.rho_upper
    assert report.rho_upper >= report.rho0
    exp_at_c0 = [
        m
        for m in report.records
        if m.theta["family"] == "exponential" and abs(m.theta["rho_bar"] - report.rho0) < 5e-3
    ]
    for m in exp_at_c0:
        assert m.feasible


def test_matern_range_certifies_down_to_low_rho():
    design = sample_design(DesignSpec(kind="uniform-rectangle", n=100, seed=3))
    c0 = calibrate_c0(design, "exponential", 0.02)
    from scpc import select_q

    sel = select_q(design, "exponential", c0, 0.05, 12)
    report = matern_robust_range(design, c0, sel.q, sel.cv, grid_points=25)
    assert report.rho_lower <= 0.001
    assert report.rho_upper >= report.rho0 * 0.99


# --- EWC application ---


def test_ewc_weights_mean_zero_orthogonal():
    ewc = ewc_design(8, 3, c0=10.0)
    comp = ewc.components
    assert np.abs(comp.sum(axis=0)).max() < 1e-12
    gram = comp.T @ comp / 8
    assert np.abs(gram - np.eye(3)).max() < 1e-12
    # q=1, n=4 cosine weights sum to zero by symmetry
    w4 = ewc_design(4, 1, c0=10.0).components[:, 0]
    assert abs(w4.sum()) < 1e-12


def test_ewc_benchmark_is_ar1_toeplitz():
    n, c = 6, 7.0
    sigma = ewc_design(n, 2, c0=c).sigma(c)
    rho = math.exp(-c / n)
    k = np.arange(n)
    assert np.abs(sigma - rho ** np.abs(k[:, None] - k[None, :])).max() < 1e-12


def test_ewc_solve_matches_paper_q_at_n100():
    assert ewc_solve(100, 10.0, q_max=12).q == 5
    assert ewc_solve(100, 25.0, q_max=12).q == 7


def test_kinked_covariance_boundary_cases():
    n, c0, m_bar = 40, 25.0, 10.0
    base = ewc_design(n, 2, c0=c0).sigma(c0)
    at_pi = kinked_ar1_covariance(n, c0, m_bar, math.pi)
    assert np.abs(at_pi - base).max() < 1e-10
    at_zero = kinked_ar1_covariance(n, c0, m_bar, 0.0)
    assert np.abs(at_zero - base).max() < 1e-10  # normalized to unit diagonal


def test_kinked_inversion_matches_analytic_ar1():
    n, c0 = 60, 25.0
    gamma_exact = math.exp(-c0 / n) ** np.arange(n)
    sigma = kinked_ar1_covariance(n, c0, 5.0, math.pi)
    assert np.abs(sigma[0] - gamma_exact).max() < 1e-10


def test_ar1_mixture_feasible_paper_cell():
    report = ar1_mixture_check(100, 25.0, 10.0, theta_grid=np.linspace(0, math.pi, 17))
    assert report.q == 7
    assert report.all_feasible
    assert report.margins[0].feasible and report.margins[-1].feasible
