import math

import numpy as np
import pytest

from scpc import (
    CovarianceKernel,
    DegenerateStatisticError,
    DesignSpec,
    InputError,
    RegressionInput,
    ScpcOptions,
    covariance_matrix,
    calibrate_c0,
    expected_length_iid,
    iv_scores,
    pc_weights,
    regression_scores,
    scpc_interval,
    scpc_sigma_hat,
    select_q,
    t_statistic,
    sample_design,
)


@pytest.fixture(scope="module")
def small_basis():
    design = sample_design(DesignSpec(kind="uniform-rectangle", n=50, seed=0))
    sigma = covariance_matrix(CovarianceKernel("exponential", 8.0), design)
    return design, pc_weights(sigma, 5)


def test_sigma_hat_on_first_component(small_basis):
    design, basis = small_basis
    b1 = basis.truncated(1)
    # u = r1: projection is n^{-1/2} r1'r1 = sqrt(n) n^{-1/2} ... = n / sqrt(n)
    assert scpc_sigma_hat(b1, basis.r[:, 0]) == pytest.approx(design.n, rel=1e-12)


def test_sigma_hat_orthogonal_residuals_zero(small_basis):
    design, basis = small_basis
    u = np.ones(design.n)  # constant is orthogonal to every component
    assert scpc_sigma_hat(basis, u) == pytest.approx(0.0, abs=1e-20)


def test_sigma_hat_equals_quadratic_form(small_basis):
    design, basis = small_basis
    rng = np.random.default_rng(1)
    n = design.n
    q = basis.q
    qmat = basis.r @ basis.r.T / q
    for _ in range(5):
        u = rng.standard_normal(n)
        direct = u @ qmat @ u / n
        assert scpc_sigma_hat(basis, u) == pytest.approx(direct, rel=1e-10)


def test_sigma_hat_invariant_to_basis_rotation(small_basis):
    # the estimator is a trace through the span projector, so rotating the
    # component block (degenerate-eigenvalue ambiguity, Nystrom merges)
    # cannot change it
    from scpc import PCBasis

    design, basis = small_basis
    rng = np.random.default_rng(14)
    u = rng.standard_normal(design.n)
    rot, _ = np.linalg.qr(rng.standard_normal((basis.q, basis.q)))
    rotated = PCBasis(basis.r @ rot, basis.eigenvalues.copy(), basis.source)
    assert scpc_sigma_hat(rotated, u) == pytest.approx(scpc_sigma_hat(basis, u), rel=1e-12)


def test_sigma_hat_constant_shift_invariant(small_basis):
    _, basis = small_basis
    rng = np.random.default_rng(2)
    u = rng.standard_normal(basis.n)
    assert scpc_sigma_hat(basis, u + 11.0) == pytest.approx(scpc_sigma_hat(basis, u), rel=1e-6)


def test_t_statistic_zero_at_mean(small_basis):
    _, basis = small_basis
    rng = np.random.default_rng(3)
    y = rng.standard_normal(basis.n)
    assert t_statistic(y, float(y.mean()), basis) == pytest.approx(0.0, abs=1e-12)


def test_t_statistic_location_scale(small_basis):
    _, basis = small_basis
    rng = np.random.default_rng(4)
    y = rng.standard_normal(basis.n)
    t0 = t_statistic(y, 0.1, basis)
    assert t_statistic(y + 5.0, 5.1, basis) == pytest.approx(t0, rel=1e-10)
    assert t_statistic(3.0 * y, 0.3, basis) == pytest.approx(t0, rel=1e-10)


def test_t_statistic_degenerate(small_basis):
    _, basis = small_basis
    with pytest.raises(DegenerateStatisticError):
        t_statistic(np.full(basis.n, 2.0), 0.0, basis)


def test_expected_length_q1():
    cv, n = 2.5, 400
    assert expected_length_iid(1, cv, n) == pytest.approx(2 * cv * math.sqrt(2 / math.pi) / math.sqrt(n), rel=1e-12)


def test_expected_length_q3_oracle():
    # direct formula evaluation, cross-checked below by Monte Carlo
    val = expected_length_iid(3, 3.18, 100)
    assert val == pytest.approx(0.5859581, abs=1e-6)
    rng = np.random.default_rng(5)
    sig = np.sqrt(rng.chisquare(3, size=1_000_000) / 3)
    mc = (2 * 3.18 * sig / 10).mean()
    assert val == pytest.approx(mc, rel=3 * sig.std() / 1000 / mc)


def test_expected_length_large_q_limit():
    cv, n = 2.0, 100
    assert expected_length_iid(4000, cv, n) == pytest.approx(2 * cv / math.sqrt(n), rel=1e-3)


def test_select_q_qmax_one():
    design = sample_design(DesignSpec(kind="uniform-rectangle", n=40, seed=1))
    c0 = calibrate_c0(design, "exponential", 0.05)
    sel = select_q(design, "exponential", c0, 0.05, 1)
    assert sel.q == 1
    assert all(row["length"] > 0 for row in sel.table)


def test_scpc_interval_end_to_end():
    design = sample_design(DesignSpec(kind="uniform-rectangle", n=100, seed=2))
    rng = np.random.default_rng(6)
    y = rng.standard_normal(100)
    res = scpc_interval(y, design, rho0=0.02, alpha=0.05, options=ScpcOptions(q_max=15))
    assert res.ci[0] < res.mean < res.ci[1]
    width = res.ci[1] - res.ci[0]
    assert width == pytest.approx(2 * res.cv * res.sigma_hat / 10.0, rel=1e-12)
    assert res.diagnostics["basis_source"] == "exact"
    assert res.diagnostics["q_table"][0]["q"] == 1


def test_scpc_interval_constant_y_degenerate():
    design = sample_design(DesignSpec(kind="uniform-rectangle", n=30, seed=3))
    with pytest.raises(DegenerateStatisticError):
        scpc_interval(np.ones(30), design, options=ScpcOptions(q_max=5))


def test_pipeline_location_scale_equivariance():
    design = sample_design(DesignSpec(kind="uniform-rectangle", n=80, seed=4))
    rng = np.random.default_rng(7)
    y = rng.standard_normal(80)
    opts = ScpcOptions(q_max=10)
    base = scpc_interval(y, design, rho0=0.05, options=opts)
    moved = scpc_interval(2.5 * y - 4.0, design, rho0=0.05, options=opts)
    assert moved.q == base.q and moved.cv == pytest.approx(base.cv, abs=1e-12)
    assert moved.ci[0] == pytest.approx(2.5 * base.ci[0] - 4.0, abs=1e-8)
    assert moved.ci[1] == pytest.approx(2.5 * base.ci[1] - 4.0, abs=1e-8)


def test_pipeline_design_scale_invariance():
    design = sample_design(DesignSpec(kind="uniform-rectangle", n=80, seed=5))
    rng = np.random.default_rng(8)
    y = rng.standard_normal(80)
    opts = ScpcOptions(q_max=10)
    base = scpc_interval(y, design, rho0=0.05, options=opts)
    scaled = scpc_interval(y, design.scaled(13.0), rho0=0.05, options=opts)
    assert scaled.q == base.q
    assert scaled.cv == pytest.approx(base.cv, abs=1e-6)
    assert scaled.ci[0] == pytest.approx(base.ci[0], abs=1e-7)
    assert scaled.ci[1] == pytest.approx(base.ci[1], abs=1e-7)
    assert scaled.c0 == pytest.approx(base.c0 / 13.0, rel=1e-8)


def test_fixed_q_option():
    design = sample_design(DesignSpec(kind="uniform-rectangle", n=60, seed=6))
    rng = np.random.default_rng(9)
    y = rng.standard_normal(60)
    res = scpc_interval(y, design, rho0=0.02, options=ScpcOptions(q=3, q_max=10))
    assert res.q == 3


# --- regression adapter ---


def test_regression_scores_rank_error():
    n = 40
    w = np.arange(n, dtype=float)
    with pytest.raises(InputError):
        regression_scores(RegressionInput(w=w, x=np.ones(n), z=np.ones((n, 1))))


def test_regression_scores_pure_location_model():
    rng = np.random.default_rng(10)
    w = rng.standard_normal(25)
    out = regression_scores(RegressionInput(w=w, x=np.ones(25), z=None))
    assert np.allclose(out.scores, w, atol=1e-12)
    assert out.beta_hat == pytest.approx(w.mean())


def test_regression_scores_match_ols():
    rng = np.random.default_rng(11)
    n = 300
    design = sample_design(DesignSpec(kind="uniform-rectangle", n=n, seed=7))
    sigma = covariance_matrix(CovarianceKernel("exponential", 10.0), design)
    chol = np.linalg.cholesky(sigma + 1e-12 * np.eye(n))
    eps = chol @ rng.standard_normal(n)
    x = rng.standard_normal(n)
    z = np.column_stack([np.ones(n), rng.standard_normal(n)])
    w = 1.5 * x + z @ np.array([0.3, -0.7]) + eps
    out = regression_scores(RegressionInput(w=w, x=x, z=z), design)
    beta_ols = np.linalg.lstsq(np.column_stack([x, z]), w, rcond=None)[0][0]
    assert out.beta_hat == pytest.approx(beta_ols, abs=1e-12)
    assert out.scores.mean() == pytest.approx(out.beta_hat, abs=1e-12)


def test_regression_interval_runs():
    rng = np.random.default_rng(12)
    n = 120
    design = sample_design(DesignSpec(kind="uniform-rectangle", n=n, seed=8))
    x = rng.standard_normal(n)
    w = 0.8 * x + rng.standard_normal(n)
    z = np.ones((n, 1))
    out = regression_scores(RegressionInput(w=w, x=x, z=z), design)
    res = scpc_interval(out.scores, design, rho0=0.02, options=ScpcOptions(q_max=10))
    assert res.ci[0] < out.beta_hat < res.ci[1]


def test_iv_scores_mean_is_iv_estimate():
    rng = np.random.default_rng(13)
    n = 200
    zeta = rng.standard_normal(n)
    x = 0.9 * zeta + 0.4 * rng.standard_normal(n)
    eps = rng.standard_normal(n)
    w = 2.0 * x + eps + 0.5 * rng.standard_normal(n)
    out = iv_scores(w, x, zeta)
    beta_iv = (zeta @ w) / (zeta @ x)
    assert out.beta_hat == pytest.approx(beta_iv, abs=1e-12)
    assert out.scores.mean() == pytest.approx(beta_iv, abs=1e-12)
