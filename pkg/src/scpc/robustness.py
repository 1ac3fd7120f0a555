"""Finite-sample size-control certification via eigenvalue-majorization margins.

A test calibrated to a benchmark covariance also controls size under every
mixture of a parametric covariance family whenever a set of eigenvalue slack
quantities has nonnegative partial sums.  This module computes those margins,
sweeps them over the Matern smoothness classes to certify a range of average
pairwise correlations, and applies the same machinery to the equal-weighted
cosine estimator for regularly spaced time series.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray
from scipy.linalg import eig as dense_eig
from scipy.linalg import toeplitz
from scipy.optimize import brentq

from .covariance import Benchmark, avg_pairwise_correlation, resolve_family
from .eigen import pc_weights
from .errors import InputError, NumericError
from .estimator import QSelection, select_q
from .geometry import SpatialDesign, sample_design, DesignSpec

Array = NDArray[np.float64]

#: partial sums may dip this far (times the margin scale) below zero
FEASIBILITY_TOL = 1e-8
_COND_LIMIT = 1e10


@dataclass(frozen=True)
class NuMargins:
    """Margin vector for one alternative covariance against the benchmark."""

    theta: dict
    nu: Array
    partial_sums: Array
    feasible: bool


def _real_eigvals_one_positive(a: Array, what: str) -> Array:
    vals = np.linalg.eigvals(a)
    scale = float(np.abs(vals).max())
    if np.abs(vals.imag).max() > 1e-8 * max(1.0, scale):
        raise NumericError(f"{what}: eigenvalues have non-negligible imaginary parts")
    real = np.sort(vals.real)[::-1]
    if real[0] <= 0 or (real.size > 1 and real[1] > 1e-8 * real[0]):
        raise NumericError(f"{what}: expected exactly one positive eigenvalue")
    return real


def nu_margins(
    sigma0: Array,
    sigma_theta: Array,
    w0: Array,
    cv: float,
    theta: dict | None = None,
) -> NuMargins:
    """Theorem-of-majorization slack quantities for one alternative covariance.

    Normalizes both the benchmark matrix A0 = D(cv) W0' Sigma0 W0 and the
    conjugated alternative to unit leading eigenvalue, symmetrizes the
    alternative, and returns the q margin values together with their partial
    sums.  All margins vanish identically when sigma_theta equals sigma0 (or
    any positive multiple of it).
    """
    w0 = np.asarray(w0, dtype=float)
    q = w0.shape[1] - 1
    omega0 = w0.T @ np.asarray(sigma0, float) @ w0
    omega_t = w0.T @ np.asarray(sigma_theta, float) @ w0
    for name, om in (("Omega0", omega0), ("Omega(theta)", omega_t)):
        if np.linalg.matrix_rank(om) < q + 1:
            raise NumericError(f"{name} is rank deficient")

    # retry once with a nudged cv if A0 is near defective
    p = None
    for cv_try in (cv, cv * (1.0 + 1e-8)):
        d = np.full(q + 1, -cv_try * cv_try)
        d[0] = 1.0
        a0 = d[:, None] * omega0
        vals, vecs = dense_eig(a0)
        if np.abs(vals.imag).max() > 1e-8 * max(1.0, float(np.abs(vals).max())):
            raise NumericError("A0 has complex eigenvalues beyond tolerance")
        order = np.argsort(vals.real)[::-1]
        vecs = vecs.real[:, order]
        if np.linalg.cond(vecs) < _COND_LIMIT:
            p = vecs
            break
    if p is None:
        raise NumericError("A0 eigenvector matrix is ill conditioned; near defective")
    lam0 = _real_eigvals_one_positive(a0, "A0")
    lam0_neg_desc = np.sort(-(lam0 / lam0[0]))[::-1]  # eigenvalues of -A0, normalized

    a_theta = np.linalg.solve(p, (d[:, None] * omega_t) @ p)
    lam_t = _real_eigvals_one_positive(a_theta, "A(theta)")
    a_theta = a_theta / lam_t[0]
    a_bar = 0.5 * (a_theta + a_theta.T)
    lam_bar = np.linalg.eigvalsh(a_bar)[::-1]
    lam_bar_neg_desc = np.sort(-lam_bar)[::-1]
    lam1_bar = lam_bar[0]

    nu = np.empty(q)
    nu[0] = lam_bar_neg_desc[q - 1] - lam1_bar * lam0_neg_desc[q - 1] - (lam1_bar - 1.0)
    for i in range(2, q + 1):
        j = q + 1 - i
        nu[i - 1] = lam_bar_neg_desc[j - 1] - lam1_bar * lam0_neg_desc[j - 1]
    partial = np.cumsum(nu)
    tol = FEASIBILITY_TOL * max(1.0, float(np.abs(nu).max()))
    return NuMargins(
        theta=theta or {},
        nu=nu,
        partial_sums=partial,
        feasible=bool(partial.min() >= -tol),
    )


@dataclass(frozen=True)
class RobustnessReport:
    rho_lower: float
    rho_upper: float
    rho0: float
    records: list[NuMargins]
    worst_margin: float
    worst_theta: dict

    def to_dict(self) -> dict:
        return {
            "rho_lower": self.rho_lower,
            "rho_upper": self.rho_upper,
            "rho0": self.rho0,
            "worst_margin": self.worst_margin,
            "worst_theta": self.worst_theta,
            "thetas": [
                {
                    **m.theta,
                    "feasible": m.feasible,
                    "min_partial_sum": float(m.partial_sums.min()),
                }
                for m in self.records
            ],
        }


def _family_c_for_rho(bench: Benchmark, rho_target: float) -> float:
    d = bench.design.dist
    med = float(np.median(d[d > 0]))
    lo, hi = 1e-6 / med, 1e9 / med
    f = lambda lc: bench.rho_bar(math.exp(lc)) - rho_target
    return math.exp(brentq(f, math.log(lo), math.log(hi), xtol=1e-10))


def matern_robust_range(
    design: SpatialDesign,
    c0: float,
    q: int,
    cv: float,
    nu_set: tuple[str, ...] = ("exponential", "matern32", "matern52", "gaussian"),
    grid_points: int = 60,
    rho_span: tuple[float, float] = (1e-4, 0.5),
) -> RobustnessReport:
    """Sweep the Matern families and certify an average-correlation interval.

    For every family and persistence value on a log grid spanning average
    correlations in ``rho_span``, computes the margins of the alternative
    against the exponential benchmark at c0, then reports the widest
    correlation interval around the benchmark's value within which every
    evaluated alternative (all families) is feasible.
    """
    bench0 = Benchmark(design, "exponential")
    sigma0 = bench0.sigma(c0)
    rho0 = avg_pairwise_correlation(sigma0)
    w0 = pc_weights(sigma0, q).w0()

    records: list[NuMargins] = []
    for fam in nu_set:
        fam = resolve_family(fam)
        bench = Benchmark(design, fam)
        c_lo = _family_c_for_rho(bench, rho_span[1])  # high correlation -> small c
        c_hi = _family_c_for_rho(bench, rho_span[0])
        for c in np.geomspace(c_lo, c_hi, grid_points):
            sigma_t = bench.sigma(float(c))
            rho_t = avg_pairwise_correlation(sigma_t)
            theta = {"family": fam, "c": float(c), "rho_bar": rho_t}
            records.append(nu_margins(sigma0, sigma_t, w0, cv, theta=theta))

    # benchmark itself is feasible by construction; anchor the interval there
    rho_vals = np.array([m.theta["rho_bar"] for m in records])
    feas = np.array([m.feasible for m in records])
    above = rho_vals > rho0
    below = rho_vals < rho0
    inf_above = rho_vals[above & ~feas]
    inf_below = rho_vals[below & ~feas]
    cut_hi = inf_above.min() if inf_above.size else np.inf
    cut_lo = inf_below.max() if inf_below.size else -np.inf
    ok = feas & (rho_vals > cut_lo) & (rho_vals < cut_hi)
    rho_upper = float(max(rho_vals[ok].max(), rho0)) if ok.any() else rho0
    rho_lower = float(min(rho_vals[ok].min(), rho0)) if ok.any() else rho0

    in_interval = [m for m in records if rho_lower <= m.theta["rho_bar"] <= rho_upper and m.feasible]
    pool = in_interval or records
    worst = min(pool, key=lambda m: float(m.partial_sums.min()))
    return RobustnessReport(
        rho_lower=rho_lower,
        rho_upper=rho_upper,
        rho0=rho0,
        records=records,
        worst_margin=float(worst.partial_sums.min()),
        worst_theta=worst.theta,
    )


@dataclass(frozen=True)
class EwcDesign:
    """Equal-weighted cosine components on the midpoint grid, with the AR(1) benchmark."""

    design: SpatialDesign
    components: Array  # n x q_max, column j is sqrt(2) cos(j pi s)
    benchmark: Benchmark

    @property
    def n(self) -> int:
        return self.design.n

    def w0(self, q: int) -> Array:
        return np.column_stack([np.ones(self.n), self.components[:, :q] / math.sqrt(q)])

    def sigma(self, c: float) -> Array:
        return self.benchmark.sigma(c)


def ewc_design(n: int, q_max: int, c0: float) -> EwcDesign:
    """Cosine weights and the AR(1)-in-index benchmark for a regular 1-d grid.

    On the midpoint grid the covariance exp(-c |s_l - s_m|) equals the AR(1)
    autocovariance with coefficient exp(-c/n), and the cosine columns are
    exactly orthogonal and mean zero.
    """
    if q_max >= n:
        raise InputError("q_max must be below n")
    design = sample_design(DesignSpec(kind="regular-1d", n=n))
    s = design.coords[:, 0]
    comp = math.sqrt(2.0) * np.cos(np.pi * np.outer(s, np.arange(1, q_max + 1)))
    return EwcDesign(design=design, components=comp, benchmark=Benchmark(design, "exponential"))


def ewc_solve(n: int, c0: float, alpha: float = 0.05, q_max: int = 20) -> QSelection:
    """q and critical value for the cosine estimator under the AR(1) benchmark."""
    ewc = ewc_design(n, q_max, c0)
    return select_q(
        None,
        None,
        c0,
        alpha,
        q_max,
        components=ewc.components,
        benchmark=ewc.benchmark,
    )


def ar1_autocovariance(n: int, c0: float) -> Array:
    """Exact AR(1) autocovariances gamma_k = rho^k (unit variance), k < n."""
    rho = math.exp(-c0 / n)
    return rho ** np.arange(n)


def kinked_ar1_covariance(
    n: int, c0: float, m_bar: float, theta: float, grid_points: int = 2048
) -> Array:
    """Toeplitz covariance of the AR(1) spectrum boosted by m_bar above frequency theta.

    The spectral density f0(w) (1 + (m_bar - 1) 1[|w| >= theta]) is inverted
    numerically on a midpoint frequency grid, which keeps the two boundary
    cases exact: theta = 0 rescales the AR(1) covariance by m_bar, and
    theta = pi reproduces it unchanged.
    """
    if theta < 0 or theta > math.pi:
        raise InputError("theta must lie in [0, pi]")
    rho = math.exp(-c0 / n)
    w = (np.arange(grid_points) + 0.5) * (math.pi / grid_points)
    f0 = 1.0 / (1.0 - 2.0 * rho * np.cos(w) + rho * rho)
    f = f0 * (1.0 + (m_bar - 1.0) * (w >= theta))
    k = np.arange(n)
    gamma = (f[None, :] * np.cos(np.outer(k, w))).sum(axis=1) / grid_points
    return toeplitz(gamma / gamma[0])


@dataclass(frozen=True)
class Ar1MixtureReport:
    n: int
    c0: float
    m_bar: float
    q: int
    cv: float
    thetas: Array
    margins: list[NuMargins]
    all_feasible: bool

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "c0": self.c0,
            "m_bar": self.m_bar,
            "q": self.q,
            "cv": self.cv,
            "all_feasible": self.all_feasible,
            "thetas": [
                {"theta": float(t), "feasible": m.feasible, "min_partial_sum": float(m.partial_sums.min())}
                for t, m in zip(self.thetas, self.margins)
            ],
        }


def ar1_mixture_check(
    n: int,
    c0: float,
    m_bar: float,
    theta_grid: Array | None = None,
    alpha: float = 0.05,
    q_max: int = 20,
) -> Ar1MixtureReport:
    """Feasibility of the cosine t-test over the kinked-spectrum class.

    Solves the cosine estimator's (q, cv) for the AR(1) benchmark, then runs
    the margins for each boosted spectrum on the theta grid.  All-feasible
    means arbitrary mixtures of the class are covered.
    """
    if m_bar <= 1.0:
        raise InputError("m_bar must exceed 1")
    thetas = np.linspace(0.0, math.pi, 33) if theta_grid is None else np.asarray(theta_grid, float)
    sel = ewc_solve(n, c0, alpha=alpha, q_max=q_max)
    ewc = ewc_design(n, sel.q, c0)
    w0 = ewc.w0(sel.q)
    sigma0 = ewc.sigma(c0)
    margins = []
    for theta in thetas:
        sigma_t = kinked_ar1_covariance(n, c0, m_bar, float(theta))
        margins.append(
            nu_margins(sigma0, sigma_t, w0, sel.cv, theta={"theta": float(theta), "m_bar": m_bar})
        )
    return Ar1MixtureReport(
        n=n,
        c0=c0,
        m_bar=m_bar,
        q=sel.q,
        cv=sel.cv,
        thetas=thetas,
        margins=margins,
        all_feasible=all(m.feasible for m in margins),
    )
