"""Rejection probabilities of quadratic-form t-statistics and critical values.

Under a Gaussian benchmark the event tau^2 > cv^2 is the event that a linear
combination of independent chi-square(1) variables is positive.  The
combination has exactly one positive coefficient, so its tail probability is
a one-dimensional integral evaluated here by panelled Gauss-Legendre
quadrature after substitutions that remove both endpoint singularities.
A critical value is the root, in cv, of the sup of this probability over a
persistence grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray
from scipy import stats
from scipy.linalg import eigh
from scipy.optimize import brentq

from .covariance import Benchmark
from .errors import InputError, NumericError, SolverError
from .geometry import SpatialDesign

Array = NDArray[np.float64]

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(64)


def _panel_rule(a: float, b: float, n_panels: int) -> tuple[Array, Array]:
    edges = np.linspace(a, b, n_panels + 1)
    half = 0.5 * (edges[1:] - edges[:-1])
    mid = 0.5 * (edges[1:] + edges[:-1])
    x = (mid[:, None] + half[:, None] * _GL_NODES[None, :]).ravel()
    w = (half[:, None] * _GL_WEIGHTS[None, :]).ravel()
    return x, w


def _bs_rules(n_panels: int) -> tuple[Array, Array]:
    # both substitutions run over [0, sqrt(1/2)]
    return _panel_rule(0.0, np.sqrt(0.5), n_panels)


_BS_T, _BS_W = _bs_rules(8)


def bs_probability(eta, n_panels: int = 8) -> float:
    """P(Z_0^2 >= sum_i eta_i Z_i^2) for independent standard normals.

    Evaluates (1/pi) int_0^1 x^{(q-1)/2} / sqrt((1-x) prod_i (x + eta_i)) dx.
    The integral is split at x = 1/2; the substitution x = v^2 removes the
    corner at 0 (including the x^{-1/2} singularity when some eta_i = 0) and
    x = 1 - u^2 removes the square-root singularity at 1.  Absolute accuracy
    is ~1e-12 at the default panel count.
    """
    eta = np.atleast_1d(np.asarray(eta, dtype=float))
    if eta.ndim != 1 or eta.size < 1:
        raise InputError("eta must be a nonempty vector")
    if np.any(eta < 0):
        raise InputError(f"eta must be nonnegative, got min {eta.min():.3e}")
    q = eta.size
    t, w = (_BS_T, _BS_W) if n_panels == 8 else _bs_rules(n_panels)
    with np.errstate(divide="ignore"):
        x = t * t
        log_left = q * np.log(t) - 0.5 * np.log1p(-x) - 0.5 * np.sum(
            np.log(x[:, None] + eta[None, :]), axis=1
        )
        x = 1.0 - t * t
        log_right = 0.5 * (q - 1) * np.log(x) - 0.5 * np.sum(
            np.log(x[:, None] + eta[None, :]), axis=1
        )
    total = 2.0 * (np.dot(np.exp(log_left), w) + np.dot(np.exp(log_right), w))
    return min(max(total / np.pi, 0.0), 1.0)


def bs_quadrature_error(eta) -> float:
    """Crude accuracy estimate: change under panel doubling."""
    return abs(bs_probability(eta, n_panels=16) - bs_probability(eta, n_panels=8))


@dataclass(frozen=True)
class TestSpectrum:
    """Eigenvalues of D(cv) Omega and the ratios eta_i = -omega_i / omega_0."""

    omega: Array
    eta: Array


def spectrum_from_omega(omega_mat: Array, cv: float) -> TestSpectrum:
    """Eigenvalues of D(cv) * omega_mat via the similar symmetric form.

    omega_mat must be symmetric positive definite; the eigenvalues of
    D(cv) Omega equal those of Omega^{1/2} D(cv) Omega^{1/2}, which is
    symmetric, so the computed spectrum is real by construction.
    """
    if cv <= 0:
        raise InputError("cv must be positive")
    omega_mat = np.asarray(omega_mat, dtype=float)
    k = omega_mat.shape[0]
    evals, evecs = eigh(omega_mat)
    tiny = max(1.0, evals[-1]) * 1e-13
    if evals[0] <= tiny:
        raise NumericError(
            f"Omega is rank deficient: eigenvalue {evals[0]:.3e} vs largest {evals[-1]:.3e}"
        )
    root = (evecs * np.sqrt(evals)) @ evecs.T
    d = np.full(k, -cv * cv)
    d[0] = 1.0
    omega = np.linalg.eigvalsh((root * d) @ root.T)[::-1]
    if omega[0] <= 0:
        raise NumericError("leading eigenvalue of D(cv) Omega is not positive")
    if omega.size > 1 and omega[1] > 1e-8 * omega[0]:
        raise NumericError(
            f"second eigenvalue {omega[1]:.3e} of D(cv) Omega is positive beyond tolerance"
        )
    eta = np.clip(-omega[1:] / omega[0], 0.0, None)
    return TestSpectrum(omega=omega, eta=eta)


def omega_spectrum(w0: Array, sigma: Array, cv: float) -> TestSpectrum:
    """Spectrum of D(cv) W0' Sigma W0 for a weight matrix W0 = [1, W]."""
    w0 = np.asarray(w0, dtype=float)
    if not np.allclose(w0[:, 0], 1.0):
        raise InputError("the first column of W0 must be the constant 1")
    return spectrum_from_omega(w0.T @ np.asarray(sigma, float) @ w0, cv)


def rejection_probability(w0: Array, sigma: Array, cv: float) -> float:
    """P(tau^2 > cv^2) under y ~ N(mu 1, Sigma) for the weights in W0."""
    return bs_probability(omega_spectrum(w0, sigma, cv).eta)


@dataclass(frozen=True)
class RejectionCurve:
    """Rejection probability over the persistence grid, plus the i.i.d. endpoint.

    The grid is ascending in c; ``c[-1] = inf`` encodes the Sigma = I endpoint.
    """

    c: Array
    prob: Array

    @property
    def sup(self) -> tuple[float, float]:
        i = int(np.argmax(self.prob))
        return float(self.c[i]), float(self.prob[i])

    def as_records(self) -> list[dict]:
        return [
            {"c": (None if np.isinf(ci) else float(ci)), "prob": float(pi)}
            for ci, pi in zip(self.c, self.prob)
        ]


@dataclass(frozen=True)
class CriticalValueResult:
    cv: float
    curve: RejectionCurve
    alpha: float
    q: int
    quadrature_error_estimate: float = 0.0

    @property
    def sup_c(self) -> float:
        return self.curve.sup[0]


class SupRejectionSolver:
    """Shared machinery for sup-over-c rejection curves and critical values.

    Precomputes, per grid point c, the (q_max+1) x (q_max+1) Gram matrix
    G(c) = [1, R]' Sigma(c) [1, R] for a fixed component matrix R, after
    which every (q, cv) evaluation costs one small eigensolve and one
    quadrature, independent of n.
    """

    def __init__(
        self,
        benchmark: Benchmark,
        components: Array,
        c0: float,
        grid_size: int = 50,
        rho_floor: float = 1e-6,
    ) -> None:
        if c0 <= 0:
            raise InputError("c0 must be positive")
        self.benchmark = benchmark
        self.c0 = float(c0)
        n = benchmark.n
        comp = np.asarray(components, dtype=float)
        if comp.shape[0] != n:
            raise InputError("components and design disagree on n")
        self.q_max = comp.shape[1]
        self._b = np.column_stack([np.ones(n), comp])
        c_hi = benchmark.weak_correlation_cutoff(rho_floor, c_start=max(1.0, c0))
        if c_hi <= c0:
            c_hi = 2.0 * c0
        self._cs: list[float] = list(np.geomspace(c0, c_hi, grid_size))
        self._grams: list[Array] = [self._gram(c) for c in self._cs]
        self._gram_iid = self._b.T @ self._b

    def _gram(self, c: float) -> Array:
        return self._b.T @ self.benchmark.sigma(c) @ self._b

    def _omega(self, gram: Array, q: int) -> Array:
        idx = np.arange(q + 1)
        om = gram[np.ix_(idx, idx)].copy()
        rq = np.sqrt(q)
        om[0, 1:] /= rq
        om[1:, 0] /= rq
        om[1:, 1:] /= q
        return om

    def add_c(self, c: float) -> None:
        if any(abs(c - ci) < 1e-12 * c for ci in self._cs):
            return
        self._cs.append(c)
        self._grams.append(self._gram(c))
        order = np.argsort(self._cs)
        self._cs = [self._cs[i] for i in order]
        self._grams = [self._grams[i] for i in order]

    def curve(self, q: int, cv: float) -> RejectionCurve:
        if not 1 <= q <= self.q_max:
            raise InputError(f"q must lie in [1, {self.q_max}], got {q}")
        probs = [bs_probability(spectrum_from_omega(self._omega(g, q), cv).eta) for g in self._grams]
        probs.append(bs_probability(spectrum_from_omega(self._omega(self._gram_iid, q), cv).eta))
        return RejectionCurve(
            c=np.asarray(self._cs + [np.inf]), prob=np.asarray(probs)
        )

    def sup(self, q: int, cv: float) -> float:
        return self.curve(q, cv).sup[1]

    def _solve_root(self, q: int, alpha: float) -> float:
        t_bound = float(stats.t.ppf(1.0 - alpha / 2.0, q))
        g = lambda cv: self.sup(q, cv) - alpha
        g_t = g(t_bound)
        if abs(g_t) <= 1e-12:
            return t_bound
        lo, hi = (t_bound, 100.0) if g_t > 0 else (1e-6, t_bound)
        if lo == t_bound and g(hi) > 0:
            raise SolverError(
                f"critical value not bracketed in cv <= {hi}; pathological design (q={q})"
            )
        return float(brentq(g, lo, hi, xtol=1e-9, maxiter=200))

    def critical_value(self, q: int, alpha: float, refine_passes: int = 2) -> CriticalValueResult:
        """Solve sup_c P(tau^2 > cv^2) = alpha for cv, refining the grid argmax.

        Each refinement pass inserts geometric midpoints around the current
        sup-achieving grid point and re-solves, so a sup lying between grid
        points cannot be missed by more than the (halved) local spacing.
        """
        if not 0.0 < alpha < 0.5:
            raise InputError("alpha must lie in (0, 0.5)")
        cv = self._solve_root(q, alpha)
        for _ in range(refine_passes):
            curve = self.curve(q, cv)
            i = int(np.argmax(curve.prob))
            if i >= len(self._cs) or i == 0:
                break  # sup at c0 or at the iid endpoint: nothing to refine
            for c_new in (
                np.sqrt(self._cs[i - 1] * self._cs[i]),
                np.sqrt(self._cs[i] * self._cs[min(i + 1, len(self._cs) - 1)]),
            ):
                self.add_c(float(c_new))
            cv_new = self._solve_root(q, alpha)
            if abs(cv_new - cv) <= 1e-9:
                cv = cv_new
                break
            cv = cv_new
        curve = self.curve(q, cv)
        err = bs_quadrature_error(
            spectrum_from_omega(self._omega(self._grams[0], q), cv).eta
        )
        return CriticalValueResult(cv=cv, curve=curve, alpha=alpha, q=q, quadrature_error_estimate=err)


def _solver_for_w0(w0: Array, design: SpatialDesign, family: str, c0: float, grid_size: int):
    w0 = np.asarray(w0, dtype=float)
    if not np.allclose(w0[:, 0], 1.0):
        raise InputError("the first column of W0 must be the constant 1")
    q = w0.shape[1] - 1
    components = w0[:, 1:] * np.sqrt(q)
    return SupRejectionSolver(Benchmark(design, family), components, c0, grid_size), q


def sup_rejection(
    w0: Array,
    design: SpatialDesign,
    family: str,
    c0: float,
    cv: float,
    grid_size: int = 50,
) -> RejectionCurve:
    """Rejection curve over c in [c0, c_weak] plus the Sigma = I endpoint."""
    solver, q = _solver_for_w0(w0, design, family, c0, grid_size)
    return solver.curve(q, cv)


def critical_value(
    w0: Array,
    design: SpatialDesign,
    family: str,
    c0: float,
    alpha: float,
    grid_size: int = 50,
) -> CriticalValueResult:
    """Critical value equating the sup-over-c rejection probability to alpha."""
    solver, q = _solver_for_w0(w0, design, family, c0, grid_size)
    return solver.critical_value(q, alpha)
