"""The confidence-interval pipeline: variance estimator, q selection, intervals.

The variance estimator averages the squared leading principal components of
the residuals under the worst-case benchmark; the critical value comes from
the rejection engine; q minimizes the expected interval length in the
i.i.d. Gaussian model.  A score transformation maps linear-regression (and,
experimentally, linear-IV) problems onto the mean problem.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
import numpy as np
from numpy.typing import NDArray
from scipy.special import gammaln

from .covariance import Benchmark, calibrate_c0, resolve_family
from .eigen import PCBasis, nystrom_pc_weights, pc_weights
from .errors import DegenerateStatisticError, InputError, stage
from .geometry import SpatialDesign
from .rejection import CriticalValueResult, SupRejectionSolver

Array = NDArray[np.float64]

DEFAULT_SEED = 20210201
#: relative slack within which two q-objective values count as tied
OBJECTIVE_TIE_REL = 1e-3


def scpc_sigma_hat(basis: PCBasis, u_hat: Array) -> float:
    """Variance estimator: mean of the squared scaled component projections.

    Returns sigma-hat squared.  Adding a constant to the residuals does not
    change the value because every component is orthogonal to the constant.
    """
    u = np.asarray(u_hat, dtype=float)
    if u.shape != (basis.n,):
        raise InputError(f"residuals have shape {u.shape}, expected ({basis.n},)")
    proj = basis.r.T @ u / math.sqrt(basis.n)
    return float(proj @ proj / basis.q)


def t_statistic(y: Array, mu0: float, basis: PCBasis) -> float:
    """sqrt(n) (ybar - mu0) / sigma-hat with sigma-hat from ``basis``."""
    y = np.asarray(y, dtype=float)
    n = basis.n
    if y.shape != (n,):
        raise InputError(f"y has shape {y.shape}, expected ({n},)")
    ybar = float(y.mean())
    s2 = scpc_sigma_hat(basis, y - ybar)
    if s2 <= 0.0:
        raise DegenerateStatisticError(
            "sigma-hat is zero: the outcomes lie in the orthogonal complement of the basis"
        )
    return math.sqrt(n) * (ybar - mu0) / math.sqrt(s2)


def expected_length_iid(q: int, cv: float, n: int) -> float:
    """Expected confidence-interval length under the i.i.d. Gaussian model.

    sqrt(8/(n q)) cv Gamma((q+1)/2) / Gamma(q/2); exact because q times the
    squared variance estimator is chi-square(q) in that model.
    """
    if q < 1:
        raise InputError("q must be at least 1")
    return math.sqrt(8.0 / (n * q)) * cv * math.exp(gammaln((q + 1) / 2.0) - gammaln(q / 2.0))


@dataclass(frozen=True)
class QSelection:
    q: int
    cv: float
    table: list[dict]  # one row per candidate q: q, cv, length, sup_c
    result: CriticalValueResult

    def as_records(self) -> list[dict]:
        return self.table


def select_q(
    design: SpatialDesign | None,
    family: str | None,
    c0: float,
    alpha: float,
    q_max: int,
    *,
    components: Array | None = None,
    benchmark: Benchmark | None = None,
    basis: PCBasis | None = None,
    grid_size: int = 50,
    tie_rel: float = OBJECTIVE_TIE_REL,
) -> QSelection:
    """Scan q = 1..q_max for the shortest expected i.i.d. interval.

    The scan is full (the objective can be non-monotone).  Candidates whose
    objective is within ``tie_rel`` of the minimum are tied -- the solver
    tolerance on the critical value makes smaller differences meaningless --
    and ties resolve to the smallest q.

    ``components`` overrides the principal-component columns (e.g. cosine
    weights for the regularly spaced time-series estimator); by default they
    are the top q_max eigenvectors of the demeaned benchmark covariance.
    """
    if benchmark is None:
        if design is None or family is None:
            raise InputError("select_q needs either a benchmark or (design, family)")
        benchmark = Benchmark(design, family)
    if q_max < 1 or q_max > benchmark.n - 1:
        raise InputError(f"q_max must lie in [1, n-1], got {q_max}")
    if components is None:
        if basis is None:
            basis = pc_weights(benchmark.sigma(c0), q_max)
        components = basis.r
    components = np.asarray(components, dtype=float)
    if components.shape[1] < q_max:
        raise InputError("component matrix has fewer than q_max columns")
    solver = SupRejectionSolver(benchmark, components[:, :q_max], c0, grid_size)

    table: list[dict] = []
    results: dict[int, CriticalValueResult] = {}
    for q in range(1, q_max + 1):
        try:
            res = solver.critical_value(q, alpha)
        except Exception as exc:
            raise type(exc)(f"{exc} (while solving q={q})") from exc
        results[q] = res
        table.append(
            {
                "q": q,
                "cv": res.cv,
                "length": expected_length_iid(q, res.cv, benchmark.n),
                "sup_c": res.sup_c,
            }
        )
    best = min(row["length"] for row in table)
    q_star = next(row["q"] for row in table if row["length"] <= best * (1.0 + tie_rel))
    return QSelection(q=q_star, cv=results[q_star].cv, table=table, result=results[q_star])


@dataclass(frozen=True)
class ScpcOptions:
    """Tuning knobs for the interval pipeline; defaults follow the benchmarks."""

    family: str = "exponential"
    q: int | None = None
    q_max: int = 40
    grid_size: int = 50
    tie_rel: float = OBJECTIVE_TIE_REL
    nystrom: str = "auto"  # auto | on | off
    nystrom_subset_size: int | None = None
    nystrom_subsets: int = 3
    nystrom_threshold: int = 2000
    seed: int = DEFAULT_SEED


@dataclass(frozen=True)
class ScpcResult:
    mean: float
    sigma_hat: float
    q: int
    cv: float
    ci: tuple[float, float]
    c0: float
    rho0: float
    alpha: float
    diagnostics: dict

    def to_dict(self) -> dict:
        return {
            "mean": self.mean,
            "sigma_hat": self.sigma_hat,
            "q": self.q,
            "cv": self.cv,
            "ci": [self.ci[0], self.ci[1]],
            "c0": self.c0,
            "rho0": self.rho0,
            "alpha": self.alpha,
            "diagnostics": self.diagnostics,
        }


def _build_basis(design: SpatialDesign, family: str, c0: float, q_max: int, options: ScpcOptions) -> PCBasis:
    mode = options.nystrom
    if mode not in ("auto", "on", "off"):
        raise InputError("nystrom must be one of auto|on|off")
    use_nystrom = mode == "on" or (mode == "auto" and design.n > options.nystrom_threshold)
    if not use_nystrom:
        return pc_weights(Benchmark(design, family).sigma(c0), q_max)
    subset = options.nystrom_subset_size or min(1000, design.n)
    from .covariance import CovarianceKernel

    return nystrom_pc_weights(
        design,
        CovarianceKernel(family, c0),
        q_max,
        subset_size=subset,
        n_subsets=options.nystrom_subsets,
        seed=options.seed,
    )


def scpc_interval(
    y: Array,
    design: SpatialDesign,
    rho0: float = 0.02,
    alpha: float = 0.05,
    options: ScpcOptions | None = None,
) -> ScpcResult:
    """End-to-end confidence interval for the mean of spatially correlated data.

    Calibrates the benchmark persistence to the requested average pairwise
    correlation, builds the component basis (exactly, or via subsets when n
    is large), selects q, solves the critical value, and assembles
    ybar +- cv sigma-hat / sqrt(n).
    """
    options = options or ScpcOptions()
    y = np.asarray(y, dtype=float)
    if y.shape != (design.n,):
        raise InputError(f"y has shape {y.shape}, expected ({design.n},)")
    family = resolve_family(options.family)
    n = design.n
    q_max = min(options.q_max, n - 1)

    c0 = _stage_calibrate(design, family, rho0)
    basis = _stage_basis(design, family, c0, q_max, options)
    selection = _stage_select(design, family, c0, alpha, q_max, basis, options)
    q, cv = selection.q, selection.cv

    ybar = float(y.mean())
    s2 = scpc_sigma_hat(basis.truncated(q), y - ybar)
    if s2 <= 0.0:
        raise DegenerateStatisticError("[estimate] sigma-hat is zero (constant or degenerate y)")
    shat = math.sqrt(s2)
    half = cv * shat / math.sqrt(n)
    curve = selection.result.curve
    diagnostics = {
        "basis_source": basis.source,
        "sup_c": selection.result.sup_c,
        "rejection_curve": curve.as_records(),
        "q_table": selection.as_records(),
        "quadrature_error_estimate": selection.result.quadrature_error_estimate,
    }
    return ScpcResult(
        mean=ybar,
        sigma_hat=shat,
        q=q,
        cv=cv,
        ci=(ybar - half, ybar + half),
        c0=c0,
        rho0=rho0,
        alpha=alpha,
        diagnostics=diagnostics,
    )


@stage("calibrate")
def _stage_calibrate(design, family, rho0):
    return calibrate_c0(design, family, rho0)


@stage("basis")
def _stage_basis(design, family, c0, q_max, options):
    return _build_basis(design, family, c0, q_max, options)


@stage("select-q")
def _stage_select(design, family, c0, alpha, q_max, basis, options):
    if options.q is not None:
        if not 1 <= options.q <= q_max:
            raise InputError(f"q must lie in [1, {q_max}]")
        solver = SupRejectionSolver(Benchmark(design, family), basis.r[:, : options.q], c0, options.grid_size)
        res = solver.critical_value(options.q, alpha)
        row = {
            "q": options.q,
            "cv": res.cv,
            "length": expected_length_iid(options.q, res.cv, design.n),
            "sup_c": res.sup_c,
        }
        return QSelection(q=options.q, cv=res.cv, table=[row], result=res)
    return select_q(
        design,
        None,
        c0,
        alpha,
        q_max,
        benchmark=Benchmark(design, family),
        basis=basis,
        grid_size=options.grid_size,
        tie_rel=options.tie_rel,
    )


@dataclass(frozen=True)
class RegressionInput:
    """A linear regression w = x beta + z' delta + eps observed at the design points.

    ``z`` should contain the intercept column when one is wanted; with
    ``z = None`` the score transformation runs without partialling out.
    """

    w: Array
    x: Array
    z: Array | None = None


@dataclass(frozen=True)
class RegressionScores:
    scores: Array
    beta_hat: float
    x_tilde_var: float


def regression_scores(reg: RegressionInput, design: SpatialDesign | None = None) -> RegressionScores:
    """Pseudo-observations whose mean problem is the beta inference problem.

    y_l = beta-hat + x-tilde_l eps-hat_l / (n^{-1} sum x-tilde^2), where
    x-tilde partials the controls out of x.  The scores average exactly to
    the OLS beta-hat, so running the interval pipeline on them yields the
    confidence interval for beta.
    """
    w = np.asarray(reg.w, dtype=float)
    x = np.asarray(reg.x, dtype=float)
    n = w.shape[0]
    if x.shape != (n,):
        raise InputError("w and x must be equal-length vectors")
    if design is not None and design.n != n:
        raise InputError("regression data and design disagree on n")
    if reg.z is not None:
        z = np.atleast_2d(np.asarray(reg.z, dtype=float))
        if z.shape[0] != n:
            z = z.T
        if z.shape[0] != n:
            raise InputError("controls z must have n rows")
        zz = z.T @ z
        if np.linalg.matrix_rank(zz) < z.shape[1]:
            raise InputError("controls z are rank deficient")
        coef_x = np.linalg.solve(zz, z.T @ x)
        x_tilde = x - z @ coef_x
        design_mat = np.column_stack([x, z])
    else:
        x_tilde = x
        design_mat = x[:, None]
    sxx = float(x_tilde @ x_tilde) / n
    scale = float(x @ x) / n
    if sxx <= 1e-12 * max(scale, 1.0):
        raise InputError("x is collinear with the controls (zero residual variance)")
    coefs, *_ = np.linalg.lstsq(design_mat, w, rcond=None)
    eps_hat = w - design_mat @ coefs
    beta_hat = float(x_tilde @ w / (n * sxx))
    scores = beta_hat + x_tilde * eps_hat / sxx
    return RegressionScores(scores=scores, beta_hat=beta_hat, x_tilde_var=sxx)


def iv_scores(
    w: Array,
    x: Array,
    instrument: Array,
    z: Array | None = None,
) -> RegressionScores:
    """Scores for just-identified linear IV (experimental GMM recipe).

    Partials the controls out of the outcome, the endogenous regressor, and
    the instrument, then forms y_l = beta-hat + zeta_l eps_l / (n^{-1} zeta'x).
    The scores average exactly to the IV estimate.
    """
    w = np.asarray(w, dtype=float)
    x = np.asarray(x, dtype=float)
    zeta = np.asarray(instrument, dtype=float)
    n = w.shape[0]
    if x.shape != (n,) or zeta.shape != (n,):
        raise InputError("w, x, and instrument must be equal-length vectors")
    if z is not None:
        zc = np.atleast_2d(np.asarray(z, dtype=float))
        if zc.shape[0] != n:
            zc = zc.T
        proj = zc @ np.linalg.lstsq(zc, np.column_stack([w, x, zeta]), rcond=None)[0]
        w = w - proj[:, 0]
        x = x - proj[:, 1]
        zeta = zeta - proj[:, 2]
    szx = float(zeta @ x) / n
    if abs(szx) <= 1e-12 * max(1.0, float(np.abs(zeta @ zeta)) / n):
        raise InputError("instrument is uncorrelated with the endogenous regressor")
    beta_hat = float(zeta @ w) / (n * szx)
    eps_hat = w - x * beta_hat
    scores = beta_hat + zeta * eps_hat / szx
    return RegressionScores(scores=scores, beta_hat=beta_hat, x_tilde_var=szx)
