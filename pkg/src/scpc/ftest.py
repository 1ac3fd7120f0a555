"""Multivariate extension: Hotelling statistic with the component basis.

The null distribution of the statistic under the blockwise Gaussian benchmark
depends on the data only through the (q+1) x m matrix of weighted sums, so
critical values are obtained by Monte Carlo on that small sufficient
reduction, with the sup taken over an elementwise persistence grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product

import numpy as np
from numpy.typing import NDArray
from scipy.special import gammaln

from .covariance import Benchmark
from .eigen import PCBasis
from .errors import InputError, NumericError
from .geometry import SpatialDesign

Array = NDArray[np.float64]

#: hard cap on the persistence product grid
MAX_GRID_CELLS = 10_000
#: largest m for which the default product grid is generated automatically
MAX_AUTO_M = 3


def hotelling_t2(y: Array, mu0: Array, basis: PCBasis) -> float:
    """n (ybar - mu0)' (Y' W W' Y)^{-1} (ybar - mu0) with W = R / sqrt(q).

    Reduces to tau^2 / n when m = 1.
    """
    y = np.atleast_2d(np.asarray(y, dtype=float))
    n, m = y.shape
    mu0 = np.asarray(mu0, dtype=float).reshape(-1)
    if n != basis.n:
        raise InputError(f"Y has {n} rows, expected {basis.n}")
    if mu0.shape != (m,):
        raise InputError(f"mu0 has shape {mu0.shape}, expected ({m},)")
    q = basis.q
    if q < m:
        raise InputError(f"need q >= m, got q={q}, m={m}")
    w = basis.r / math.sqrt(q)
    proj = w.T @ y  # q x m
    inner = proj.T @ proj
    diff = y.mean(axis=0) - mu0
    try:
        sol = np.linalg.solve(inner, diff)
    except np.linalg.LinAlgError as exc:
        raise NumericError("Y' W W' Y is singular; increase q") from exc
    return float(n * diff @ sol)


def _t2_from_reduction(x: Array, n: int) -> Array:
    """Batched statistic from draws of the sufficient reduction.

    x has shape (reps, q+1, m): row 0 holds the column sums 1'U, the rest
    holds W'U.
    """
    x0 = x[:, 0, :]
    xi = x[:, 1:, :]
    b = np.einsum("rqm,rqn->rmn", xi, xi)
    try:
        sol = np.linalg.solve(b, x0[:, :, None])[:, :, 0]
    except np.linalg.LinAlgError as exc:
        raise NumericError("singular inner matrix in the Monte Carlo; increase q") from exc
    return np.einsum("rm,rm->r", x0, sol) / n


@dataclass(frozen=True)
class FtestCritical:
    cv: float
    alpha: float
    m: int
    q: int
    mc_reps: int
    mc_se: float  # probability-scale Monte Carlo standard error
    sup_cell: tuple
    grid: list[float]  # per-coordinate persistence values; inf = iid

    def to_dict(self) -> dict:
        return {
            "cv": self.cv,
            "alpha": self.alpha,
            "m": self.m,
            "q": self.q,
            "mc_reps": self.mc_reps,
            "mc_se": self.mc_se,
            "sup_cell": [None if np.isinf(c) else c for c in self.sup_cell],
        }


def ftest_critical_value(
    design: SpatialDesign,
    basis: PCBasis,
    c0: float,
    alpha: float,
    m: int,
    mc_reps: int = 100_000,
    c_grid_per_coord: int = 8,
    seed: int = 0,
    family: str = "exponential",
    c_values: Array | None = None,
) -> FtestCritical:
    """Monte Carlo critical value with the sup over the persistence vector.

    For each cell of the per-coordinate product grid the statistic is
    simulated from its (q+1) x m Gaussian sufficient reduction (independent
    coordinates under the benchmark); the critical value is the largest
    per-cell (1 - alpha) quantile, which makes the sup of the Monte Carlo
    rejection probability equal alpha.
    """
    if m < 1:
        raise InputError("m must be at least 1")
    if basis.q < m:
        raise InputError(f"need q >= m, got q={basis.q}, m={m}")
    if mc_reps < 1000:
        raise InputError("mc_reps is too small for a usable quantile")
    bench = Benchmark(design, family)
    if c_values is None:
        if m > MAX_AUTO_M:
            raise InputError(
                f"m = {m} exceeds the automatic-grid limit ({MAX_AUTO_M}); pass c_values explicitly"
            )
        c_hi = bench.weak_correlation_cutoff(c_start=max(1.0, c0))
        c_values = np.append(np.geomspace(c0, max(c_hi, 2 * c0), c_grid_per_coord), np.inf)
    c_values = np.asarray(c_values, dtype=float)
    n_cells = len(c_values) ** m
    if n_cells > MAX_GRID_CELLS:
        raise InputError(f"persistence grid has {n_cells} cells, above the cap {MAX_GRID_CELLS}")

    w0 = basis.w0()
    n = design.n
    chols: dict[float, Array] = {}
    for c in c_values:
        omega = w0.T @ (np.eye(n) if np.isinf(c) else bench.sigma(float(c))) @ w0
        try:
            chols[float(c)] = np.linalg.cholesky(omega)
        except np.linalg.LinAlgError as exc:
            raise NumericError(f"Omega(c={c}) is not positive definite") from exc

    k = basis.q + 1
    cv = -np.inf
    sup_cell: tuple = ()
    for cell_idx, cell in enumerate(product(c_values, repeat=m)):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(cell_idx,)))
        z = rng.standard_normal((mc_reps, k, m))
        x = np.empty_like(z)
        for j, c in enumerate(cell):
            x[:, :, j] = z[:, :, j] @ chols[float(c)].T
        t2 = _t2_from_reduction(x, n)
        quant = float(np.quantile(t2, 1.0 - alpha))
        if quant > cv:
            cv = quant
            sup_cell = cell
    return FtestCritical(
        cv=cv,
        alpha=alpha,
        m=m,
        q=basis.q,
        mc_reps=mc_reps,
        mc_se=math.sqrt(alpha * (1 - alpha) / mc_reps),
        sup_cell=sup_cell,
        grid=[float(c) for c in c_values],
    )


def volume_objective(q: int, cv: float, n: int, m: int) -> float:
    """Expected confidence-ellipsoid volume under the i.i.d. model (up to shape constants)."""
    if q < m:
        raise InputError("q must be at least m")
    log_vol = (
        0.5 * m * math.log(2.0 * math.pi * cv / n)
        + gammaln((q + 1) / 2.0)
        - 0.5 * math.log(q)
        - gammaln((q - m + 1) / 2.0)
        - gammaln(m / 2.0 + 1.0)
    )
    return math.exp(log_vol)


@dataclass(frozen=True)
class VolumeSelection:
    q: int
    cv: float
    table: list[dict]


def select_q_volume(
    design: SpatialDesign,
    c0: float,
    alpha: float,
    m: int,
    q_max: int,
    mc_reps: int = 100_000,
    seed: int = 0,
    tie_rel: float = 1e-3,
    basis_full: PCBasis | None = None,
) -> VolumeSelection:
    """Scan q = m..q_max for the smallest expected confidence-ellipsoid volume."""
    from .eigen import pc_weights

    if q_max < m:
        raise InputError("q_max must be at least m")
    if basis_full is None:
        basis_full = pc_weights(Benchmark(design, "exponential").sigma(c0), q_max)
    table = []
    for q in range(m, q_max + 1):
        crit = ftest_critical_value(
            design, basis_full.truncated(q), c0, alpha, m, mc_reps=mc_reps, seed=seed
        )
        table.append({"q": q, "cv": crit.cv, "volume": volume_objective(q, crit.cv, design.n, m)})
    best = min(row["volume"] for row in table)
    q_star = next(row["q"] for row in table if row["volume"] <= best * (1.0 + tie_rel))
    cv_star = next(row["cv"] for row in table if row["q"] == q_star)
    return VolumeSelection(q=q_star, cv=cv_star, table=table)


@dataclass(frozen=True)
class HotellingResult:
    t2: float
    cv: float
    q: int
    m: int
    reject: bool
    alpha: float
    table: list[dict]

    def to_dict(self) -> dict:
        return {
            "t2": self.t2,
            "cv": self.cv,
            "q": self.q,
            "m": self.m,
            "reject": self.reject,
            "alpha": self.alpha,
            "volume_table": self.table,
        }


def hotelling_test(
    y: Array,
    mu0: Array,
    design: SpatialDesign,
    rho0: float = 0.02,
    alpha: float = 0.05,
    q_max: int = 20,
    mc_reps: int = 100_000,
    seed: int = 0,
) -> HotellingResult:
    """Joint test of an m-vector of means with volume-minimizing q."""
    from .covariance import calibrate_c0
    from .eigen import pc_weights

    y = np.atleast_2d(np.asarray(y, dtype=float))
    m = y.shape[1]
    c0 = calibrate_c0(design, "exponential", rho0)
    q_max = min(q_max, design.n - 1)
    basis_full = pc_weights(Benchmark(design, "exponential").sigma(c0), q_max)
    sel = select_q_volume(
        design, c0, alpha, m, q_max, mc_reps=mc_reps, seed=seed, basis_full=basis_full
    )
    t2 = hotelling_t2(y, mu0, basis_full.truncated(sel.q))
    return HotellingResult(
        t2=t2,
        cv=sel.cv,
        q=sel.q,
        m=m,
        reject=bool(t2 > sel.cv),
        alpha=alpha,
        table=sel.table,
    )
