"""Correlation kernels, benchmark covariance matrices, and persistence calibration.

The benchmark family is isotropic: entry (i, j) of the covariance matrix is a
radial correlation profile evaluated at the Euclidean distance between
locations i and j.  Four smoothness profiles are supported; ``exponential``
is the default worst-case model used throughout, the Matern 3/2, 5/2 and
Gaussian (squared-exponential) profiles are the certification class.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray
from scipy.optimize import brentq

from .errors import CalibrationError, InputError
from .geometry import SpatialDesign

Array = NDArray[np.float64]

#: dense covariance matrices are refused above this size (memory guard)
MAX_DENSE_N = 20_000

_SQRT3 = np.sqrt(3.0)
_SQRT5 = np.sqrt(5.0)


def _profile_exponential(a: Array) -> Array:
    return np.exp(-a)


def _profile_matern32(a: Array) -> Array:
    t = _SQRT3 * a
    return (1.0 + t) * np.exp(-t)


def _profile_matern52(a: Array) -> Array:
    # (1 + t + t^2/3) e^{-t}: the positive-definite nu = 5/2 profile
    t = _SQRT5 * a
    return (1.0 + t + t * t / 3.0) * np.exp(-t)


def _profile_gaussian(a: Array) -> Array:
    return np.exp(-0.5 * a * a)


FAMILIES = {
    "exponential": _profile_exponential,
    "matern32": _profile_matern32,
    "matern52": _profile_matern52,
    "gaussian": _profile_gaussian,
}

#: smoothness aliases accepted on the command line (nu values)
FAMILY_ALIASES = {
    "0.5": "exponential",
    "1/2": "exponential",
    "1.5": "matern32",
    "3/2": "matern32",
    "2.5": "matern52",
    "5/2": "matern52",
    "inf": "gaussian",
}


def resolve_family(name: str) -> str:
    key = str(name).strip().lower()
    key = FAMILY_ALIASES.get(key, key)
    if key not in FAMILIES:
        raise InputError(f"unknown kernel family {name!r}; choose from {sorted(FAMILIES)}")
    return key


@dataclass(frozen=True)
class CovarianceKernel:
    """An isotropic correlation family with persistence parameter ``c > 0``.

    Larger ``c`` means faster decay, i.e. weaker spatial correlation.
    """

    family: str
    c: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "family", resolve_family(self.family))
        if not np.isfinite(self.c) or self.c <= 0:
            raise InputError(f"persistence parameter c must be positive, got {self.c}")


def kernel_value(kernel: CovarianceKernel, distance) -> Array | float:
    """Correlation of two observations a given distance apart; 1 at distance 0."""
    d = np.asarray(distance, dtype=float)
    if np.any(d < 0):
        raise InputError("distance must be nonnegative")
    out = FAMILIES[kernel.family](kernel.c * d)
    return float(out) if np.isscalar(distance) or out.ndim == 0 else out


def covariance_matrix(kernel: CovarianceKernel, design: SpatialDesign) -> Array:
    """Benchmark correlation matrix of the design under ``kernel``.

    Symmetric with a unit diagonal; positive semidefinite by construction
    (no projection or repair is applied).
    """
    if design.n > MAX_DENSE_N:
        raise InputError(
            f"n = {design.n} exceeds the dense-matrix guard ({MAX_DENSE_N}); "
            "use the Nystrom path for the basis and a coarser grid for calibration"
        )
    sigma = FAMILIES[kernel.family](kernel.c * design.dist)
    np.fill_diagonal(sigma, 1.0)
    return sigma


def avg_pairwise_correlation(sigma: Array) -> float:
    """Mean off-diagonal correlation of a covariance matrix.

    Off-diagonal entries are normalized by the geometric mean of the two
    diagonal entries, so the result is a correlation average even when the
    input is a covariance rather than a correlation matrix.
    """
    sigma = np.asarray(sigma, dtype=float)
    n = sigma.shape[0]
    if sigma.ndim != 2 or sigma.shape[1] != n:
        raise InputError("sigma must be square")
    if n < 2:
        raise InputError("need at least 2 observations")
    d = np.diag(sigma)
    if np.any(d <= 0):
        raise InputError("sigma must have a positive diagonal")
    s = np.sqrt(d)
    corr = sigma / np.outer(s, s)
    return float((corr.sum() - np.trace(corr)) / (n * (n - 1)))


class Benchmark:
    """A design plus a kernel family: the one-parameter model c -> Sigma(c).

    Caches the distance matrix so that repeated Sigma(c) evaluations on a
    persistence grid cost one profile evaluation each.
    """

    def __init__(self, design: SpatialDesign, family: str = "exponential") -> None:
        self.design = design
        self.family = resolve_family(family)
        self._profile = FAMILIES[self.family]

    @property
    def n(self) -> int:
        return self.design.n

    def sigma(self, c: float) -> Array:
        if c <= 0:
            raise InputError("persistence parameter c must be positive")
        if self.design.n > MAX_DENSE_N:
            raise InputError(f"n = {self.design.n} exceeds the dense-matrix guard ({MAX_DENSE_N})")
        s = self._profile(c * self.design.dist)
        np.fill_diagonal(s, 1.0)
        return s

    def rho_bar(self, c: float) -> float:
        d = self.design.dist
        n = self.design.n
        vals = self._profile(c * d[np.triu_indices(n, k=1)])
        return float(2.0 * vals.sum() / (n * (n - 1)))

    def weak_correlation_cutoff(self, floor: float = 1e-6, c_start: float = 1.0) -> float:
        """Smallest probed c with average pairwise correlation below ``floor``."""
        c = c_start
        for _ in range(200):
            if self.rho_bar(c) < floor:
                return c
            c *= 2.0
        raise CalibrationError("could not drive the average correlation below the floor")


def calibrate_c0(design: SpatialDesign, family: str, rho0: float) -> float:
    """Persistence value whose benchmark matrix has average correlation ``rho0``.

    Solved by bisection on log c, using strict monotonicity of the average
    pairwise correlation in c.  The bracket is scale-free: it spans
    [1e-6, 1e8] divided by the median nonzero distance.
    """
    if not 0.0 < rho0 < 1.0:
        raise InputError(f"rho0 must lie in (0, 1), got {rho0}")
    bench = Benchmark(design, family)
    d = design.dist
    nz = d[d > 0]
    if nz.size == 0:
        raise CalibrationError("all locations coincide; the average correlation is 1 for every c")
    med = float(np.median(nz))
    lo, hi = 1e-6 / med, 1e8 / med
    f = lambda log_c: bench.rho_bar(np.exp(log_c)) - rho0
    f_lo, f_hi = f(np.log(lo)), f(np.log(hi))
    if f_lo < 0 or f_hi > 0:
        attainable = (bench.rho_bar(hi), bench.rho_bar(lo))
        raise CalibrationError(
            f"rho0 = {rho0} is outside the attainable range "
            f"[{attainable[0]:.3e}, {attainable[1]:.6f}] on this design"
        )
    log_c0 = brentq(f, np.log(lo), np.log(hi), xtol=1e-10)
    return float(np.exp(log_c0))
