"""Simulation harness: Gaussian fields, size/length studies, competitor methods.

Fields are drawn per replication from a counter-derived random stream, so
reports are bit-reproducible for a fixed seed no matter how the replication
loop is chunked or parallelized.  Competing inference procedures (kernel,
cluster, and projection methods) are prepared once per experiment and then
evaluated on the whole batch of simulated fields.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.typing import NDArray
from scipy import stats

from .covariance import Benchmark, CovarianceKernel, calibrate_c0, covariance_matrix
from .eigen import pc_weights
from .errors import InputError, NumericError
from .estimator import DEFAULT_SEED, ScpcOptions, select_q
from .geometry import (
    DesignSpec,
    SpatialDesign,
    measurement_error_halfwidth,
    perturb_locations,
    sample_design,
)
from .rejection import bs_probability, spectrum_from_omega

Array = NDArray[np.float64]

_JITTERS = (0.0, 1e-12, 1e-10, 1e-8)
# random-stream identifiers for counter-based seeding
_FIELD_STREAM = 0
_LOCATION_STREAM = 1


def _jittered_cholesky(sigma: Array) -> Array:
    n = sigma.shape[0]
    try:
        return np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        pass
    # exactly singular PSD matrices (duplicate locations) get an eigenvalue
    # square root so that perfectly correlated coordinates stay identical
    evals, evecs = np.linalg.eigh(sigma)
    if evals.min() >= -1e-10 * max(1.0, evals.max()):
        return evecs * np.sqrt(np.clip(evals, 0.0, None))
    for jit in _JITTERS[1:]:
        try:
            return np.linalg.cholesky(sigma + jit * np.eye(n))
        except np.linalg.LinAlgError:
            continue
    raise NumericError(f"covariance is not positive semidefinite even with jitter {_JITTERS[-1]}")


def simulate_field(sigma: Array, reps: int, seed: int = 0) -> Array:
    """reps x n Gaussian draws with covariance ``sigma``.

    Row r is L z_r where L is the (jitter-escalated) Cholesky factor and z_r
    comes from the replication's own substream; with sigma = I the rows are
    the raw standard-normal stream.
    """
    sigma = np.asarray(sigma, dtype=float)
    if reps < 1:
        raise InputError("reps must be at least 1")
    chol = _jittered_cholesky(sigma)
    n = sigma.shape[0]
    z = _field_draws(n, reps, seed)
    return z @ chol.T


def _field_draws(n: int, reps: int, seed: int) -> Array:
    z = np.empty((reps, n))
    for r in range(reps):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(_FIELD_STREAM, r)))
        z[r] = rng.standard_normal(n)
    return z


# ---------------------------------------------------------------------------
# competitor methods
# ---------------------------------------------------------------------------


def bartlett_kernel_matrix(design: SpatialDesign, bandwidth: float) -> Array:
    if bandwidth <= 0:
        raise InputError("bandwidth must be positive")
    return np.clip(1.0 - design.dist / bandwidth, 0.0, None)


def _psd_projection_weights(design: SpatialDesign, bandwidth: float) -> Array:
    """Columns W with WW' the PSD part of the demeaned kernel quadratic form.

    The radial tent kernel is not positive definite in d >= 2, so small
    negative eigenvalues of M K M are dropped; the rejection engine needs the
    quadratic form to be PSD.
    """
    k = bartlett_kernel_matrix(design, bandwidth)
    row = k.mean(axis=1, keepdims=True)
    mkm = k - row - row.T + k.mean()
    evals, evecs = np.linalg.eigh(mkm)
    keep = evals > max(1.0, evals.max()) * 1e-12
    if not np.any(keep):
        raise NumericError("demeaned kernel matrix has no positive eigenvalues")
    return evecs[:, keep] * np.sqrt(evals[keep])


def _quadratic_form_rejection(w: Array, sigma: Array, cv: float) -> float:
    """P(tau^2 > cv^2) for sigma-hat^2 = n^{-1} u' WW' u under N(0, sigma)."""
    n = w.shape[0]
    w0 = np.column_stack([np.ones(n), w])
    return bs_probability(spectrum_from_omega(w0.T @ sigma @ w0, cv).eta)


class _TStatMethod:
    """Shared evaluate() for methods of the form |sqrt(n)(ybar-mu0)/sigma-hat| > cv."""

    cv: float
    _w: Array  # n x k, columns orthogonal to the constant

    def evaluate(self, y: Array, mu0: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        y = np.atleast_2d(y)
        n = y.shape[1]
        s2 = (y @ self._w) ** 2 @ np.ones(self._w.shape[1]) / n
        ok = s2 > 0
        s = np.sqrt(np.where(ok, s2, np.nan))
        tau = math.sqrt(n) * (y.mean(axis=1) - mu0) / s
        reject = np.abs(tau) > self.cv
        length = 2.0 * self.cv * s / math.sqrt(n)
        return reject, length, ~ok


class ScpcMethod(_TStatMethod):
    def __init__(self, design: SpatialDesign, alpha: float, params: dict):
        rho0 = params.get("rho0", 0.02)
        options: ScpcOptions = params.get("options", ScpcOptions())
        family = params.get("family", options.family)
        q_max = min(params.get("q_max", options.q_max), design.n - 1)
        c0 = calibrate_c0(design, family, rho0)
        basis = pc_weights(Benchmark(design, family).sigma(c0), q_max)
        sel = select_q(
            design, family, c0, alpha, q_max, basis=basis,
            grid_size=options.grid_size, tie_rel=options.tie_rel,
        )
        self.cv = sel.cv
        self.q = sel.q
        self.c0 = c0
        self._w = basis.r[:, : sel.q] / math.sqrt(sel.q)
        self.info = {"q": sel.q, "cv": sel.cv, "c0": c0, "rho0": rho0}


class BartlettOracleMethod(_TStatMethod):
    """Bartlett kernel with standard-normal critical value and oracle bandwidth.

    The bandwidth minimizes |size - alpha| where size is the exact rejection
    probability under the declared truth covariance, computed by quadrature.
    """

    def __init__(
        self,
        design: SpatialDesign,
        alpha: float,
        truth_sigma: Array,
        n_bandwidths: int = 25,
    ):
        self.cv = float(stats.norm.ppf(1.0 - alpha / 2.0))
        d = design.dist
        positive = d[d > 0]
        if positive.size == 0:
            raise InputError("design has no distinct locations")
        grid = np.geomspace(positive.min(), positive.max(), n_bandwidths)
        best = None
        for b in grid:
            w = _psd_projection_weights(design, float(b))
            size = _quadratic_form_rejection(w, truth_sigma, self.cv)
            if best is None or abs(size - alpha) < best[0]:
                best = (abs(size - alpha), float(b), size, w)
        _, self.bandwidth, self.oracle_size, self._w = best
        self.info = {"bandwidth": self.bandwidth, "oracle_size": self.oracle_size, "cv": self.cv}


class KvbMethod(_TStatMethod):
    """Full-span Bartlett kernel; critical value exact under Sigma = I."""

    def __init__(self, design: SpatialDesign, alpha: float):
        b = float(design.dist.max())
        self._w = _psd_projection_weights(design, b)
        eye = np.eye(design.n)
        g = lambda cv: _quadratic_form_rejection(self._w, eye, cv) - alpha
        from scipy.optimize import brentq

        self.cv = float(brentq(g, 1e-6, 400.0, xtol=1e-9))
        self.bandwidth = b
        self.info = {"bandwidth": b, "cv": self.cv}


def cluster_assign(design: SpatialDesign, q: int) -> np.ndarray:
    """Greedy equal-capacity cluster labels around rectangle anchor points.

    Anchors are the four corners of the circumscribing rectangle and, for
    q = 9, also the four side midpoints and the center.  At each step the
    unassigned location whose maximal distance over unfull clusters is
    smallest joins its nearest unfull cluster; ties break toward the lowest
    location / anchor index.
    """
    if q not in (4, 9):
        raise InputError("cluster count q must be 4 or 9")
    coords = design.coords
    if coords.shape[1] == 1:
        x = coords[:, 0]
        lo, hi = x.min(), x.max()
        mid = 0.5 * (lo + hi)
        pts = [lo, hi, lo, hi] if q == 4 else [lo, hi, lo, hi, mid, mid, mid, mid, mid]
        anchors = np.array(pts)[:, None]
    else:
        xy = coords[:, :2]
        (x0, y0), (x1, y1) = xy.min(axis=0), xy.max(axis=0)
        corners = [(x0, y1), (x1, y1), (x1, y0), (x0, y0)]  # NW, NE, SE, SW
        if q == 4:
            anchors = np.array(corners)
        else:
            xm, ym = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
            mids = [(xm, y1), (x1, ym), (xm, y0), (x0, ym)]  # N, E, S, W
            anchors = np.array(corners + mids + [(xm, ym)])
        if coords.shape[1] > 2:
            pad = np.tile(coords[:, 2:].mean(axis=0), (q, 1))
            anchors = np.column_stack([anchors, pad])

    n = design.n
    base, extra = divmod(n, q)
    capacity = np.full(q, base)
    capacity[:extra] += 1
    dist_to_anchor = np.linalg.norm(coords[:, None, :] - anchors[None, :, :], axis=2)
    labels = np.full(n, -1)
    counts = np.zeros(q, dtype=int)
    unassigned = list(range(n))
    for _ in range(n):
        open_clusters = np.nonzero(counts < capacity)[0]
        sub = dist_to_anchor[np.ix_(unassigned, open_clusters)]
        worst = sub.max(axis=1)
        pick = int(np.argmin(worst))  # np.argmin takes the first (lowest index) on ties
        loc = unassigned[pick]
        labels[loc] = int(open_clusters[np.argmin(sub[pick])])
        counts[labels[loc]] += 1
        unassigned.pop(pick)
    return labels


class ImClusterMethod:
    """Equal-cluster t-statistic with student-t critical values."""

    def __init__(self, design: SpatialDesign, alpha: float, q: int = 4):
        self.q = q
        self.labels = cluster_assign(design, q)
        counts = np.bincount(self.labels, minlength=q)
        self._c = np.zeros((design.n, q))
        self._c[np.arange(design.n), self.labels] = 1.0 / counts[self.labels]
        self.cv = float(stats.t.ppf(1.0 - alpha / 2.0, q - 1))
        self.info = {"q": q, "cv": self.cv}

    def evaluate(self, y: Array, mu0: float):
        means = np.atleast_2d(y) @ self._c  # reps x q
        center = means.mean(axis=1)
        s = means.std(axis=1, ddof=1)
        ok = s > 0
        s = np.where(ok, s, np.nan)
        t = math.sqrt(self.q) * (center - mu0) / s
        reject = np.abs(t) > self.cv
        length = 2.0 * self.cv * s / math.sqrt(self.q)
        return reject, length, ~ok


def _fourier_frequencies(d: int, q: int) -> list[tuple[int, ...]]:
    k_max = 1
    while (k_max + 1) ** d - 1 < q:
        k_max += 1
    freqs = [k for k in np.ndindex(*([k_max + 1] * d)) if any(k)]
    freqs.sort(key=lambda k: (sum(v * v for v in k), k))
    return freqs[:q]


class SunKimMethod(_TStatMethod):
    """Low-frequency Fourier projections orthogonalized on the sample locations."""

    def __init__(self, design: SpatialDesign, alpha: float, q: int = 8):
        coords = design.coords
        span = coords.max(axis=0) - coords.min(axis=0)
        span[span == 0] = 1.0
        s = (coords - coords.min(axis=0)) / span
        cols = [np.prod(np.cos(np.pi * np.asarray(k) * s), axis=1) for k in _fourier_frequencies(design.dim, q)]
        raw = np.column_stack([np.ones(design.n)] + cols)
        qmat, rmat = np.linalg.qr(raw)
        if np.abs(np.diag(rmat)).min() < 1e-10 * abs(rmat[0, 0]):
            raise NumericError("Fourier basis is rank deficient on this design")
        self.q = q
        self._w = qmat[:, 1 : q + 1] * math.sqrt(design.n / q)
        self.cv = float(stats.t.ppf(1.0 - alpha / 2.0, q))
        self.info = {"q": q, "cv": self.cv}


_METHODS = {
    "scpc": ScpcMethod,
    "bartlett-oracle": BartlettOracleMethod,
    "kvb": KvbMethod,
    "im-cluster": ImClusterMethod,
    "sunkim": SunKimMethod,
}


def prepare_method(
    method: str,
    design: SpatialDesign,
    alpha: float,
    params: dict | None = None,
    truth_sigma: Array | None = None,
):
    params = dict(params or {})
    if method == "scpc":
        return ScpcMethod(design, alpha, params)
    if method == "bartlett-oracle":
        sigma = params.pop("truth_sigma", truth_sigma)
        if sigma is None:
            raise InputError("bartlett-oracle needs the declared truth covariance")
        return BartlettOracleMethod(design, alpha, sigma, **params)
    if method == "kvb":
        return KvbMethod(design, alpha)
    if method == "im-cluster":
        return ImClusterMethod(design, alpha, q=params.get("q", 4))
    if method == "sunkim":
        return SunKimMethod(design, alpha, q=params.get("q", 8))
    raise InputError(f"unknown method {method!r}; choose from {sorted(_METHODS)}")


def competitor_test(
    method: str,
    y: Array,
    design: SpatialDesign,
    params: dict | None = None,
    alpha: float = 0.05,
    mu0: float = 0.0,
) -> tuple[bool, float]:
    """(reject, interval length) for one outcome vector under one method."""
    m = prepare_method(method, design, alpha, params)
    reject, length, bad = m.evaluate(np.asarray(y, float)[None, :], mu0)
    if bad[0]:
        raise NumericError("variance estimate degenerate for this outcome vector")
    return bool(reject[0]), float(length[0])


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------


def log_linear_profiles(design: SpatialDesign, ratio: float = 3.0):
    """The four heteroskedasticity profiles: log h linear over each axis, both directions."""
    coords = design.coords
    out = []
    for axis in range(min(design.dim, 2)):
        x = coords[:, axis]
        span = x.max() - x.min()
        t = (x - x.min()) / (span if span > 0 else 1.0)
        for direction, tt in (("up", t), ("down", 1.0 - t)):
            out.append((f"axis{axis}-{direction}", np.exp(np.log(ratio) * tt)))
    return out


@dataclass
class SimulationConfig:
    """One simulation experiment: design, truth, method, and scenario modifiers."""

    design: DesignSpec | SpatialDesign
    method: str = "scpc"
    method_params: dict = field(default_factory=dict)
    truth_family: str = "exponential"
    truth_c: float | None = None
    truth_rho: float | None = None  # 0.0 means Sigma = I
    alpha: float = 0.05
    replications: int = 1000
    seed: int = DEFAULT_SEED
    mu_true: float = 0.0
    heteroskedasticity: Callable[[Array], Array] | Array | None = None
    location_error: float | str | None = None  # "paper" -> 0.0375 x enclosing square
    store_records: bool = False


@dataclass(frozen=True)
class SimulationReport:
    method: str
    replications: int
    rejection_rate: float
    mc_se: float
    mean_length: float
    n_errors: int
    method_info: dict
    records: list | None = None

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "replications": self.replications,
            "rejection_rate": self.rejection_rate,
            "mc_se": self.mc_se,
            "mean_length": self.mean_length,
            "n_errors": self.n_errors,
            "method_info": self.method_info,
        }


def _resolve_truth_sigma(config: SimulationConfig, design: SpatialDesign) -> Array:
    if config.truth_rho is not None and config.truth_c is not None:
        raise InputError("set either truth_c or truth_rho, not both")
    if config.truth_rho is not None:
        if config.truth_rho == 0.0:
            return np.eye(design.n)
        c = calibrate_c0(design, config.truth_family, config.truth_rho)
    elif config.truth_c is not None:
        c = config.truth_c
    else:
        raise InputError("the truth needs truth_c or truth_rho")
    return covariance_matrix(CovarianceKernel(config.truth_family, c), design)


def run_experiment(config: SimulationConfig) -> SimulationReport:
    """Size/length Monte Carlo for one method under one truth.

    Per replication: draw the Gaussian field under the truth covariance,
    apply the heteroskedasticity multiplier if configured, and evaluate the
    method, which sees the (optionally measurement-error-perturbed)
    locations.  Location errors are drawn once per experiment: they model a
    mismeasured location file, and the method's critical value is solved on
    what it sees.  Method-level degeneracies are counted, not fatal.
    """
    if config.replications < 1:
        raise InputError("replications must be at least 1")
    design = config.design if isinstance(config.design, SpatialDesign) else sample_design(config.design)
    truth_sigma = _resolve_truth_sigma(config, design)

    h = config.heteroskedasticity
    if callable(h):
        h = np.asarray(h(design.coords), dtype=float)
    elif h is not None:
        h = np.asarray(h, dtype=float)
        if h.shape != (design.n,):
            raise InputError("heteroskedasticity vector must have length n")

    method_design = design
    if config.location_error is not None:
        delta = (
            measurement_error_halfwidth(design)
            if config.location_error == "paper"
            else float(config.location_error)
        )
        loc_seed = int(
            np.random.SeedSequence(config.seed, spawn_key=(_LOCATION_STREAM,)).generate_state(1)[0]
        )
        method_design = perturb_locations(design, delta, seed=loc_seed)

    method_obj = prepare_method(
        config.method, method_design, config.alpha, config.method_params, truth_sigma=truth_sigma
    )

    chol = _jittered_cholesky(truth_sigma)
    z = _field_draws(design.n, config.replications, config.seed)
    u = z @ chol.T
    if h is not None:
        u *= h
    y = config.mu_true + u

    reject, length, bad = method_obj.evaluate(y, config.mu_true)
    ok = ~bad
    n_ok = int(ok.sum())
    if n_ok == 0:
        raise NumericError("every replication produced a degenerate variance estimate")
    rate = float(reject[ok].mean())
    mean_length = math.fsum(length[ok].tolist()) / n_ok
    report = SimulationReport(
        method=config.method,
        replications=config.replications,
        rejection_rate=rate,
        mc_se=math.sqrt(rate * (1.0 - rate) / n_ok),
        mean_length=mean_length,
        n_errors=int(bad.sum()),
        method_info=getattr(method_obj, "info", {}),
        records=(
            [
                {"reject": bool(r), "length": float(l)}
                for r, l in zip(reject[ok], length[ok])
            ]
            if config.store_records
            else None
        ),
    )
    return report


def heteroskedasticity_sweep(config: SimulationConfig, ratio: float = 3.0) -> dict:
    """Run the four log-linear profiles and report the largest rejection rate."""
    design = config.design if isinstance(config.design, SpatialDesign) else sample_design(config.design)
    reports = {}
    for name, h in log_linear_profiles(design, ratio):
        cfg = SimulationConfig(
            design=design,
            method=config.method,
            method_params=config.method_params,
            truth_family=config.truth_family,
            truth_c=config.truth_c,
            truth_rho=config.truth_rho,
            alpha=config.alpha,
            replications=config.replications,
            seed=config.seed,
            mu_true=config.mu_true,
            heteroskedasticity=h,
            location_error=config.location_error,
        )
        reports[name] = run_experiment(cfg)
    worst = max(reports, key=lambda k: reports[k].rejection_rate)
    return {
        "max_rejection_rate": reports[worst].rejection_rate,
        "worst_profile": worst,
        "profiles": {k: r.to_dict() for k, r in reports.items()},
    }
