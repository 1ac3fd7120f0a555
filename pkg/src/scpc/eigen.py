"""Principal-component weights of the demeaned benchmark covariance.

The exact path eigendecomposes M Sigma(c0) M directly.  For very large n the
subset (Nystrom) path approximates the same leading eigenspace from one or
more random location subsets, extends the subset eigenvectors to all
locations through the kernel, and merges the extensions with a sample PCA.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray
from scipy.spatial.distance import cdist

from .covariance import FAMILIES, CovarianceKernel
from .errors import InputError, NumericError
from .geometry import SpatialDesign

Array = NDArray[np.float64]

#: entries smaller than this are skipped when fixing eigenvector signs
_SIGN_EPS = 1e-12


@dataclass(frozen=True)
class PCBasis:
    """Top-q principal component weights r_j with n^{-1} r_j' r_j = 1.

    ``r`` holds the weights as columns, in descending eigenvalue order, each
    orthogonal to the constant vector.  ``w0(q)`` assembles the (q+1)-column
    matrix [1, r_1/sqrt(q), ..., r_q/sqrt(q)] used by the rejection engine.
    """

    r: Array
    eigenvalues: Array
    source: str = "exact"

    def __post_init__(self) -> None:
        self.r.setflags(write=False)
        self.eigenvalues.setflags(write=False)

    @property
    def n(self) -> int:
        return self.r.shape[0]

    @property
    def q(self) -> int:
        return self.r.shape[1]

    def truncated(self, q: int) -> "PCBasis":
        if not 1 <= q <= self.q:
            raise InputError(f"cannot truncate a q={self.q} basis to q={q}")
        return PCBasis(self.r[:, :q].copy(), self.eigenvalues[:q].copy(), self.source)

    def w0(self, q: int | None = None) -> Array:
        q = self.q if q is None else q
        if not 1 <= q <= self.q:
            raise InputError(f"q must lie in [1, {self.q}], got {q}")
        return np.column_stack([np.ones(self.n), self.r[:, :q] / np.sqrt(q)])


def _fix_signs(r: Array) -> Array:
    """Make the first non-negligible entry of each column positive (in place)."""
    for j in range(r.shape[1]):
        col = r[:, j]
        nz = np.nonzero(np.abs(col) > _SIGN_EPS)[0]
        if nz.size and col[nz[0]] < 0:
            col *= -1.0
    return r


def _demean(a: Array) -> Array:
    """M a M without forming the centering matrix."""
    row = a.mean(axis=1, keepdims=True)
    col = a.mean(axis=0, keepdims=True)
    return a - row - col + a.mean()


def pc_weights(sigma: Array, q: int) -> PCBasis:
    """Top-q eigenvectors of M sigma M, scaled so that n^{-1} r' r = 1.

    Eigenvectors are sign-normalized (first non-negligible entry positive);
    within a degenerate eigenvalue block any orthonormal rotation is a valid
    answer, so callers comparing bases should compare subspaces.
    """
    sigma = np.asarray(sigma, dtype=float)
    n = sigma.shape[0]
    if sigma.ndim != 2 or sigma.shape[1] != n:
        raise InputError("sigma must be square")
    if not np.allclose(sigma, sigma.T, atol=1e-10 * max(1.0, np.abs(sigma).max())):
        raise InputError("sigma must be symmetric")
    if not 1 <= q <= n - 1:
        raise InputError(f"q must lie in [1, n-1] = [1, {n - 1}], got {q}")
    try:
        evals, evecs = np.linalg.eigh(_demean(sigma))
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise NumericError(f"eigensolver failed: {exc}") from exc
    evals, evecs = evals[::-1], evecs[:, ::-1]
    top = evals[:q].copy()
    if top[-1] < -1e-10 * max(1.0, abs(top[0])):
        raise NumericError(f"demeaned covariance has negative leading eigenvalue {top[-1]:.3e}")
    r = _fix_signs(np.sqrt(n) * evecs[:, :q].copy())
    return PCBasis(r, np.maximum(top, 0.0), source="exact")


def nystrom_pc_weights(
    design: SpatialDesign,
    kernel: CovarianceKernel,
    q: int,
    subset_size: int,
    n_subsets: int = 3,
    seed: int = 0,
) -> PCBasis:
    """Approximate the exact basis from random location subsets.

    Each subset's demeaned kernel matrix is eigendecomposed, the eigenvectors
    are extended to every location through the kernel, and the per-subset
    spans are merged by a sample PCA of the stacked (orthonormalized)
    extensions -- effectively an average of the subset projectors.  The
    merged basis is then rotated to align with the mean eigenfunction
    estimates so its columns come out in eigenvalue order.  Runtime is
    O(n * subset_size * n_subsets) plus the subset eigensolves; with
    ``subset_size == n`` and one subset the result reproduces the exact
    eigenvectors.
    """
    n = design.n
    if not 1 <= q < subset_size:
        raise InputError(f"need q < subset_size, got q={q}, subset_size={subset_size}")
    if subset_size > n:
        raise InputError(f"subset_size must not exceed n={n}")
    if n_subsets < 1:
        raise InputError("n_subsets must be at least 1")
    profile = FAMILIES[kernel.family]
    blocks: list[Array] = []
    eigval_est = np.zeros(q)
    for k in range(n_subsets):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(k,)))
        idx = np.sort(rng.choice(n, size=subset_size, replace=False))
        sub = design.coords[idx]
        k_sub = profile(kernel.c * cdist(sub, sub))
        mu, v = np.linalg.eigh(_demean(k_sub))
        mu, v = mu[::-1][:q], v[:, ::-1][:, :q]
        if mu[-1] <= 1e-12 * max(1.0, mu[0]):
            raise NumericError(
                f"subset eigenvalue {q} is numerically zero; decrease q or enlarge the subset"
            )
        r_sub = np.sqrt(subset_size) * v
        k_cross = profile(kernel.c * cdist(design.coords, sub))
        k_cross -= k_sub.mean(axis=1)  # per-subset-point kernel mean
        block = k_cross @ r_sub  # columns span the extended eigenfunctions
        block -= block.mean(axis=0, keepdims=True)
        block *= np.sqrt(n) / np.linalg.norm(block, axis=0)
        if k > 0:  # sign-align against the first subset so averaging reinforces
            flips = np.sign(np.einsum("ij,ij->j", block, blocks[0]))
            flips[flips == 0] = 1.0
            block *= flips
        blocks.append(block)
        eigval_est += (n / subset_size) * mu
    stacked = np.concatenate([np.linalg.qr(b)[0] for b in blocks], axis=1)
    u, s, _ = np.linalg.svd(stacked, full_matrices=False)
    if s.size < q or s[q - 1] <= 1e-12 * max(1.0, s[0]):
        raise NumericError("stacked Nystrom evaluations are rank deficient; increase subsets")
    u = u[:, :q]
    # orthogonal Procrustes onto the mean extension restores eigenvalue order
    cross = u.T @ np.mean(blocks, axis=0)
    left, _, right = np.linalg.svd(cross)
    r = _fix_signs(np.sqrt(n) * (u @ (left @ right)))
    return PCBasis(r, eigval_est / n_subsets, source=f"nystrom({subset_size},{n_subsets})")


def principal_angles(a: Array, b: Array) -> Array:
    """Principal angles (radians) between the column spans of two matrices.

    Uses the sine-based formula alongside the cosine one, so angles near zero
    are resolved to full precision instead of the ~1e-8 arccos floor.
    """
    qa, _ = np.linalg.qr(a)
    qb, _ = np.linalg.qr(b)
    cross = qa.T @ qb
    cosines = np.sort(np.clip(np.linalg.svd(cross, compute_uv=False), 0.0, 1.0))
    sines = np.sort(np.linalg.svd(qb - qa @ cross, compute_uv=False))[::-1]
    k = min(cosines.size, sines.size)
    return np.arctan2(sines[:k], cosines[:k])
