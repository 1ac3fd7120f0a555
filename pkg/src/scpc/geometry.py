"""Spatial designs: location containers, distances, and synthetic samplers."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numpy.typing import NDArray
from scipy.spatial.distance import cdist

from .errors import InputError, SamplingError

Array = NDArray[np.float64]

#: proposals allowed per accepted point before rejection sampling gives up
REJECTION_CAP = 1_000_000


class SpatialDesign:
    """n locations in R^d with lazily computed pairwise Euclidean distances.

    Instances are immutable: the coordinate array is copied and write-locked,
    so designs can be shared freely across threads.
    """

    def __init__(self, coords: Array) -> None:
        coords = np.atleast_2d(np.asarray(coords, dtype=float))
        if coords.ndim != 2:
            raise InputError(f"coords must be 2-d (n, d), got shape {coords.shape}")
        if coords.shape[0] < 2:
            raise InputError("a design needs at least 2 locations")
        if coords.shape[1] < 1:
            raise InputError("a design needs at least 1 coordinate dimension")
        if not np.all(np.isfinite(coords)):
            raise InputError("coordinates must be finite")
        self._coords = coords.copy()
        self._coords.setflags(write=False)
        self._dist: Array | None = None

    @property
    def coords(self) -> Array:
        return self._coords

    @property
    def n(self) -> int:
        return self._coords.shape[0]

    @property
    def dim(self) -> int:
        return self._coords.shape[1]

    @property
    def dist(self) -> Array:
        if self._dist is None:
            self._dist = pairwise_distances(self)
        return self._dist

    def scaled(self, a: float) -> "SpatialDesign":
        """Design with all coordinates multiplied by ``a > 0``."""
        if a <= 0:
            raise InputError("scale factor must be positive")
        return SpatialDesign(a * self._coords)

    def __repr__(self) -> str:  # pragma: no cover
        return f"SpatialDesign(n={self.n}, d={self.dim})"


def pairwise_distances(design: SpatialDesign | Array) -> Array:
    """Symmetric n x n Euclidean distance matrix with an exact zero diagonal."""
    coords = design.coords if isinstance(design, SpatialDesign) else np.asarray(design, float)
    if not np.all(np.isfinite(coords)):
        raise InputError("coordinates must be finite")
    d = cdist(coords, coords)
    d = 0.5 * (d + d.T)
    np.fill_diagonal(d, 0.0)
    d.setflags(write=False)
    return d


@dataclass(frozen=True)
class DesignSpec:
    """Recipe for a synthetic spatial design.

    kind:
        ``regular-1d``            midpoint grid s_l = (l - 1/2)/n on [0, 1]
        ``uniform-rectangle``     i.i.d. uniform draws on an axis-aligned box
        ``uniform-polygon``       i.i.d. uniform draws on a 2-d polygon
        ``density-weighted-polygon``  i.i.d. draws from density g on a polygon
    """

    kind: str
    n: int
    bounds: Sequence[Sequence[float]] | None = None   # (d, 2) for rectangles
    vertices: Sequence[Sequence[float]] | None = None  # (m, 2) for polygons
    density: Callable[[Array], Array] | None = None
    density_sup: float | None = None
    seed: int = 0

    _KINDS = ("regular-1d", "uniform-rectangle", "uniform-polygon", "density-weighted-polygon")


def sample_design(spec: DesignSpec) -> SpatialDesign:
    """Draw a design per ``spec``; deterministic for a fixed seed."""
    if spec.kind not in DesignSpec._KINDS:
        raise InputError(f"unknown design kind {spec.kind!r}; choose from {DesignSpec._KINDS}")
    if spec.n < 2:
        raise InputError("n must be at least 2")

    if spec.kind == "regular-1d":
        s = (np.arange(1, spec.n + 1) - 0.5) / spec.n
        return SpatialDesign(s[:, None])

    rng = np.random.default_rng(np.random.SeedSequence(spec.seed))
    if spec.kind == "uniform-rectangle":
        bounds = np.asarray(spec.bounds if spec.bounds is not None else [[0.0, 1.0], [0.0, 1.0]], float)
        if bounds.ndim != 2 or bounds.shape[1] != 2 or np.any(bounds[:, 1] <= bounds[:, 0]):
            raise InputError("bounds must be a (d, 2) array with lo < hi per dimension")
        u = rng.random((spec.n, bounds.shape[0]))
        return SpatialDesign(bounds[:, 0] + u * (bounds[:, 1] - bounds[:, 0]))

    # polygon kinds
    verts = np.asarray(spec.vertices if spec.vertices is not None else [[0, 0], [1, 0], [1, 1], [0, 1]], float)
    if verts.ndim != 2 or verts.shape[1] != 2 or verts.shape[0] < 3:
        raise InputError("vertices must be an (m, 2) array with m >= 3")
    density = spec.density if spec.kind == "density-weighted-polygon" else None
    return SpatialDesign(_rejection_sample_polygon(spec.n, verts, density, spec.density_sup, rng))


def _points_in_polygon(pts: Array, verts: Array) -> NDArray[np.bool_]:
    """Vectorized even-odd (ray casting) point-in-polygon test."""
    x, y = pts[:, 0], pts[:, 1]
    inside = np.zeros(len(pts), dtype=bool)
    x1, y1 = verts[-1]
    for x2, y2 in verts:
        crosses = (y1 > y) != (y2 > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (x < xint)
        x1, y1 = x2, y2
    return inside


def _rejection_sample_polygon(n, verts, density, density_sup, rng) -> Array:
    lo, hi = verts.min(axis=0), verts.max(axis=0)
    if density is not None and density_sup is None:
        # probe-based fallback; exact caller-supplied sup is preferred
        probe = lo + rng.random((65536, 2)) * (hi - lo)
        probe = probe[_points_in_polygon(probe, verts)]
        density_sup = 1.2 * float(np.max(density(probe)))
    accepted: list[Array] = []
    got = 0
    proposals = 0
    batch = max(4 * n, 1024)
    while got < n:
        if proposals > REJECTION_CAP * max(1, got + 1):
            rate = got / proposals
            raise SamplingError(
                f"rejection sampling exceeded {REJECTION_CAP} proposals per accepted point "
                f"(acceptance rate {rate:.2e}); check the density and region"
            )
        pts = lo + rng.random((batch, 2)) * (hi - lo)
        keep = _points_in_polygon(pts, verts)
        if density is not None:
            g = np.asarray(density(pts), dtype=float)
            if np.any(g[keep] < 0):
                raise InputError("density must be nonnegative on the region")
            if np.any(g[keep] > density_sup * (1 + 1e-12)):
                raise InputError("density exceeds the supplied density_sup on the region")
            keep &= rng.random(batch) * density_sup < g
        proposals += batch
        sel = pts[keep]
        accepted.append(sel)
        got += len(sel)
    return np.concatenate(accepted)[:n]


def enclosing_square_side(design: SpatialDesign) -> float:
    """Side length of the smallest axis-aligned square covering the design."""
    rng_per_dim = design.coords.max(axis=0) - design.coords.min(axis=0)
    return float(rng_per_dim.max())


def measurement_error_halfwidth(design: SpatialDesign, level: float = 0.0375) -> float:
    """Half-width of uniform location errors, ``level`` times the enclosing square side."""
    return level * enclosing_square_side(design)


def perturb_locations(design: SpatialDesign, delta: float, seed: int = 0) -> SpatialDesign:
    """Add i.i.d. uniform(-delta, delta) noise to every coordinate.

    The input design is left untouched; ``delta = 0`` returns an identical copy.
    """
    if delta < 0:
        raise InputError("delta must be nonnegative")
    if delta == 0:
        return SpatialDesign(design.coords)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    e = rng.uniform(-delta, delta, size=design.coords.shape)
    return SpatialDesign(design.coords + e)
