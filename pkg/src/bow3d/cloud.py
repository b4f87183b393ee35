"""Point-cloud core: point/normal types, kd-tree search, surface normals.

A PointCloud stores its geometry as numpy arrays (one row per point) and is
immutable by convention after construction: every operation that would modify
a cloud returns a new one, so clouds and their spatial indices can be shared
freely across threads.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .errors import DataError

__all__ = [
    "Point3",
    "Normal3",
    "PointCloud",
    "SpatialIndex",
    "build_index",
    "knn_search",
    "radius_search",
    "estimate_normals",
]


@dataclass(frozen=True)
class Point3:
    """A single 3D point in meters with an optional (r, g, b) color."""

    x: float
    y: float
    z: float
    color: Optional[tuple[int, int, int]] = None

    def __post_init__(self):
        if not all(np.isfinite(v) for v in (self.x, self.y, self.z)):
            raise DataError(f"non-finite point coordinates: ({self.x}, {self.y}, {self.z})")
        if self.color is not None:
            if any(c < 0 or c > 255 for c in self.color):
                raise DataError(f"color channels out of [0, 255]: {self.color}")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=np.float64)


@dataclass(frozen=True)
class Normal3:
    """Unit surface normal plus the local-curvature estimate in [0, 1]."""

    nx: float
    ny: float
    nz: float
    curvature: float = 0.0

    def __post_init__(self):
        norm = float(np.sqrt(self.nx**2 + self.ny**2 + self.nz**2))
        if abs(norm - 1.0) > 1e-6:
            raise DataError(f"normal is not unit length: norm={norm}")

    def as_array(self) -> np.ndarray:
        return np.array([self.nx, self.ny, self.nz], dtype=np.float64)


def _as_points_array(points) -> np.ndarray:
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim == 1 and arr.size == 0:
        arr = arr.reshape(0, 3)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise DataError(f"points must be an (N, 3) array, got shape {arr.shape}")
    return arr


@dataclass
class PointCloud:
    """A collection of 3D points with optional per-point color and normals.

    Attributes:
        points: (N, 3) float64 coordinates in meters, all finite.
        colors: optional (N, 3) uint8 RGB values.
        normals: optional (N, 3) unit normals; rows with normal_valid False
            hold NaN.
        curvatures: optional (N,) curvature values paired with normals.
        normal_valid: optional (N,) bool mask; False marks points whose
            neighborhood was too small to estimate a normal.
        viewpoint: (3,) sensor origin used for normal sign disambiguation.
        label: optional room-category string.
        dropped_invalid: rows discarded by the loader for NaN/Inf coordinates.
    """

    points: np.ndarray
    colors: Optional[np.ndarray] = None
    normals: Optional[np.ndarray] = None
    curvatures: Optional[np.ndarray] = None
    normal_valid: Optional[np.ndarray] = None
    viewpoint: np.ndarray = field(default_factory=lambda: np.zeros(3))
    label: Optional[str] = None
    dropped_invalid: int = 0

    def __post_init__(self):
        self.points = _as_points_array(self.points)
        if not np.isfinite(self.points).all():
            raise DataError("point coordinates contain NaN/Inf; clean before constructing")
        n = len(self.points)
        if self.colors is not None:
            self.colors = np.asarray(self.colors)
            if self.colors.shape != (n, 3):
                raise DataError(f"colors shape {self.colors.shape} != ({n}, 3)")
            if self.colors.dtype != np.uint8:
                c = np.asarray(self.colors, dtype=np.float64)
                if c.min(initial=0) < 0 or c.max(initial=0) > 255:
                    raise DataError("color channels out of [0, 255]")
                self.colors = np.round(c).astype(np.uint8)
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=np.float64)
            if self.normals.shape != (n, 3):
                raise DataError(f"normals shape {self.normals.shape} != ({n}, 3)")
            if self.normal_valid is None:
                self.normal_valid = np.isfinite(self.normals).all(axis=1)
            else:
                self.normal_valid = np.asarray(self.normal_valid, dtype=bool)
            if self.curvatures is None:
                self.curvatures = np.zeros(n)
            else:
                self.curvatures = np.asarray(self.curvatures, dtype=np.float64)
        self.viewpoint = np.asarray(self.viewpoint, dtype=np.float64).reshape(3)

    def __len__(self) -> int:
        return len(self.points)

    def point(self, i: int) -> Point3:
        color = tuple(int(c) for c in self.colors[i]) if self.colors is not None else None
        x, y, z = self.points[i]
        return Point3(float(x), float(y), float(z), color)

    def normal(self, i: int) -> Optional[Normal3]:
        """The estimated normal at point i, or None if flagged invalid."""
        if self.normals is None or not self.normal_valid[i]:
            return None
        nx, ny, nz = self.normals[i]
        return Normal3(float(nx), float(ny), float(nz), float(self.curvatures[i]))

    @property
    def has_colors(self) -> bool:
        return self.colors is not None

    @property
    def has_normals(self) -> bool:
        return self.normals is not None

    def content_digest(self) -> str:
        """Stable hex digest of the cloud geometry and color payload."""
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.points).tobytes())
        if self.colors is not None:
            h.update(np.ascontiguousarray(self.colors).tobytes())
        return h.hexdigest()

    def with_normals(self, normals, curvatures, valid) -> "PointCloud":
        return PointCloud(
            points=self.points,
            colors=self.colors,
            normals=normals,
            curvatures=curvatures,
            normal_valid=valid,
            viewpoint=self.viewpoint,
            label=self.label,
            dropped_invalid=self.dropped_invalid,
        )


class SpatialIndex:
    """kd-tree over one cloud's points with deterministic result ordering.

    Results are sorted by (distance, source index): exact distance ties
    always resolve to the lower index, so searches are reproducible and can
    be checked against a brute-force scan.
    """

    def __init__(self, cloud: PointCloud):
        if len(cloud) == 0:
            raise DataError("cannot index an empty cloud")
        self._points = cloud.points
        self._tree = cKDTree(self._points)

    def __len__(self) -> int:
        return len(self._points)

    def _order(self, idx: np.ndarray, query: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        d = np.sqrt(((self._points[idx] - query) ** 2).sum(axis=1))
        order = np.lexsort((idx, d))
        return idx[order], d[order]

    def knn(self, query, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Indices and distances of the k nearest points (arrays)."""
        if k < 1:
            raise DataError(f"k must be >= 1, got {k}")
        query = np.asarray(query, dtype=np.float64).reshape(3)
        k_eff = min(k, len(self._points))
        d, _ = self._tree.query(query, k=k_eff)
        d_max = float(np.max(np.atleast_1d(d)))
        # Re-query by radius so that every tie candidate at the k-th distance
        # is present, then settle ties by source index.
        cand = self._tree.query_ball_point(query, d_max * (1.0 + 1e-12) + 1e-300)
        idx = np.asarray(sorted(cand), dtype=np.intp)
        idx, dist = self._order(idx, query)
        return idx[:k_eff], dist[:k_eff]

    def radius(self, query, radius: float) -> tuple[np.ndarray, np.ndarray]:
        """Indices and distances of all points within `radius` (arrays)."""
        if radius <= 0:
            raise DataError(f"radius must be > 0, got {radius}")
        query = np.asarray(query, dtype=np.float64).reshape(3)
        cand = self._tree.query_ball_point(query, radius * (1.0 + 1e-12))
        idx = np.asarray(sorted(cand), dtype=np.intp)
        if len(idx) == 0:
            return idx, np.zeros(0)
        idx, dist = self._order(idx, query)
        keep = dist <= radius
        return idx[keep], dist[keep]

    def radius_bulk(self, queries: np.ndarray, radius: float) -> list[np.ndarray]:
        """Unordered neighbor index lists for many queries (fast path)."""
        if radius <= 0:
            raise DataError(f"radius must be > 0, got {radius}")
        out = self._tree.query_ball_point(np.asarray(queries, dtype=np.float64), radius * (1.0 + 1e-12))
        return [np.asarray(lst, dtype=np.intp) for lst in out]


def build_index(cloud: PointCloud) -> SpatialIndex:
    """Build a kd-tree over the cloud. Raises DataError on an empty cloud."""
    return SpatialIndex(cloud)


def _query_array(query) -> np.ndarray:
    if isinstance(query, Point3):
        return query.as_array()
    return np.asarray(query, dtype=np.float64).reshape(3)


def knn_search(index: SpatialIndex, query, k: int) -> list[tuple[int, float]]:
    """The min(k, N) nearest points as (index, distance), nearest first."""
    idx, dist = index.knn(_query_array(query), k)
    return [(int(i), float(d)) for i, d in zip(idx, dist)]


def radius_search(index: SpatialIndex, query, radius: float) -> list[tuple[int, float]]:
    """All points within `radius` of the query as (index, distance)."""
    idx, dist = index.radius(_query_array(query), radius)
    return [(int(i), float(d)) for i, d in zip(idx, dist)]


def estimate_normals(cloud: PointCloud, radius: float) -> PointCloud:
    """Estimate per-point surface normals from neighborhood PCA.

    The normal at p is the eigenvector of the neighborhood covariance with
    the smallest eigenvalue, sign-flipped so dot(n, viewpoint - p) >= 0;
    curvature is lambda0 / (lambda0 + lambda1 + lambda2). Points with fewer
    than 3 neighbors inside `radius` (the point itself counts) are flagged
    invalid rather than rejected.
    """
    if radius <= 0:
        raise DataError(f"radius must be > 0, got {radius}")
    n = len(cloud)
    if n == 0:
        raise DataError("cannot estimate normals on an empty cloud")
    index = build_index(cloud)
    neighborhoods = index.radius_bulk(cloud.points, radius)

    covs = np.zeros((n, 3, 3))
    valid = np.zeros(n, dtype=bool)
    for i, nbrs in enumerate(neighborhoods):
        if len(nbrs) < 3:
            continue
        pts = cloud.points[nbrs]
        centered = pts - pts.mean(axis=0)
        covs[i] = centered.T @ centered / len(nbrs)
        valid[i] = True

    normals = np.full((n, 3), np.nan)
    curvatures = np.zeros(n)
    if valid.any():
        evals, evecs = np.linalg.eigh(covs[valid])  # ascending eigenvalues
        evals = np.clip(evals, 0.0, None)
        sums = evals.sum(axis=1)
        degenerate = sums <= 0.0  # all neighbors coincide
        nrm = evecs[:, :, 0]
        with np.errstate(invalid="ignore", divide="ignore"):
            curv = np.where(degenerate, 0.0, evals[:, 0] / np.where(degenerate, 1.0, sums))
        # Orient toward the stored viewpoint.
        to_vp = cloud.viewpoint - cloud.points[valid]
        flip = (nrm * to_vp).sum(axis=1) < 0.0
        nrm = np.where(flip[:, None], -nrm, nrm)
        sub_valid = ~degenerate
        out_idx = np.flatnonzero(valid)
        normals[out_idx[sub_valid]] = nrm[sub_valid]
        curvatures[out_idx[sub_valid]] = curv[sub_valid]
        valid = np.zeros(n, dtype=bool)
        valid[out_idx[sub_valid]] = True

    return cloud.with_normals(normals, curvatures, valid)
