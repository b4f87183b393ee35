"""Keypoint detectors: voxel-grid uniform sampling and Harris3D.

Uniform sampling partitions space into an axis-aligned voxel grid anchored
at the cloud's minimum corner and emits one synthesized centroid per
occupied voxel, so it is deterministic for a given cloud but not
translation-invariant. Harris3D scores each point from the scatter matrix
of neighbor normals and keeps local response maxima.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .cloud import PointCloud, build_index
from .errors import DataError

__all__ = ["KeypointSet", "HarrisConfig", "uniform_sampling", "harris3d"]


@dataclass
class KeypointSet:
    """Detector output: keypoint coordinates plus provenance.

    `source_indices` is None for synthesized keypoints (uniform-sampling
    centroids); Harris3D keypoints carry their index in the source cloud.
    Colors are float64 since centroids average the channels.
    """

    points: np.ndarray
    detector: str
    params: dict = field(default_factory=dict)
    colors: Optional[np.ndarray] = None
    source_indices: Optional[np.ndarray] = None
    responses: Optional[np.ndarray] = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)

    def __len__(self) -> int:
        return len(self.points)


@dataclass
class HarrisConfig:
    """Harris3D parameters; radii in meters, threshold relative to the
    per-cloud maximum response."""

    support_radius: float = 0.05
    response_constant: float = 0.04
    threshold: float = 0.01
    nms_radius: Optional[float] = None  # defaults to support_radius

    def __post_init__(self):
        if self.support_radius <= 0:
            raise DataError(f"support_radius must be > 0, got {self.support_radius}")
        if self.nms_radius is None:
            self.nms_radius = self.support_radius
        if self.nms_radius <= 0:
            raise DataError(f"nms_radius must be > 0, got {self.nms_radius}")
        if self.threshold < 0:
            raise DataError(f"threshold must be >= 0, got {self.threshold}")


def uniform_sampling(cloud: PointCloud, radius: float = 0.03) -> KeypointSet:
    """One keypoint per occupied voxel of edge `radius`: the mean of its
    points, with per-channel mean color when the cloud carries color.

    Keypoints are ordered by voxel grid coordinate, so the output is
    reproducible for a given cloud.
    """
    if radius <= 0:
        raise DataError(f"radius must be > 0, got {radius}")
    if len(cloud) == 0:
        raise DataError("cannot sample an empty cloud")

    origin = cloud.points.min(axis=0)
    cells = np.floor((cloud.points - origin) / radius).astype(np.int64)
    # Unique voxel keys in lexicographic (ix, iy, iz) order.
    keys, inverse = np.unique(cells, axis=0, return_inverse=True)
    n_voxels = len(keys)

    counts = np.bincount(inverse, minlength=n_voxels).astype(np.float64)
    centroids = np.zeros((n_voxels, 3))
    for d in range(3):
        centroids[:, d] = np.bincount(inverse, weights=cloud.points[:, d], minlength=n_voxels) / counts

    colors = None
    if cloud.has_colors:
        colors = np.zeros((n_voxels, 3))
        cf = cloud.colors.astype(np.float64)
        for d in range(3):
            colors[:, d] = np.bincount(inverse, weights=cf[:, d], minlength=n_voxels) / counts

    return KeypointSet(
        points=centroids,
        detector="uniform_sampling",
        params={"radius": radius},
        colors=colors,
    )


def _harris_responses(cloud: PointCloud, index, config: HarrisConfig) -> np.ndarray:
    """Scatter-matrix response per point; NaN where no response is defined.

    The response uses the uncentered, unnormalized scatter of neighbor
    normals M = sum(n n^T): r = det(M) - k * trace(M)^2. A single plane
    gives rank-1 M and hence r <= 0; only neighborhoods whose normals span
    three directions (corners) produce positive responses.
    """
    n = len(cloud)
    responses = np.full(n, np.nan)
    valid = cloud.normal_valid
    neighborhoods = index.radius_bulk(cloud.points, config.support_radius)
    k = config.response_constant
    for i in range(n):
        if not valid[i]:
            continue
        nbrs = neighborhoods[i]
        nbrs = nbrs[valid[nbrs]]
        if len(nbrs) == 0:
            continue
        nn = cloud.normals[nbrs]
        m = nn.T @ nn
        trace = m[0, 0] + m[1, 1] + m[2, 2]
        det = np.linalg.det(m)
        responses[i] = det - k * trace * trace
    return responses


def harris3d(cloud: PointCloud, config: Optional[HarrisConfig] = None) -> KeypointSet:
    """Select corner-like points by Harris response over neighbor normals.

    Points scoring below threshold * max_response (or not strictly above
    zero) are discarded; non-maximum suppression then keeps only points
    whose response is strictly maximal within nms_radius, response ties
    resolving to the lower source index. Output is sorted by decreasing
    response.
    """
    if config is None:
        config = HarrisConfig()
    if not cloud.has_normals:
        raise DataError("harris3d requires a cloud with normals; run estimate_normals first")

    index = build_index(cloud)
    responses = _harris_responses(cloud, index, config)

    scored = np.isfinite(responses)
    positive = scored & (responses > 0.0)
    if not positive.any():
        return KeypointSet(
            points=np.zeros((0, 3)),
            detector="harris3d",
            params={"support_radius": config.support_radius, "threshold": config.threshold,
                    "response_constant": config.response_constant, "nms_radius": config.nms_radius},
            colors=np.zeros((0, 3)) if cloud.has_colors else None,
            source_indices=np.zeros(0, dtype=np.intp),
            responses=np.zeros(0),
        )

    max_response = responses[positive].max()
    candidates = np.flatnonzero(positive & (responses >= config.threshold * max_response))

    # Local-maximum filtering: a candidate survives only if no scored point
    # within nms_radius beats it (equal responses lose to a lower index).
    keep = []
    nms_neighborhoods = index.radius_bulk(cloud.points[candidates], config.nms_radius)
    for ci, i in enumerate(candidates):
        nbrs = nms_neighborhoods[ci]
        nbrs = nbrs[(nbrs != i) & scored[nbrs]]
        r = responses[i]
        beaten = (responses[nbrs] > r) | ((responses[nbrs] == r) & (nbrs < i))
        if not beaten.any():
            keep.append(i)

    keep = np.asarray(keep, dtype=np.intp)
    order = np.lexsort((keep, -responses[keep]))
    keep = keep[order]

    return KeypointSet(
        points=cloud.points[keep],
        detector="harris3d",
        params={"support_radius": config.support_radius, "threshold": config.threshold,
                "response_constant": config.response_constant, "nms_radius": config.nms_radius},
        colors=cloud.colors[keep].astype(np.float64) if cloud.has_colors else None,
        source_indices=keep,
        responses=responses[keep],
    )
