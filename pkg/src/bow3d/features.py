"""Local 3D descriptors at keypoints, plus the ESF global baseline.

All descriptors have a fixed dimension per kind regardless of cloud size:

    pfh 125, pfhrgb 250, fpfh 33, shot 352, cshot 1344, esf 640

Keypoints that cannot produce a descriptor (too few usable neighbors,
degenerate reference frame) are dropped and counted, never silently kept.
Synthesized keypoints (voxel centroids) are anchored to their nearest
valid-normal cloud point wherever a keypoint normal or simplified
histogram at the keypoint itself is required.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .cloud import PointCloud, build_index
from .errors import DataError
from .keypoints import KeypointSet

__all__ = [
    "FEATURE_DIMS",
    "PairFeature",
    "FeatureVector",
    "FeatureSet",
    "darboux_pair",
    "compute_pfh",
    "compute_pfhrgb",
    "compute_fpfh",
    "compute_shot",
    "compute_cshot",
    "compute_esf",
    "save_feature_set",
    "load_feature_set",
]

FEATURE_DIMS = {
    "pfh": 125,
    "pfhrgb": 250,
    "fpfh": 33,
    "shot": 352,
    "cshot": 1344,
    "esf": 640,
}

DEFAULT_FEATURE_RADII = {
    "pfh": 0.06,
    "pfhrgb": 0.06,
    "fpfh": 0.06,
    "shot": 0.10,
    "cshot": 0.10,
}


@dataclass(frozen=True)
class PairFeature:
    """The four-value geometric relationship between two oriented points:
    two direction cosines, a signed angle, and the point distance."""

    alpha: float
    phi: float
    theta: float
    d: float


@dataclass
class FeatureVector:
    """One descriptor: a fixed-length vector of non-negative reals."""

    values: np.ndarray
    kind: str

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        expected = FEATURE_DIMS.get(self.kind)
        if expected is not None and len(self.values) != expected:
            raise DataError(f"{self.kind} descriptor must have {expected} values, got {len(self.values)}")

    @property
    def dimension(self) -> int:
        return len(self.values)


@dataclass
class FeatureSet:
    """Descriptors of one kind extracted from one cloud."""

    vectors: np.ndarray  # (count, dim) float64
    kind: str
    source: str = ""
    kept: int = 0
    dropped: int = 0

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2:
            raise DataError(f"vectors must be 2-D, got shape {self.vectors.shape}")

    def __len__(self) -> int:
        return len(self.vectors)

    @property
    def dimension(self) -> int:
        return self.vectors.shape[1]


# ---------------------------------------------------------------------------
# Pair features


def _lex_greater(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise lexicographic a > b for (M, 3) arrays."""
    gt = np.zeros(len(a), dtype=bool)
    undecided = np.ones(len(a), dtype=bool)
    for c in range(3):
        col_gt = a[:, c] > b[:, c]
        col_ne = a[:, c] != b[:, c]
        gt |= undecided & col_gt
        undecided &= ~col_ne
    return gt


def _pair_features_arrays(ps, ns, pt, nt):
    """Vectorized pair features with source/target disambiguation.

    The source is the point whose normal makes the smaller angle with the
    connecting line (larger |cos|); exact ties pick the lexicographically
    smaller point, so the result does not depend on argument order.
    Returns (alpha, phi, theta, d, swapped).
    """
    diff = pt - ps
    d = np.sqrt((diff**2).sum(axis=1))
    if np.any(d == 0):
        raise DataError("coincident points in pair feature")
    line = diff / d[:, None]
    c1 = (ns * line).sum(axis=1)
    c2 = (nt * line).sum(axis=1)
    swap = np.abs(c2) > np.abs(c1)
    tie = np.abs(c2) == np.abs(c1)
    if tie.any():
        swap[tie] = _lex_greater(ps[tie], pt[tie])

    s_n = np.where(swap[:, None], nt, ns)
    t_n = np.where(swap[:, None], ns, nt)
    line = np.where(swap[:, None], -line, line)

    u = s_n
    v = np.cross(line, u)
    w = np.cross(u, v)
    alpha = (v * t_n).sum(axis=1)
    phi = (u * line).sum(axis=1)
    theta = np.arctan2((w * t_n).sum(axis=1), (u * t_n).sum(axis=1))
    return alpha, phi, theta, d, swap


def darboux_pair(p_s, n_s, p_t, n_t) -> PairFeature:
    """Pair feature for two oriented points; normals must be unit length."""
    p_s = np.asarray(p_s, dtype=np.float64).reshape(1, 3)
    p_t = np.asarray(p_t, dtype=np.float64).reshape(1, 3)
    n_s = np.asarray(n_s, dtype=np.float64).reshape(1, 3)
    n_t = np.asarray(n_t, dtype=np.float64).reshape(1, 3)
    for n in (n_s, n_t):
        if abs(np.linalg.norm(n) - 1.0) > 1e-6:
            raise DataError("pair feature requires unit normals")
    if np.array_equal(p_s, p_t):
        raise DataError("coincident points in pair feature")
    alpha, phi, theta, d, _ = _pair_features_arrays(p_s, n_s, p_t, n_t)
    return PairFeature(float(alpha[0]), float(phi[0]), float(theta[0]), float(d[0]))


def _bin_index(values: np.ndarray, lo: float, hi: float, nbins: int) -> np.ndarray:
    idx = np.floor((values - lo) / (hi - lo) * nbins).astype(np.intp)
    return np.clip(idx, 0, nbins - 1)


def _angle_joint_bins(alpha, phi, theta, nbins: int) -> np.ndarray:
    """Joint histogram index laid out as (alpha * B + phi) * B + theta."""
    ba = _bin_index(alpha, -1.0, 1.0, nbins)
    bp = _bin_index(phi, -1.0, 1.0, nbins)
    bt = _bin_index(theta, -np.pi, np.pi, nbins)
    return (ba * nbins + bp) * nbins + bt


# ---------------------------------------------------------------------------
# Shared keypoint plumbing


def _keypoint_array(keypoints) -> np.ndarray:
    if isinstance(keypoints, KeypointSet):
        return keypoints.points
    return np.asarray(keypoints, dtype=np.float64).reshape(-1, 3)


def _keypoint_colors(keypoints, cloud: PointCloud, anchors: np.ndarray) -> np.ndarray:
    if isinstance(keypoints, KeypointSet) and keypoints.colors is not None:
        return np.asarray(keypoints.colors, dtype=np.float64)
    return cloud.colors[anchors].astype(np.float64)


def _require_normals(cloud: PointCloud, op: str):
    if not cloud.has_normals:
        raise DataError(f"{op} requires a cloud with normals; run estimate_normals first")


def _require_colors(cloud: PointCloud, op: str):
    if not cloud.has_colors:
        raise DataError(f"{op} requires a cloud with rgb color")


def _valid_point_tree(cloud: PointCloud):
    """kd-tree over the valid-normal points, with index mapping to the cloud."""
    valid_idx = np.flatnonzero(cloud.normal_valid)
    if len(valid_idx) == 0:
        return None, valid_idx
    return cKDTree(cloud.points[valid_idx]), valid_idx


def _anchor_indices(cloud: PointCloud, kp_pts: np.ndarray) -> np.ndarray:
    """Nearest valid-normal cloud point for each keypoint (-1 if none)."""
    tree, valid_idx = _valid_point_tree(cloud)
    if tree is None:
        return np.full(len(kp_pts), -1, dtype=np.intp)
    _, pos = tree.query(kp_pts, k=1)
    return valid_idx[np.atleast_1d(pos)]


# ---------------------------------------------------------------------------
# PFH / PFH-RGB


def _pfh_histograms(cloud, keypoints, radius, bins_per_angle, with_color):
    _require_normals(cloud, "pfh")
    if with_color:
        _require_colors(cloud, "pfhrgb")
    if radius <= 0:
        raise DataError(f"radius must be > 0, got {radius}")
    kp_pts = _keypoint_array(keypoints)
    index = build_index(cloud)
    neighborhoods = index.radius_bulk(kp_pts, radius)
    b = bins_per_angle
    joint = b**3

    rows = []
    dropped = 0
    for nbrs in neighborhoods:
        nbrs = nbrs[cloud.normal_valid[nbrs]]
        if len(nbrs) < 2:
            dropped += 1
            continue
        nbrs = np.sort(nbrs)
        ii, jj = np.triu_indices(len(nbrs), k=1)
        pi, pj = nbrs[ii], nbrs[jj]
        sep = ((cloud.points[pi] - cloud.points[pj]) ** 2).sum(axis=1)
        ok = sep > 0.0
        if not ok.any():
            dropped += 1
            continue
        pi, pj = pi[ok], pj[ok]
        alpha, phi, theta, _, swap = _pair_features_arrays(
            cloud.points[pi], cloud.normals[pi], cloud.points[pj], cloud.normals[pj]
        )
        hist = np.bincount(_angle_joint_bins(alpha, phi, theta, b), minlength=joint).astype(np.float64)
        hist /= hist.sum()
        if not with_color:
            rows.append(hist)
            continue

        src = np.where(swap, pj, pi)
        tgt = np.where(swap, pi, pj)
        cs = cloud.colors[src].astype(np.float64)
        ct = cloud.colors[tgt].astype(np.float64)
        total = cs + ct
        ratios = np.where(total > 0, cs / np.where(total > 0, total, 1.0), 0.5)
        br, bg, bb = (_bin_index(ratios[:, c], 0.0, 1.0, b) for c in range(3))
        chist = np.bincount((br * b + bg) * b + bb, minlength=joint).astype(np.float64)
        chist /= chist.sum()
        rows.append(np.concatenate([hist, chist]))

    dim = joint * (2 if with_color else 1)
    vectors = np.vstack(rows) if rows else np.zeros((0, dim))
    return vectors, dropped


def compute_pfh(cloud: PointCloud, keypoints, radius: float = 0.06, bins_per_angle: int = 5) -> FeatureSet:
    """Joint histogram of pair features over every unordered neighbor pair
    within `radius` of each keypoint. Distance is not binned, so the joint
    histogram has bins_per_angle**3 cells, normalized to sum 1.
    """
    vectors, dropped = _pfh_histograms(cloud, keypoints, radius, bins_per_angle, with_color=False)
    return FeatureSet(vectors, kind="pfh" if bins_per_angle == 5 else f"pfh{bins_per_angle}",
                      kept=len(vectors), dropped=dropped)


def compute_pfhrgb(cloud: PointCloud, keypoints, radius: float = 0.06, bins_per_angle: int = 5) -> FeatureSet:
    """PFH followed by the analogous joint histogram over per-channel color
    ratios c_s / (c_s + c_t) (0.5 when both channels are zero); each half
    sums to 1."""
    vectors, dropped = _pfh_histograms(cloud, keypoints, radius, bins_per_angle, with_color=True)
    return FeatureSet(vectors, kind="pfhrgb" if bins_per_angle == 5 else f"pfhrgb{bins_per_angle}",
                      kept=len(vectors), dropped=dropped)


# ---------------------------------------------------------------------------
# FPFH


def _spfh(cloud, index, point_idx, radius, b, cache):
    """Simplified histogram at a cloud point: pair features against each
    valid-normal neighbor, three independently normalized angle blocks."""
    hit = cache.get(point_idx)
    if hit is not None:
        return hit
    nbrs, _ = index.radius(cloud.points[point_idx], radius)
    nbrs = nbrs[(nbrs != point_idx) & cloud.normal_valid[nbrs]]
    if len(nbrs) > 0:
        sep = ((cloud.points[nbrs] - cloud.points[point_idx]) ** 2).sum(axis=1)
        nbrs = nbrs[sep > 0.0]
    if len(nbrs) == 0:
        cache[point_idx] = None
        return None
    p = np.broadcast_to(cloud.points[point_idx], (len(nbrs), 3))
    n = np.broadcast_to(cloud.normals[point_idx], (len(nbrs), 3))
    alpha, phi, theta, _, _ = _pair_features_arrays(p, n, cloud.points[nbrs], cloud.normals[nbrs])
    hist = np.concatenate(
        [
            np.bincount(_bin_index(alpha, -1.0, 1.0, b), minlength=b),
            np.bincount(_bin_index(phi, -1.0, 1.0, b), minlength=b),
            np.bincount(_bin_index(theta, -np.pi, np.pi, b), minlength=b),
        ]
    ).astype(np.float64)
    hist /= len(alpha)  # each block sums to 1
    cache[point_idx] = hist
    return hist


def compute_fpfh(cloud: PointCloud, keypoints, radius: float = 0.06, bins_per_angle: int = 11) -> FeatureSet:
    """Fast variant: the keypoint's simplified histogram plus the
    distance-weighted mean of its neighbors' simplified histograms,

        fpfh(p) = spfh(p) + (1/k) * sum_i spfh(p_i) / dist(p, p_i),

    with each of the three angle blocks renormalized to sum 1. Keypoints
    are anchored to the nearest valid-normal cloud point.
    """
    _require_normals(cloud, "fpfh")
    if radius <= 0:
        raise DataError(f"radius must be > 0, got {radius}")
    kp_pts = _keypoint_array(keypoints)
    index = build_index(cloud)
    anchors = _anchor_indices(cloud, kp_pts)
    b = bins_per_angle
    cache: dict = {}

    rows = []
    dropped = 0
    for a in anchors:
        if a < 0:
            dropped += 1
            continue
        own = _spfh(cloud, index, int(a), radius, b, cache)
        if own is None:
            dropped += 1
            continue
        nbrs, dists = index.radius(cloud.points[a], radius)
        keep = (nbrs != a) & cloud.normal_valid[nbrs] & (dists > 0.0)
        nbrs, dists = nbrs[keep], dists[keep]
        combined = own.copy()
        weighted = np.zeros_like(own)
        k = 0
        for nb, dist in zip(nbrs, dists):
            h = _spfh(cloud, index, int(nb), radius, b, cache)
            if h is None:
                continue
            weighted += h / dist
            k += 1
        if k > 0:
            combined += weighted / k
        for block in range(3):
            seg = combined[block * b:(block + 1) * b]
            total = seg.sum()
            if total > 0:
                seg /= total
        rows.append(combined)

    vectors = np.vstack(rows) if rows else np.zeros((0, 3 * b))
    return FeatureSet(vectors, kind="fpfh" if b == 11 else f"fpfh{b}", kept=len(vectors), dropped=dropped)


# ---------------------------------------------------------------------------
# SHOT / Color-SHOT


def _shot_lrf(rel: np.ndarray, weights: np.ndarray, to_viewpoint: np.ndarray):
    """Local reference frame from the weighted scatter of displacements.

    Axis signs follow the majority of neighbor displacement projections;
    a z-axis tie is resolved toward the viewpoint. Returns None when the
    neighborhood is degenerate (collinear or empty scatter).
    """
    total = weights.sum()
    if total <= 0:
        return None
    m = (rel * weights[:, None]).T @ rel / total
    evals, evecs = np.linalg.eigh(m)
    if evals[2] <= 0 or evals[1] <= evals[2] * 1e-9:
        return None
    x_axis, z_axis = evecs[:, 2], evecs[:, 0]

    def majority_sign(axis, tie_toward=None):
        proj = rel @ axis
        pos, neg = int((proj > 0).sum()), int((proj < 0).sum())
        if pos > neg:
            return axis
        if neg > pos:
            return -axis
        if tie_toward is not None and axis @ tie_toward < 0:
            return -axis
        return axis

    x_axis = majority_sign(x_axis)
    z_axis = majority_sign(z_axis, tie_toward=to_viewpoint)
    y_axis = np.cross(z_axis, x_axis)
    return x_axis, y_axis, z_axis


def _shot_impl(cloud, keypoints, radius, cosine_bins, color_bins):
    _require_normals(cloud, "shot")
    with_color = color_bins is not None
    if with_color:
        _require_colors(cloud, "cshot")
    if radius <= 0:
        raise DataError(f"radius must be > 0, got {radius}")

    kp_pts = _keypoint_array(keypoints)
    index = build_index(cloud)
    anchors = _anchor_indices(cloud, kp_pts)
    neighborhoods = index.radius_bulk(kp_pts, radius)
    kp_colors = _keypoint_colors(keypoints, cloud, np.clip(anchors, 0, None)) if with_color else None

    shape_dim = 32 * cosine_bins
    color_dim = 32 * color_bins if with_color else 0
    rows = []
    dropped = 0
    for ki, nbrs in enumerate(neighborhoods):
        a = anchors[ki]
        nbrs = nbrs[cloud.normal_valid[nbrs]]
        if a < 0 or len(nbrs) == 0:
            dropped += 1
            continue
        rel_all = cloud.points[nbrs] - kp_pts[ki]
        d_all = np.sqrt((rel_all**2).sum(axis=1))
        lrf = _shot_lrf(rel_all, radius - d_all, cloud.viewpoint - kp_pts[ki])
        interior = d_all > 0.0
        if lrf is None or interior.sum() < 3:
            dropped += 1
            continue
        x_axis, y_axis, z_axis = lrf
        nbrs, rel, d = nbrs[interior], rel_all[interior], d_all[interior]

        az = np.arctan2(rel @ y_axis, rel @ x_axis)
        sector = (
            _bin_index(az, -np.pi, np.pi, 8) * 4
            + (rel @ z_axis >= 0.0).astype(np.intp) * 2
            + (d > radius / 2.0).astype(np.intp)
        )

        ref_normal = cloud.normals[a]
        cosines = np.clip(cloud.normals[nbrs] @ ref_normal, -1.0, 1.0)
        shape = np.bincount(
            sector * cosine_bins + _bin_index(cosines, -1.0, 1.0, cosine_bins),
            minlength=shape_dim,
        ).astype(np.float64)
        norm = np.linalg.norm(shape)
        shape /= norm

        if not with_color:
            rows.append(shape)
            continue
        diff = np.abs(cloud.colors[nbrs].astype(np.float64) - kp_colors[ki]).sum(axis=1) / 765.0
        color = np.bincount(
            sector * color_bins + _bin_index(diff, 0.0, 1.0, color_bins),
            minlength=color_dim,
        ).astype(np.float64)
        color /= np.linalg.norm(color)
        rows.append(np.concatenate([shape, color]))

    dim = shape_dim + color_dim
    vectors = np.vstack(rows) if rows else np.zeros((0, dim))
    return vectors, dropped


def compute_shot(cloud: PointCloud, keypoints, radius: float = 0.10, cosine_bins: int = 11) -> FeatureSet:
    """Sectorized histograms of the cosine between each neighbor normal and
    the keypoint normal: 8 azimuth x 2 elevation x 2 radial shells in a
    local reference frame, nearest-bin assignment, L2-normalized."""
    vectors, dropped = _shot_impl(cloud, keypoints, radius, cosine_bins, color_bins=None)
    return FeatureSet(vectors, kind="shot" if cosine_bins == 11 else f"shot{cosine_bins}",
                      kept=len(vectors), dropped=dropped)


def compute_cshot(cloud: PointCloud, keypoints, radius: float = 0.10) -> FeatureSet:
    """SHOT shape half plus per-sector 31-bin histograms of the normalized
    L1 color difference to the keypoint; each half is L2-normalized."""
    vectors, dropped = _shot_impl(cloud, keypoints, radius, cosine_bins=11, color_bins=31)
    return FeatureSet(vectors, kind="cshot", kept=len(vectors), dropped=dropped)


# ---------------------------------------------------------------------------
# ESF


def _trace_lines(starts, ends, occupancy, origin, voxel_size, steps):
    """Occupied-sample fraction along each segment, and interior in/out.

    Samples `steps` points per line including both endpoints; returns
    (fraction occupied, all interior occupied, no interior occupied).
    """
    t = np.linspace(0.0, 1.0, steps)
    pts = starts[:, None, :] + (ends - starts)[:, None, :] * t[None, :, None]
    cells = np.floor((pts - origin) / voxel_size).astype(np.int64)
    res = occupancy.shape[0]
    np.clip(cells, 0, res - 1, out=cells)
    occ = occupancy[cells[..., 0], cells[..., 1], cells[..., 2]]
    frac = occ.mean(axis=1)
    inner = occ[:, 1:-1]
    all_in = inner.all(axis=1)
    all_out = ~inner.any(axis=1)
    return frac, all_in, all_out


def compute_esf(cloud: PointCloud, samples: int = 20000, voxel_resolution: int = 64,
                seed: int = 0) -> FeatureVector:
    """Global shape descriptor from randomly sampled point triples.

    A voxel occupancy grid over the bounding box classifies each sampled
    line as lying in, out of, or across the occupied volume. Ten 64-bin
    histograms are concatenated: distances (in/out/mixed), the occupied
    fraction of each line, triangle-vertex angles (classified by the
    opposite edge), and square roots of triangle areas (all edges in /
    all out / mixed). Distances are normalized by the bounding-box
    diagonal, so the descriptor is scale-invariant; the RNG is seeded so
    it is reproducible.
    """
    n = len(cloud)
    if n < 3:
        raise DataError(f"esf needs at least 3 points, got {n}")
    pts = cloud.points
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    extent = hi - lo
    voxel_size = np.where(extent > 0, extent, 1.0) / voxel_resolution
    diagonal = float(np.linalg.norm(extent))
    if diagonal == 0.0:
        raise DataError("esf degenerate cloud: all points coincide")

    cells = np.floor((pts - lo) / voxel_size).astype(np.int64)
    np.clip(cells, 0, voxel_resolution - 1, out=cells)
    occupancy = np.zeros((voxel_resolution,) * 3, dtype=bool)
    occupancy[cells[:, 0], cells[:, 1], cells[:, 2]] = True

    rng = np.random.default_rng(seed)
    triples = rng.integers(0, n, size=(samples, 3))
    distinct = (
        (triples[:, 0] != triples[:, 1])
        & (triples[:, 0] != triples[:, 2])
        & (triples[:, 1] != triples[:, 2])
    )
    triples = triples[distinct]
    if len(triples) == 0:
        raise DataError("esf could not sample distinct point triples")
    a, b, c = pts[triples[:, 0]], pts[triples[:, 1]], pts[triples[:, 2]]

    nbins = 64
    hists = np.zeros((10, nbins))
    edges = [(a, b), (b, c), (a, c)]
    edge_class = np.zeros((3, len(triples)), dtype=np.int8)  # 0 in, 1 out, 2 mixed
    steps = voxel_resolution

    def bump(hist_idx, values, mask):
        if mask.any():
            hists[hist_idx] += np.bincount(
                _bin_index(values[mask], 0.0, 1.0, nbins), minlength=nbins
            )

    for e, (p, q) in enumerate(edges):
        frac, all_in, all_out = _trace_lines(p, q, occupancy, lo, voxel_size, steps)
        dist = np.linalg.norm(q - p, axis=1) / diagonal
        edge_class[e] = np.where(all_in, 0, np.where(all_out, 1, 2))
        bump(0, dist, edge_class[e] == 0)
        bump(1, dist, edge_class[e] == 1)
        bump(2, dist, edge_class[e] == 2)
        bump(3, frac, np.ones(len(frac), dtype=bool))

    # Angle at vertex a, classified by the opposite edge (b, c).
    v1, v2 = b - a, c - a
    n1 = np.linalg.norm(v1, axis=1)
    n2 = np.linalg.norm(v2, axis=1)
    ok = (n1 > 0) & (n2 > 0)
    cosang = np.clip((v1 * v2).sum(axis=1) / np.where(ok, n1 * n2, 1.0), -1.0, 1.0)
    angle = np.arccos(cosang) / np.pi
    opposite = edge_class[1]
    bump(4, angle, ok & (opposite == 0))
    bump(5, angle, ok & (opposite == 1))
    bump(6, angle, ok & (opposite == 2))

    area = 0.5 * np.linalg.norm(np.cross(v1, v2), axis=1)
    root = np.sqrt(area) / diagonal
    tri_in = (edge_class == 0).all(axis=0)
    tri_out = (edge_class == 1).all(axis=0)
    tri_mixed = ~(tri_in | tri_out)
    bump(7, root, tri_in)
    bump(8, root, tri_out)
    bump(9, root, tri_mixed)

    sums = hists.sum(axis=1, keepdims=True)
    hists = np.where(sums > 0, hists / np.where(sums > 0, sums, 1.0), 0.0)
    return FeatureVector(hists.reshape(-1), kind="esf")


# ---------------------------------------------------------------------------
# Serialization: flat binary container, little-endian float32 rows


_MAGIC = b"B3FS"
_VERSION = 1


def save_feature_set(fset: FeatureSet, path) -> None:
    """Write a FeatureSet: magic, version, kind tag, dimension, count,
    kept/dropped, source tag, then row-major little-endian float32 data."""
    kind = fset.kind.encode("ascii")
    source = fset.source.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<BB", _VERSION, len(kind)))
        fh.write(kind)
        fh.write(struct.pack("<IIiiH", fset.dimension, len(fset), fset.kept, fset.dropped, len(source)))
        fh.write(source)
        fh.write(fset.vectors.astype("<f4").tobytes())


def load_feature_set(path) -> FeatureSet:
    with open(path, "rb") as fh:
        data = fh.read()
    buf = io.BytesIO(data)
    if buf.read(4) != _MAGIC:
        raise DataError(f"not a feature-set file: {path}")
    version, kind_len = struct.unpack("<BB", buf.read(2))
    if version != _VERSION:
        raise DataError(f"unsupported feature-set version {version}")
    kind = buf.read(kind_len).decode("ascii")
    dim, count, kept, dropped, src_len = struct.unpack("<IIiiH", buf.read(18))
    source = buf.read(src_len).decode("utf-8")
    raw = buf.read(dim * count * 4)
    if len(raw) != dim * count * 4:
        raise DataError(f"truncated feature-set file: {path}")
    vectors = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(count, dim)
    return FeatureSet(vectors, kind=kind, source=source, kept=kept, dropped=dropped)
