"""Visual dictionary via k-means and fixed-size bag-of-words histograms.

The dictionary is always built from training features only; descriptors
for any cloud then live in the same k-dimensional space regardless of how
many local features the cloud produced.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DataError, NumericError
from .features import FeatureSet

__all__ = [
    "Dictionary",
    "BoWDescriptor",
    "build_dictionary",
    "assign_word",
    "compute_bow_descriptor",
    "save_dictionary",
    "load_dictionary",
]


@dataclass
class Dictionary:
    """k representative feature vectors plus training provenance."""

    words: np.ndarray  # (k, dim) float64
    kind: str
    seed: int
    iterations: int
    inertia: float
    inertia_history: list[float] = field(default_factory=list)

    def __post_init__(self):
        self.words = np.asarray(self.words, dtype=np.float64)
        if self.words.ndim != 2 or len(self.words) == 0:
            raise DataError("dictionary needs a non-empty (k, dim) word matrix")

    @property
    def k(self) -> int:
        return len(self.words)

    @property
    def dimension(self) -> int:
        return self.words.shape[1]


@dataclass
class BoWDescriptor:
    """Normalized k-bin histogram of word assignments for one cloud.

    `empty` marks clouds that produced zero features; their histogram is
    all zeros and they are the only descriptors allowed not to sum to 1.
    """

    histogram: np.ndarray
    source: str = ""
    label: Optional[str] = None
    empty: bool = False

    def __post_init__(self):
        self.histogram = np.asarray(self.histogram, dtype=np.float64).reshape(-1)


def _sq_dists(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances, (n, k)."""
    d = x @ centers.T
    d *= -2.0
    d += (x**2).sum(axis=1)[:, None]
    d += (centers**2).sum(axis=1)[None, :]
    np.clip(d, 0.0, None, out=d)
    return d


def _kmeans_pp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Careful-seeding initialization: first center uniform, the rest
    sampled proportionally to squared distance from the chosen set."""
    n = len(x)
    centers = np.empty((k, x.shape[1]))
    chosen = np.zeros(n, dtype=bool)
    first = int(rng.integers(n))
    centers[0] = x[first]
    chosen[first] = True
    d2 = _sq_dists(x, centers[:1]).ravel()
    for j in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            # All remaining points coincide with a center; take the lowest
            # unchosen index to keep k exact.
            remaining = np.flatnonzero(~chosen)
            idx = int(remaining[0]) if len(remaining) else int(rng.integers(n))
        centers[j] = x[idx]
        chosen[idx] = True
        d2 = np.minimum(d2, _sq_dists(x, centers[j:j + 1]).ravel())
    return centers


def build_dictionary(
    feature_sets: Sequence[FeatureSet],
    k: int,
    seed: int,
    max_iters: int = 100,
    tol: float = 1e-4,
) -> Dictionary:
    """Cluster the merged training features into k words with Lloyd's
    algorithm (careful seeding, deterministic given `seed`).

    Iteration stops when assignments repeat exactly, when the largest
    centroid movement drops below `tol`, or after `max_iters`. Clusters
    that empty out are re-seeded with the point farthest from its
    centroid, so the dictionary always has exactly k words.
    """
    if k <= 0:
        raise DataError(f"k must be positive, got {k}")
    sets = [fs for fs in feature_sets if len(fs) > 0]
    if not sets:
        raise DataError("no features to build a dictionary from")
    kinds = {fs.kind for fs in sets}
    if len(kinds) > 1:
        raise DataError(f"heterogeneous feature kinds: {sorted(kinds)}")
    dims = {fs.dimension for fs in sets}
    if len(dims) > 1:
        raise DataError(f"heterogeneous feature dimensions: {sorted(dims)}")
    x = np.vstack([fs.vectors for fs in sets])
    if k > len(x):
        raise NumericError(f"k={k} exceeds the {len(x)} available features")

    rng = np.random.default_rng(seed)
    centers = _kmeans_pp_init(x, k, rng)

    history: list[float] = []
    prev_assign: Optional[np.ndarray] = None
    iterations = 0
    for _ in range(max_iters):
        iterations += 1
        d2 = _sq_dists(x, centers)
        assign = d2.argmin(axis=1)
        history.append(float(d2[np.arange(len(x)), assign].sum()))
        if prev_assign is not None and np.array_equal(assign, prev_assign):
            break
        prev_assign = assign

        new_centers = centers.copy()
        counts = np.bincount(assign, minlength=k)
        for j in range(k):
            if counts[j] > 0:
                new_centers[j] = x[assign == j].mean(axis=0)
        empties = np.flatnonzero(counts == 0)
        if len(empties) > 0:
            point_d2 = d2[np.arange(len(x)), assign].copy()
            for j in empties:
                far = int(point_d2.argmax())
                new_centers[j] = x[far]
                point_d2[far] = 0.0
        movement = float(np.sqrt(((new_centers - centers) ** 2).sum(axis=1)).max())
        centers = new_centers
        if movement < tol:
            break
    else:
        iterations = max_iters

    # Record the inertia of the final centers if the loop ended on an
    # update (tol or max_iters) rather than on a repeated assignment.
    d2 = _sq_dists(x, centers)
    assign = d2.argmin(axis=1)
    final_inertia = float(d2[np.arange(len(x)), assign].sum())
    if not history or final_inertia != history[-1]:
        history.append(final_inertia)
    return Dictionary(
        words=centers,
        kind=next(iter(kinds)),
        seed=seed,
        iterations=iterations,
        inertia=final_inertia,
        inertia_history=history,
    )


def assign_word(dictionary: Dictionary, feature) -> int:
    """Index of the word nearest in Euclidean distance; ties go to the
    lowest index."""
    if isinstance(feature, np.ndarray):
        vec = feature
    else:
        vec = np.asarray(getattr(feature, "values", feature), dtype=np.float64)
    vec = vec.reshape(-1)
    if len(vec) != dictionary.dimension:
        raise DataError(f"feature dimension {len(vec)} != dictionary dimension {dictionary.dimension}")
    return int(_sq_dists(vec[None, :], dictionary.words).argmin())


def compute_bow_descriptor(dictionary: Dictionary, features: FeatureSet) -> BoWDescriptor:
    """Relative frequency of each word among the cloud's features; an
    empty FeatureSet yields the flagged all-zero histogram."""
    if features.kind != dictionary.kind:
        raise DataError(f"feature kind {features.kind!r} != dictionary kind {dictionary.kind!r}")
    k = dictionary.k
    if len(features) == 0:
        return BoWDescriptor(np.zeros(k), source=features.source, empty=True)
    if features.dimension != dictionary.dimension:
        raise DataError(f"feature dimension {features.dimension} != dictionary dimension {dictionary.dimension}")
    assign = _sq_dists(features.vectors, dictionary.words).argmin(axis=1)
    hist = np.bincount(assign, minlength=k).astype(np.float64)
    return BoWDescriptor(hist / len(features), source=features.source)


_MAGIC = b"B3DC"
_VERSION = 1


def save_dictionary(dictionary: Dictionary, path) -> None:
    """Binary container: kind tag, k, dimension, seed, inertia, then k
    rows of little-endian float32 words."""
    kind = dictionary.kind.encode("ascii")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<BB", _VERSION, len(kind)))
        fh.write(kind)
        fh.write(struct.pack("<IIqd", dictionary.k, dictionary.dimension,
                             dictionary.seed, dictionary.inertia))
        fh.write(dictionary.words.astype("<f4").tobytes())


def load_dictionary(path) -> Dictionary:
    with open(path, "rb") as fh:
        buf = io.BytesIO(fh.read())
    if buf.read(4) != _MAGIC:
        raise DataError(f"not a dictionary file: {path}")
    version, kind_len = struct.unpack("<BB", buf.read(2))
    if version != _VERSION:
        raise DataError(f"unsupported dictionary version {version}")
    kind = buf.read(kind_len).decode("ascii")
    k, dim, seed, inertia = struct.unpack("<IIqd", buf.read(24))
    raw = buf.read(k * dim * 4)
    if len(raw) != k * dim * 4:
        raise DataError(f"truncated dictionary file: {path}")
    words = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(k, dim)
    return Dictionary(words=words, kind=kind, seed=seed, iterations=0, inertia=inertia)
