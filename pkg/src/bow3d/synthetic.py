"""Seeded synthetic scene generator for desk-scale experiments.

Each category is a geometric archetype: a composition of colored planes,
boxes, spheres, and cylinders. Clouds sample the archetype surfaces
proportionally to area, apply a per-cloud rigid jitter (rotation about z,
translation, mild scaling), and add Gaussian positional noise. Generation
is fully determined by the spec seed, so the same spec always writes
bit-identical files.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .cloud import PointCloud
from .config import ExperimentConfig, write_configuration
from .errors import DataError
from .pcd_io import save_pcd

__all__ = [
    "Primitive",
    "Plane",
    "Box",
    "Sphere",
    "Cylinder",
    "SceneArchetype",
    "SceneSpec",
    "default_archetypes",
    "sample_cloud",
    "generate_synthetic_dataset",
]


class Primitive:
    """A colored surface patch that can be sampled uniformly by area."""

    color: tuple[int, int, int]

    def area(self) -> float:
        raise NotImplementedError

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError


@dataclass
class Plane(Primitive):
    """Parallelogram patch origin + a*u + b*v for a, b in [0, 1]."""

    origin: tuple[float, float, float]
    u: tuple[float, float, float]
    v: tuple[float, float, float]
    color: tuple[int, int, int] = (128, 128, 128)

    def area(self) -> float:
        return float(np.linalg.norm(np.cross(self.u, self.v)))

    def sample(self, n, rng):
        ab = rng.random((n, 2))
        return np.asarray(self.origin) + ab[:, :1] * np.asarray(self.u) + ab[:, 1:] * np.asarray(self.v)


@dataclass
class Box(Primitive):
    """Axis-aligned box surface (all six faces)."""

    center: tuple[float, float, float]
    size: tuple[float, float, float]
    color: tuple[int, int, int] = (128, 128, 128)

    def area(self) -> float:
        sx, sy, sz = self.size
        return 2.0 * (sx * sy + sy * sz + sx * sz)

    def sample(self, n, rng):
        sx, sy, sz = self.size
        face_areas = np.array([sy * sz, sy * sz, sx * sz, sx * sz, sx * sy, sx * sy])
        faces = rng.choice(6, size=n, p=face_areas / face_areas.sum())
        uv = rng.random((n, 2)) - 0.5
        pts = np.empty((n, 3))
        half = np.array(self.size) / 2.0
        for f in range(6):
            m = faces == f
            axis = f // 2
            sign = 1.0 if f % 2 == 0 else -1.0
            others = [a for a in range(3) if a != axis]
            pts[m, axis] = sign * half[axis]
            pts[m, others[0]] = uv[m, 0] * self.size[others[0]]
            pts[m, others[1]] = uv[m, 1] * self.size[others[1]]
        return pts + np.asarray(self.center)


@dataclass
class Sphere(Primitive):
    center: tuple[float, float, float]
    radius: float
    color: tuple[int, int, int] = (128, 128, 128)

    def area(self) -> float:
        return float(4.0 * np.pi * self.radius**2)

    def sample(self, n, rng):
        d = rng.normal(size=(n, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        return np.asarray(self.center) + self.radius * d


@dataclass
class Cylinder(Primitive):
    """Lateral surface of a z-aligned cylinder standing on its base."""

    base: tuple[float, float, float]
    radius: float
    height: float
    color: tuple[int, int, int] = (128, 128, 128)

    def area(self) -> float:
        return float(2.0 * np.pi * self.radius * self.height)

    def sample(self, n, rng):
        az = rng.uniform(-np.pi, np.pi, n)
        z = rng.random(n) * self.height
        pts = np.stack([self.radius * np.cos(az), self.radius * np.sin(az), z], axis=1)
        return pts + np.asarray(self.base)


@dataclass
class SceneArchetype:
    name: str
    primitives: list[Primitive]


@dataclass
class SceneSpec:
    """What to generate: categories, sampling density, noise, and seed."""

    categories: list[SceneArchetype]
    noise_sigma: float = 0.002
    points_per_cloud: int = 1500
    clouds_per_category: int = 10
    seed: int = 0
    pose_jitter: bool = True
    scale_range: tuple[float, float] = (0.95, 1.05)
    color_noise: int = 0

    def __post_init__(self):
        if len(self.categories) < 2:
            raise DataError("scene spec needs at least 2 categories")
        if self.noise_sigma < 0:
            raise DataError(f"noise sigma must be >= 0, got {self.noise_sigma}")
        names = [c.name for c in self.categories]
        if len(set(names)) != len(names):
            raise DataError(f"duplicate category names: {names}")


def default_archetypes() -> list[SceneArchetype]:
    """Five desk-scale room archetypes with distinct primitive mixes."""
    gray = (150, 150, 150)
    blue = (70, 90, 200)
    red = (200, 60, 50)
    green = (60, 180, 80)
    wood = (170, 130, 80)
    return [
        SceneArchetype("flat", [
            Plane((0, 0, 0), (0.8, 0, 0), (0, 0.8, 0), gray),
            Plane((0, 0.8, 0), (0.8, 0, 0), (0, 0, 0.4), blue),
        ]),
        SceneArchetype("corner", [
            Plane((0, 0, 0), (0.5, 0, 0), (0, 0.5, 0), gray),
            Plane((0, 0, 0), (0.5, 0, 0), (0, 0, 0.5), blue),
            Plane((0, 0, 0), (0, 0.5, 0), (0, 0, 0.5), red),
        ]),
        SceneArchetype("spheres", [
            Plane((0, 0, 0), (0.7, 0, 0), (0, 0.7, 0), gray),
            Sphere((0.25, 0.25, 0.12), 0.12, red),
            Sphere((0.5, 0.5, 0.07), 0.07, green),
        ]),
        SceneArchetype("cylinders", [
            Plane((0, 0, 0), (0.7, 0, 0), (0, 0.7, 0), gray),
            Cylinder((0.2, 0.25, 0.0), 0.06, 0.3, wood),
            Cylinder((0.5, 0.45, 0.0), 0.10, 0.2, green),
        ]),
        SceneArchetype("boxes", [
            Plane((0, 0, 0), (0.7, 0, 0), (0, 0.7, 0), gray),
            Box((0.25, 0.2, 0.06), (0.2, 0.15, 0.12), wood),
            Box((0.5, 0.5, 0.125), (0.1, 0.1, 0.25), blue),
        ]),
    ]


def sample_cloud(archetype: SceneArchetype, spec: SceneSpec, rng: np.random.Generator) -> PointCloud:
    """One noisy sampled view of an archetype."""
    areas = np.array([p.area() for p in archetype.primitives])
    counts = rng.multinomial(spec.points_per_cloud, areas / areas.sum())
    parts, colors = [], []
    for prim, count in zip(archetype.primitives, counts):
        if count == 0:
            continue
        parts.append(prim.sample(int(count), rng))
        colors.append(np.tile(np.asarray(prim.color, dtype=np.float64), (int(count), 1)))
    pts = np.vstack(parts)
    cols = np.vstack(colors)

    if spec.pose_jitter:
        scale = rng.uniform(*spec.scale_range)
        angle = rng.uniform(-np.pi, np.pi)
        c, s = np.cos(angle), np.sin(angle)
        rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        shift = rng.uniform(-0.05, 0.05, 3)
        pts = (pts * scale) @ rot.T + shift
    if spec.noise_sigma > 0:
        pts = pts + rng.normal(0.0, spec.noise_sigma, pts.shape)
    if spec.color_noise > 0:
        cols = cols + rng.integers(-spec.color_noise, spec.color_noise + 1, cols.shape)
    cols = np.clip(np.round(cols), 0, 255).astype(np.uint8)

    # float32 snap so in-memory clouds match their PCD serialization
    pts = pts.astype(np.float32).astype(np.float64)
    return PointCloud(points=pts, colors=cols, viewpoint=(0.0, 0.0, 1.5), label=archetype.name)


def generate_synthetic_dataset(
    spec: SceneSpec,
    out_dir,
    train_fraction: float = 0.6,
    encoding: str = "binary",
    base_config: Optional[ExperimentConfig] = None,
) -> str:
    """Write labeled PCD files plus a manifest config file.

    The first ceil(train_fraction * n) clouds of each category go to the
    `[training]` section, the rest to `[test]`. Returns the manifest path.
    """
    out_dir = os.fspath(out_dir)
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {out_dir}: {exc}") from exc

    children = np.random.SeedSequence(spec.seed).spawn(len(spec.categories) * spec.clouds_per_category)
    cfg = base_config if base_config is not None else ExperimentConfig()
    cfg.training, cfg.test = [], []
    n_train = int(np.ceil(train_fraction * spec.clouds_per_category))

    stream = 0
    for archetype in spec.categories:
        cat_dir = os.path.join(out_dir, archetype.name)
        os.makedirs(cat_dir, exist_ok=True)
        for i in range(spec.clouds_per_category):
            rng = np.random.default_rng(children[stream])
            stream += 1
            cloud = sample_cloud(archetype, spec, rng)
            rel = os.path.join(archetype.name, f"{archetype.name}_{i:03d}.pcd")
            save_pcd(cloud, os.path.join(out_dir, rel), encoding=encoding)
            entry = (rel, archetype.name)
            if i < n_train:
                cfg.training.append(entry)
            else:
                cfg.test.append(entry)

    manifest = os.path.join(out_dir, "manifest.cfg")
    write_configuration(cfg, manifest)
    return manifest
