"""Synthetic labelled point-cloud scenes and the text scene-file format."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..numerics.rng import seeded_rng

CATEGORIES = ("box", "slab", "sphere", "cigar", "panel", "pole")
NOISE_CATEGORY = -1
SCENE_MAGIC = "toll-scene"


class SceneFormatError(ValueError):
    def __init__(self, path, line: int, msg: str):
        super().__init__(f"{path}:{line}: {msg}")
        self.line = line


@dataclass
class SceneSpec:
    num_objects: int = 8
    primitive_mix: tuple[float, ...] = (1.0,) * len(CATEGORIES)
    workspace: tuple[float, float, float] = (6.0, 6.0, 2.5)
    points_per_object: int = 128
    noise_clusters: int = 0
    noise_points: int = 24

    def validate(self) -> None:
        if self.num_objects < 1 or self.points_per_object < 1:
            raise ValueError("num_objects and points_per_object must be >= 1")
        if self.noise_clusters < 0 or (self.noise_clusters and self.noise_points < 1):
            raise ValueError("noise cluster counts must be nonnegative / positive")
        if len(self.primitive_mix) != len(CATEGORIES) or min(self.primitive_mix) < 0 or sum(self.primitive_mix) <= 0:
            raise ValueError(f"primitive_mix needs {len(CATEGORIES)} nonnegative weights")
        if min(self.workspace) <= 0:
            raise ValueError("workspace extents must be positive")


@dataclass
class LabeledPointCloud:
    points: np.ndarray  # (N, 3) metres
    instance_ids: np.ndarray  # (N,) int64
    categories: dict[int, int] = field(default_factory=dict)  # instance id -> category

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        self.instance_ids = np.asarray(self.instance_ids, dtype=np.int64).reshape(-1)
        if len(self.points) != len(self.instance_ids):
            raise ValueError("points and instance_ids differ in length")
        if len(self.instance_ids) and self.instance_ids.min() < 0:
            raise ValueError("instance ids must be nonnegative")


def _box_surface(rng, n, size):
    sx, sy, sz = size
    areas = np.array([sy * sz, sy * sz, sx * sz, sx * sz, sx * sy, sx * sy])
    face = rng.choice(6, size=n, p=areas / areas.sum())
    uv = rng.uniform(-0.5, 0.5, size=(n, 3)) * np.array(size)
    axis = face // 2
    sign = np.where(face % 2 == 0, -0.5, 0.5)
    uv[np.arange(n), axis] = sign * np.array(size)[axis]
    return uv


def _ellipsoid_surface(rng, n, radii):
    v = rng.standard_normal((n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v * np.array(radii)


def _cylinder_surface(rng, n, radius, height):
    theta = rng.uniform(0, 2 * np.pi, n)
    z = rng.uniform(-height / 2, height / 2, n)
    return np.column_stack([radius * np.cos(theta), radius * np.sin(theta), z])


def _sample_primitive(rng, category: int, n: int) -> np.ndarray:
    name = CATEGORIES[category]
    if name == "box":
        base = rng.uniform(0.35, 0.6)
        pts = _box_surface(rng, n, base * rng.uniform(0.85, 1.15, 3))
    elif name == "slab":
        pts = _box_surface(rng, n, (rng.uniform(0.8, 1.4), rng.uniform(0.5, 0.9), rng.uniform(0.04, 0.08)))
    elif name == "sphere":
        r = rng.uniform(0.2, 0.4)
        pts = _ellipsoid_surface(rng, n, r * rng.uniform(0.9, 1.1, 3))
    elif name == "cigar":
        pts = _ellipsoid_surface(rng, n, (rng.uniform(0.5, 0.8), rng.uniform(0.12, 0.2), rng.uniform(0.12, 0.2)))
    elif name == "panel":
        w, h = rng.uniform(0.6, 1.2), rng.uniform(0.8, 1.6)
        pts = np.column_stack([rng.uniform(-w / 2, w / 2, n), rng.normal(0.0, 0.002, n),
                               rng.uniform(-h / 2, h / 2, n)])
    else:  # pole
        pts = _cylinder_surface(rng, n, rng.uniform(0.04, 0.08), rng.uniform(0.8, 1.6))
    yaw = rng.uniform(0, 2 * np.pi)
    c, s = np.cos(yaw), np.sin(yaw)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return pts @ rot.T


def generate_scene(spec: SceneSpec, seed: int) -> LabeledPointCloud:
    """Objects are primitive surfaces resting at random workspace positions.

    Instance ids run 0..num_objects-1 for objects, then one id per noise cluster.
    """
    spec.validate()
    rng = seeded_rng(seed, 0x5CE)
    mix = np.asarray(spec.primitive_mix, dtype=np.float64)
    wx, wy, wz = spec.workspace
    pts, ids, cats = [], [], {}
    for k in range(spec.num_objects):
        cat = int(rng.choice(len(CATEGORIES), p=mix / mix.sum()))
        local = _sample_primitive(rng, cat, spec.points_per_object)
        half_h = 0.5 * (local[:, 2].max() - local[:, 2].min())
        lift = rng.uniform(0.0, max(wz - 2 * half_h, 0.0) * 0.4)
        pos = np.array([rng.uniform(0, wx), rng.uniform(0, wy), half_h + lift])
        pts.append(local + pos)
        ids.append(np.full(spec.points_per_object, k))
        cats[k] = cat
    for j in range(spec.noise_clusters):
        k = spec.num_objects + j
        centre = rng.uniform(0, 1, 3) * np.array(spec.workspace)
        pts.append(centre + rng.normal(0.0, 0.05, (spec.noise_points, 3)))
        ids.append(np.full(spec.noise_points, k))
        cats[k] = NOISE_CATEGORY
    return LabeledPointCloud(np.concatenate(pts), np.concatenate(ids), cats)


def write_scene(path, cloud: LabeledPointCloud) -> None:
    lines = [f"{SCENE_MAGIC} 1 {len(cloud.points)}"]
    for (x, y, z), i in zip(cloud.points, cloud.instance_ids):
        lines.append(f"{x:.17g} {y:.17g} {z:.17g} {int(i)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_scene(path) -> LabeledPointCloud:
    text = Path(path).read_text(encoding="utf-8").splitlines()
    if not text:
        raise SceneFormatError(path, 1, "empty file")
    head = text[0].split()
    if len(head) != 3 or head[0] != SCENE_MAGIC or head[1] != "1":
        raise SceneFormatError(path, 1, f"expected '{SCENE_MAGIC} 1 <num_points>'")
    try:
        n = int(head[2])
    except ValueError:
        raise SceneFormatError(path, 1, "point count is not an integer") from None
    if len(text) - 1 < n:
        raise SceneFormatError(path, len(text) + 1, f"truncated: header declares {n} points, found {len(text) - 1}")
    pts = np.empty((n, 3))
    ids = np.empty(n, dtype=np.int64)
    for k in range(n):
        fields = text[k + 1].split()
        if len(fields) != 4:
            raise SceneFormatError(path, k + 2, "expected 'x y z id'")
        try:
            pts[k] = [float(f) for f in fields[:3]]
            ids[k] = int(fields[3])
        except ValueError:
            raise SceneFormatError(path, k + 2, "unparsable number") from None
    return LabeledPointCloud(pts, ids)
