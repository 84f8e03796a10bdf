"""Synthetic desk-scale labeled scenes with known ground-truth motion.

A scene is a fixed set of geometric primitives (planes for surface-like
classes, thin posts for corner-like classes). Each cloud in a sequence
samples those primitives, applies the accumulated step transform, and adds
isotropic Gaussian noise, so every consecutive pair is related by exactly
the configured step pose. Generation is a pure function of (config, seed).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .types import LabeledCloud, Pose, SemanticSchema

PLANE = "plane"
POST = "post"


@dataclass(frozen=True)
class ClassSpec:
    """Primitive layout for one semantic class."""

    class_id: int
    name: str
    kind: str  # PLANE or POST
    primitives: int
    points_per_primitive: int

    def __post_init__(self):
        if self.kind not in (PLANE, POST):
            raise ValueError(f"unknown primitive kind {self.kind!r}")
        if self.primitives < 0:
            raise ValueError("negative primitive count")
        if self.points_per_primitive < 1:
            raise ValueError("points_per_primitive must be >= 1")


@dataclass(frozen=True)
class SceneConfig:
    classes: tuple[ClassSpec, ...]
    sigma: float = 0.0           # additive noise stddev (m)
    extent: float = 8.0          # scene bounding-box edge (m)
    step: Pose = field(default_factory=Pose.identity)  # motion per timestep
    n_clouds: int = 2
    resample: bool = True        # draw fresh surface samples per cloud

    def __post_init__(self):
        if sum(c.primitives for c in self.classes) == 0:
            raise ValueError("zero primitives configured")
        if self.sigma < 0:
            raise ValueError("noise sigma must be >= 0")
        if self.extent <= 0:
            raise ValueError("extent must be positive")
        if self.n_clouds < 2:
            raise ValueError("need at least 2 clouds")


def scene_schema(config: SceneConfig) -> SemanticSchema:
    return SemanticSchema(tuple((c.class_id, c.name) for c in config.classes))


def default_scene_classes(n_classes: int = 5) -> tuple[ClassSpec, ...]:
    """Standard mixed plane/post layout with distinct per-class densities."""
    base = [
        ("ground", PLANE, 1, 120),
        ("wall", PLANE, 3, 70),
        ("panel", PLANE, 2, 50),
        ("post", POST, 4, 40),
        ("rod", POST, 3, 30),
        ("slab", PLANE, 2, 45),
        ("mast", POST, 2, 35),
        ("board", PLANE, 1, 60),
    ]
    if n_classes < 2:
        raise ValueError("need at least 2 classes")
    specs = []
    for i in range(n_classes):
        name, kind, prim, ppp = base[i % len(base)]
        if i >= len(base):
            name = f"{name}{i // len(base)}"
        specs.append(ClassSpec(i + 1, name, kind, prim, ppp))
    return tuple(specs)


def _random_rotation(rng: np.random.Generator) -> np.ndarray:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0.0, np.pi)
    k = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * (k @ k)


@dataclass(frozen=True)
class _Primitive:
    kind: str
    class_id: int
    center: np.ndarray
    axes: np.ndarray      # plane: two in-plane unit axes; post: one direction
    half_sizes: np.ndarray
    n_points: int


def _scene_primitives(config: SceneConfig, seed: int) -> list[_Primitive]:
    rng = np.random.default_rng([int(seed), 101])
    half = config.extent / 2.0
    prims: list[_Primitive] = []
    for spec in config.classes:
        for _ in range(spec.primitives):
            center = rng.uniform(-half, half, 3)
            rot = _random_rotation(rng)
            if spec.kind == PLANE:
                size = config.extent / 5.0 * rng.uniform(0.7, 1.0, 2)
                prims.append(_Primitive(PLANE, spec.class_id, center,
                                        rot[:, :2].T.copy(), size, spec.points_per_primitive))
            else:
                length = config.extent / 3.0 * rng.uniform(0.6, 1.0)
                prims.append(_Primitive(POST, spec.class_id, center,
                                        rot[:, 2:3].T.copy(), np.array([length / 2.0]),
                                        spec.points_per_primitive))
    return prims


def _grid_coords(n_points: int, dims: int) -> np.ndarray:
    """Near-isotropic jittered-grid base coordinates in [-1, 1]^dims."""
    if dims == 1:
        ticks = (np.arange(n_points) + 0.5) / n_points * 2.0 - 1.0
        return ticks[:, None]
    n_u = max(1, int(round(np.sqrt(n_points))))
    n_v = int(np.ceil(n_points / n_u))
    u = (np.arange(n_u) + 0.5) / n_u * 2.0 - 1.0
    v = (np.arange(n_v) + 0.5) / n_v * 2.0 - 1.0
    grid = np.stack(np.meshgrid(u, v, indexing="ij"), axis=-1).reshape(-1, 2)
    return grid[:n_points]


def _sample_cloud(config: SceneConfig, prims: list[_Primitive], seed: int, t: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    sample_key = t if config.resample else 0
    rng = np.random.default_rng([int(seed), 211, int(sample_key)])
    chunks, labels = [], []
    for prim in prims:
        dims = len(prim.half_sizes)
        base = _grid_coords(prim.n_points, dims)
        cell = 2.0 / np.ceil(np.sqrt(prim.n_points)) if dims == 2 else 2.0 / prim.n_points
        coords = base + rng.uniform(-0.45, 0.45, base.shape) * cell
        pts = prim.center + (coords * prim.half_sizes) @ prim.axes
        chunks.append(pts)
        labels.append(np.full(prim.n_points, prim.class_id, dtype=np.uint16))
    positions = np.vstack(chunks)
    intensities = rng.uniform(0.0, 1.0, len(positions))
    return positions, intensities, np.concatenate(labels)


def _make_cloud(config: SceneConfig, prims, seed: int, t: int, accumulated: Pose,
                schema: SemanticSchema) -> LabeledCloud:
    positions, intensities, labels = _sample_cloud(config, prims, seed, t)
    positions = accumulated.apply(positions)
    if config.sigma > 0:
        noise_rng = np.random.default_rng([int(seed), 307, int(t)])
        positions = positions + noise_rng.normal(0.0, config.sigma, positions.shape)
    cloud = LabeledCloud(t, positions, intensities)
    return cloud.with_labels(labels, schema)


def generate_synthetic_sequence(config: SceneConfig, seed: int) -> tuple[list[LabeledCloud], list[Pose]]:
    """All clouds of the configured sequence plus the per-pair ground truth.

    The returned poses map points of cloud t onto the matching points of
    cloud t+1; with ``resample`` disabled and zero noise the correspondence
    is exact point-for-point.
    """
    schema = scene_schema(config)
    prims = _scene_primitives(config, seed)
    clouds: list[LabeledCloud] = []
    accumulated = Pose.identity()
    for t in range(config.n_clouds):
        clouds.append(_make_cloud(config, prims, seed, t, accumulated, schema))
        accumulated = config.step.compose(accumulated)
    return clouds, [config.step] * (config.n_clouds - 1)


def generate_synthetic_scene(config: SceneConfig, seed: int) -> tuple[LabeledCloud, LabeledCloud, Pose]:
    """First two clouds of the sequence and their relative ground truth."""
    clouds, gts = generate_synthetic_sequence(replace(config, n_clouds=2), seed)
    return clouds[0], clouds[1], gts[0]


def yaw_pose(yaw_deg: float, translation=(0.0, 0.0, 0.0)) -> Pose:
    """Rotation about +z by ``yaw_deg`` plus a translation; handy step motion."""
    a = np.radians(yaw_deg)
    rot = np.array([[np.cos(a), -np.sin(a), 0.0],
                    [np.sin(a), np.cos(a), 0.0],
                    [0.0, 0.0, 1.0]])
    return Pose(rot, np.asarray(translation, dtype=np.float64))
