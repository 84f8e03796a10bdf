"""Core data model: semantic schema, labeled clouds, and rigid poses.

All types are immutable after construction (arrays are marked read-only),
so instances can be shared freely across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ORTHOGONALITY_TOL = 1e-9


def _frozen(arr: np.ndarray, dtype=None) -> np.ndarray:
    out = np.array(arr, dtype=dtype, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class SemanticSchema:
    """Ordered map of semantic class ids to unique class names."""

    classes: tuple[tuple[int, str], ...]
    _id_to_name: dict[int, str] = field(init=False, repr=False, compare=False)
    _name_to_id: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.classes) < 2:
            raise ValueError("schema needs at least 2 classes for semantic masking")
        id_to_name: dict[int, str] = {}
        name_to_id: dict[str, int] = {}
        for cid, name in self.classes:
            if not (0 <= int(cid) < 2**16):
                raise ValueError(f"class id {cid} outside unsigned 16-bit range")
            if cid in id_to_name:
                raise ValueError(f"duplicate class id {cid}")
            if name in name_to_id:
                raise ValueError(f"duplicate class name {name!r}")
            id_to_name[int(cid)] = name
            name_to_id[name] = int(cid)
        object.__setattr__(self, "_id_to_name", id_to_name)
        object.__setattr__(self, "_name_to_id", name_to_id)

    def __len__(self) -> int:
        return len(self.classes)

    def __contains__(self, class_id: int) -> bool:
        return int(class_id) in self._id_to_name

    @property
    def ids(self) -> tuple[int, ...]:
        return tuple(cid for cid, _ in self.classes)

    def name_of(self, class_id: int) -> str:
        return self._id_to_name[int(class_id)]

    def id_of(self, name: str) -> int:
        return self._name_to_id[name]

    def index_of(self, class_id: int) -> int:
        """Ordinal position of a class id, used for one-hot encodings."""
        return self.ids.index(int(class_id))


@dataclass(frozen=True)
class LabeledPoint:
    """Single point view: position (m), intensity in [0, 1], class id."""

    position: np.ndarray
    intensity: float
    label: int | None


@dataclass(frozen=True)
class LabeledCloud:
    """Pointcloud at a discrete timestamp index.

    ``labels`` is None until label assignment; graph construction requires
    labels to be present and the cloud to be non-empty.
    """

    timestamp_index: int
    positions: np.ndarray  # (n, 3) float64
    intensities: np.ndarray  # (n,) float64
    labels: np.ndarray | None = None  # (n,) uint16

    def __post_init__(self):
        if self.timestamp_index < 0:
            raise ValueError("timestamp_index must be non-negative")
        pos = _frozen(np.asarray(self.positions, dtype=np.float64).reshape(-1, 3))
        inten = _frozen(np.asarray(self.intensities, dtype=np.float64).reshape(-1))
        if len(pos) != len(inten):
            raise ValueError("positions and intensities length mismatch")
        if not np.all(np.isfinite(pos)):
            raise ValueError("non-finite point position")
        if len(inten) and (inten.min() < 0.0 or inten.max() > 1.0):
            raise ValueError("intensity outside [0, 1]")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "intensities", inten)
        if self.labels is not None:
            lab = _frozen(np.asarray(self.labels, dtype=np.uint16).reshape(-1))
            if len(lab) != len(pos):
                raise ValueError("labels and positions length mismatch")
            object.__setattr__(self, "labels", lab)

    def __len__(self) -> int:
        return len(self.positions)

    def point(self, i: int) -> LabeledPoint:
        label = None if self.labels is None else int(self.labels[i])
        return LabeledPoint(self.positions[i], float(self.intensities[i]), label)

    def with_labels(self, labels: np.ndarray, schema: SemanticSchema) -> "LabeledCloud":
        labels = np.asarray(labels, dtype=np.uint16).reshape(-1)
        if len(labels) != len(self):
            raise ValueError(f"{len(labels)} labels for {len(self)} points")
        known = np.isin(labels, np.asarray(schema.ids, dtype=np.uint16))
        if not known.all():
            idx = int(np.argmin(known))
            raise ValueError(f"class id {int(labels[idx])} at point {idx} not in schema")
        return LabeledCloud(self.timestamp_index, self.positions, self.intensities, labels)

    def validate_labels(self, schema: SemanticSchema) -> None:
        if self.labels is None:
            raise ValueError("cloud has no labels")
        self.with_labels(self.labels, schema)


def project_to_so3(matrix: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix (Frobenius sense) via SVD projection."""
    u, _, vt = np.linalg.svd(np.asarray(matrix, dtype=np.float64))
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


@dataclass(frozen=True)
class Pose:
    """Rigid transform: ``x -> rotation @ x + translation``."""

    rotation: np.ndarray  # (3, 3)
    translation: np.ndarray  # (3,)

    def __post_init__(self):
        rot = _frozen(np.asarray(self.rotation, dtype=np.float64).reshape(3, 3))
        tra = _frozen(np.asarray(self.translation, dtype=np.float64).reshape(3))
        if not (np.all(np.isfinite(rot)) and np.all(np.isfinite(tra))):
            raise ValueError("non-finite pose entries")
        resid = np.linalg.norm(rot.T @ rot - np.eye(3))
        if resid > ORTHOGONALITY_TOL:
            raise ValueError(f"rotation not orthonormal (residual {resid:.3e})")
        det = np.linalg.det(rot)
        if abs(det - 1.0) > ORTHOGONALITY_TOL:
            raise ValueError(f"rotation determinant {det} != +1")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", tra)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    def compose(self, other: "Pose") -> "Pose":
        """Transform applying ``other`` first, then ``self``."""
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)


def relative_pose(pose_t: Pose, pose_t1: Pose) -> Pose:
    """Relative transform between consecutive absolute poses.

    Returns the pose P with ``pose_t.compose(P) == pose_t1``, i.e. the motion
    from timestamp t to t+1 expressed in the frame of t.
    """
    rt = pose_t.rotation.T
    return Pose(rt @ pose_t1.rotation, rt @ (pose_t1.translation - pose_t.translation))
