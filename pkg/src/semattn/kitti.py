"""KITTI-style file IO.

Formats:
  * scan files:  binary, four little-endian float32 per point (x, y, z, intensity)
  * label files: binary, one little-endian uint32 per point; semantic class id
    is the low 16 bits (the high bits carry an instance id and are discarded)
  * pose files:  ASCII, 12 whitespace-separated reals per line, the row-major
    3x4 matrix [R | t] of the absolute pose at that timestamp
  * schema files: text, one "class_id class_name" pair per line
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .errors import FormatError
from .types import LabeledCloud, Pose, SemanticSchema, project_to_so3

POINT_RECORD_BYTES = 16
POSE_INPUT_ORTHO_TOL = 1e-3


def load_scan(path: str | os.PathLike, timestamp_index: int = 0) -> LabeledCloud:
    """Read a binary scan into an unlabeled cloud, preserving file order."""
    raw = np.fromfile(Path(path), dtype="<f4")
    nbytes = raw.size * 4
    if nbytes % POINT_RECORD_BYTES != 0:
        raise FormatError(
            f"{path}: truncated scan, {nbytes} bytes is not a multiple of {POINT_RECORD_BYTES}")
    finite = np.isfinite(raw)
    if not finite.all():
        offset = int(np.argmin(finite)) * 4
        raise FormatError(f"{path}: non-finite float at byte offset {offset}")
    records = raw.reshape(-1, 4).astype(np.float64)
    return LabeledCloud(timestamp_index, records[:, :3], records[:, 3])


def save_scan(cloud: LabeledCloud, path: str | os.PathLike) -> None:
    records = np.column_stack([cloud.positions, cloud.intensities]).astype("<f4")
    records.tofile(Path(path))


def load_labels(path: str | os.PathLike, cloud: LabeledCloud, schema: SemanticSchema,
                remap: dict[int, int] | None = None) -> LabeledCloud:
    """Attach per-point class ids from a binary label file.

    ``remap`` optionally folds raw class ids into schema ids (e.g. merging
    moving-object ids with their static counterparts) before validation.
    """
    raw = np.fromfile(Path(path), dtype="<u4")
    if raw.size != len(cloud):
        raise FormatError(f"{path}: {raw.size} labels for {len(cloud)} points")
    ids = (raw & 0xFFFF).astype(np.uint16)
    if remap:
        for src, dst in remap.items():
            ids[ids == src] = dst
    try:
        return cloud.with_labels(ids, schema)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def save_labels(cloud: LabeledCloud, path: str | os.PathLike) -> None:
    if cloud.labels is None:
        raise ValueError("cloud has no labels to save")
    cloud.labels.astype("<u4").tofile(Path(path))


def load_poses(path: str | os.PathLike) -> list[Pose]:
    """Parse an absolute-pose file, re-orthonormalizing each rotation.

    Text poses carry rounding error; rotations within ``POSE_INPUT_ORTHO_TOL``
    of orthonormal are projected back onto SO(3), anything worse is rejected.
    """
    poses: list[Pose] = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            fields = line.split()
            if len(fields) != 12:
                raise FormatError(f"{path}:{lineno}: expected 12 fields, got {len(fields)}")
            try:
                vals = np.array([float(f) for f in fields], dtype=np.float64)
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from exc
            if not np.all(np.isfinite(vals)):
                raise FormatError(f"{path}:{lineno}: non-finite value")
            mat = vals.reshape(3, 4)
            rot, tra = mat[:, :3], mat[:, 3]
            resid = np.linalg.norm(rot.T @ rot - np.eye(3))
            if resid > POSE_INPUT_ORTHO_TOL:
                raise FormatError(
                    f"{path}:{lineno}: rotation fails orthogonality (residual {resid:.3e})")
            if np.linalg.det(rot) < 0:
                raise FormatError(f"{path}:{lineno}: rotation part is a reflection")
            poses.append(Pose(project_to_so3(rot), tra))
    return poses


def save_poses(poses: list[Pose], path: str | os.PathLike) -> None:
    with open(path, "w") as fh:
        for pose in poses:
            mat = np.column_stack([pose.rotation, pose.translation])
            fh.write(" ".join(repr(float(v)) for v in mat.reshape(-1)) + "\n")


def load_schema(path: str | os.PathLike) -> SemanticSchema:
    classes: list[tuple[int, str]] = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.replace(":", " ").split()
            if len(fields) != 2:
                raise FormatError(f"{path}:{lineno}: expected 'class_id class_name'")
            try:
                cid = int(fields[0])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from exc
            classes.append((cid, fields[1]))
    try:
        return SemanticSchema(tuple(classes))
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def save_schema(schema: SemanticSchema, path: str | os.PathLike) -> None:
    with open(path, "w") as fh:
        for cid, name in schema.classes:
            fh.write(f"{cid} {name}\n")
