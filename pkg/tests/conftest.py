import numpy as np
import pytest

from semattn.graph import SemanticGraph
from semattn.types import Pose, SemanticSchema


def axis_angle_rotation(axis, angle_rad: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    k = np.array([[0, -axis[2], axis[1]],
                  [axis[2], 0, -axis[0]],
                  [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(angle_rad) * k + (1 - np.cos(angle_rad)) * (k @ k)


def random_pose(rng: np.random.Generator, max_translation: float = 10.0) -> Pose:
    axis = rng.normal(size=3)
    angle = rng.uniform(0, np.pi)
    return Pose(axis_angle_rotation(axis, angle),
                rng.uniform(-max_translation, max_translation, 3))


def make_graph(pos_t, pos_t1, class_t, class_t1, geom_t=None, geom_t1=None,
               candidate_edges=(), intra_edges=(), normals_t=None, normals_t1=None,
               curvature_t=None, curvature_t1=None) -> SemanticGraph:
    """Hand-built two-cloud graph for fixtures; ids are 0..n_t-1, n_t..n-1."""
    pos_t = np.asarray(pos_t, dtype=np.float64).reshape(-1, 3)
    pos_t1 = np.asarray(pos_t1, dtype=np.float64).reshape(-1, 3)
    n_t, n1 = len(pos_t), len(pos_t1)
    n = n_t + n1

    def fill(val, length, default):
        if val is None:
            return default
        return np.asarray(val)

    geom_t = fill(geom_t, n_t, np.zeros(n_t, np.uint8))
    geom_t1 = fill(geom_t1, n1, np.zeros(n1, np.uint8))
    normals = np.vstack([
        fill(normals_t, n_t, np.tile([0.0, 0.0, 1.0], (n_t, 1))),
        fill(normals_t1, n1, np.tile([0.0, 0.0, 1.0], (n1, 1))),
    ])
    curvature = np.concatenate([
        fill(curvature_t, n_t, np.zeros(n_t)),
        fill(curvature_t1, n1, np.zeros(n1)),
    ])
    return SemanticGraph(
        node_ids=np.arange(n, dtype=np.int64),
        positions=np.vstack([pos_t, pos_t1]),
        cloud_tag=np.concatenate([np.zeros(n_t, np.uint8), np.ones(n1, np.uint8)]),
        class_ids=np.concatenate([np.asarray(class_t, np.uint16),
                                  np.asarray(class_t1, np.uint16)]),
        geometric_class=np.concatenate([geom_t, geom_t1]).astype(np.uint8),
        normals=normals,
        curvature=curvature,
        degenerate=np.zeros(n, bool),
        intra_edges=np.asarray(intra_edges, np.int64).reshape(-1, 2),
        candidate_edges=np.asarray(candidate_edges, np.int64).reshape(-1, 2),
    )


def correspondence_graph(points_t, points_t1, class_id: int = 1) -> SemanticGraph:
    """Graph whose candidate edges pair point i with its counterpart i."""
    n = len(points_t)
    edges = np.column_stack([np.arange(n), np.arange(n) + n])
    return make_graph(points_t, points_t1, np.full(n, class_id), np.full(n, class_id),
                      candidate_edges=edges)


@pytest.fixture
def two_class_schema():
    return SemanticSchema(((1, "plane"), (2, "pole")))
