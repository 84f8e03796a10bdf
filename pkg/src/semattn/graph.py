"""Static semantic graph over a pair of consecutive labeled clouds.

Nodes are the points of both clouds. Intra-cloud edges connect same-class
points within a radius; cross-cloud candidate edges connect each cloud-t
point to its nearest cloud-t+1 points of equal semantic class and equal
geometric class (corner/surface). All neighbor queries break distance ties
by preferring the smaller point index, so construction is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np
from scipy.spatial import cKDTree

from .errors import InsufficientCandidatesError
from .types import LabeledCloud, SemanticSchema

# Feature vector layout: position, normal, curvature, one-hot class, corner flag.
POSITION_COLS = slice(0, 3)
NORMAL_COLS = slice(3, 6)
CURVATURE_COL = 6
ONE_HOT_START = 7

_DEGENERATE_EIG_SUM = 1e-18
_TIE_PAD = 4


class GeometricClass(IntEnum):
    SURFACE = 0
    CORNER = 1


@dataclass(frozen=True)
class GraphParams:
    """Construction knobs; defaults target KITTI scale, scale via config."""

    neighbor_count: int = 10        # k-neighborhood for local PCA
    line_ratio: float = 0.25        # lambda2/lambda1 below this => corner
    curvature_threshold: float = 0.1  # curvature above this => corner
    intra_radius: float = 0.5       # intra-cloud edge radius (m)
    max_candidates: int = 5         # candidate fan-out per source node
    max_distance: float = 2.0       # candidate search radius (m)

    def __post_init__(self):
        if self.neighbor_count < 3:
            raise ValueError("neighbor_count must be >= 3")
        for name in ("line_ratio", "curvature_threshold", "intra_radius",
                     "max_distance"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.max_candidates < 1:
            raise ValueError("max_candidates must be >= 1")


@dataclass(frozen=True)
class PointGeometry:
    geometric_class: np.ndarray  # (n,) uint8
    curvature: np.ndarray        # (n,) float64
    normals: np.ndarray          # (n, 3) float64
    degenerate: np.ndarray       # (n,) bool, flagged coincident neighborhoods


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


def _knn_indices(positions: np.ndarray, k: int) -> np.ndarray:
    """Indices of each point's neighborhood (self plus k nearest others)."""
    n = len(positions)
    tree = cKDTree(positions)
    kq = min(k + 1 + _TIE_PAD, n)
    dist, idx = tree.query(positions, k=kq)
    # smaller-index-wins on equal distance: stable sort by index, then distance
    order = np.argsort(idx, axis=1, kind="stable")
    dist = np.take_along_axis(dist, order, axis=1)
    idx = np.take_along_axis(idx, order, axis=1)
    order = np.argsort(dist, axis=1, kind="stable")
    idx = np.take_along_axis(idx, order, axis=1)
    return idx[:, :k + 1]


def classify_geometry(cloud: LabeledCloud, neighbor_count: int = 10,
                      line_ratio: float = 0.25,
                      curvature_threshold: float = 0.1) -> PointGeometry:
    """Corner/surface classification from local PCA of each neighborhood.

    With eigenvalues l1 >= l2 >= l3 >= 0 of the neighborhood covariance,
    curvature is l3 / (l1 + l2 + l3); a point is a corner when the
    neighborhood is line-like (l2/l1 < line_ratio) or strongly non-planar
    (curvature above threshold). Coincident neighborhoods are classified
    surface with zero curvature and flagged.
    """
    if neighbor_count < 3:
        raise ValueError("neighbor_count must be >= 3")
    if len(cloud) < neighbor_count + 1:
        raise ValueError(f"cloud has {len(cloud)} points, need >= {neighbor_count + 1}")
    pos = cloud.positions
    hood = _knn_indices(pos, neighbor_count)
    pts = pos[hood]                             # (n, k+1, 3)
    centered = pts - pts.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / hood.shape[1]
    eigvals, eigvecs = np.linalg.eigh(cov)      # ascending
    eigvals = np.maximum(eigvals, 0.0)
    l1, l2, l3 = eigvals[:, 2], eigvals[:, 1], eigvals[:, 0]
    total = l1 + l2 + l3
    degenerate = total <= _DEGENERATE_EIG_SUM
    safe_total = np.where(degenerate, 1.0, total)
    safe_l1 = np.where(l1 > 0, l1, 1.0)
    curvature = np.where(degenerate, 0.0, l3 / safe_total)
    ratio = np.where(degenerate, 1.0, l2 / safe_l1)
    corner = (~degenerate) & ((ratio < line_ratio) | (curvature > curvature_threshold))
    geom = np.where(corner, GeometricClass.CORNER, GeometricClass.SURFACE).astype(np.uint8)
    normals = eigvecs[:, :, 0].copy()           # eigenvector of smallest eigenvalue
    lead = np.take_along_axis(normals, np.abs(normals).argmax(axis=1)[:, None], axis=1)[:, 0]
    normals[lead < 0] *= -1.0
    normals[degenerate] = 0.0
    return PointGeometry(_freeze(geom), _freeze(curvature), _freeze(normals),
                         _freeze(degenerate))


@dataclass(frozen=True)
class SemanticGraph:
    """Immutable node/edge arrays; node ids stay stable under masking."""

    node_ids: np.ndarray        # (n,) int64, strictly increasing
    positions: np.ndarray       # (n, 3) float64
    cloud_tag: np.ndarray       # (n,) uint8, 0 = cloud t, 1 = cloud t+1
    class_ids: np.ndarray       # (n,) uint16
    geometric_class: np.ndarray  # (n,) uint8
    normals: np.ndarray         # (n, 3) float64
    curvature: np.ndarray       # (n,) float64
    degenerate: np.ndarray      # (n,) bool
    intra_edges: np.ndarray     # (e_i, 2) int64 node-id pairs, same cloud
    candidate_edges: np.ndarray  # (e_c, 2) int64 (cloud-t id, cloud-t+1 id)

    def __post_init__(self):
        for name in ("node_ids", "positions", "cloud_tag", "class_ids",
                     "geometric_class", "normals", "curvature", "degenerate",
                     "intra_edges", "candidate_edges"):
            object.__setattr__(self, name, _freeze(np.asarray(getattr(self, name))))
        ids = self.node_ids
        if len(ids) == 0:
            raise ValueError("graph has no nodes")
        if not np.all(np.diff(ids) > 0):
            raise ValueError("node_ids must be strictly increasing")
        n = len(ids)
        for name in ("positions", "cloud_tag", "class_ids", "geometric_class",
                     "normals", "curvature", "degenerate"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} length mismatch")
        intra = self.intra_edges.reshape(-1, 2)
        cand = self.candidate_edges.reshape(-1, 2)
        object.__setattr__(self, "intra_edges", _freeze(intra.astype(np.int64)))
        object.__setattr__(self, "candidate_edges", _freeze(cand.astype(np.int64)))
        if len(intra):
            rows = self.rows_of(self.intra_edges)
            if not np.all(self.cloud_tag[rows[:, 0]] == self.cloud_tag[rows[:, 1]]):
                raise ValueError("intra edge joins different clouds")
        if len(cand):
            rows = self.rows_of(self.candidate_edges)
            if not (np.all(self.cloud_tag[rows[:, 0]] == 0)
                    and np.all(self.cloud_tag[rows[:, 1]] == 1)):
                raise ValueError("candidate edge must go from cloud t to cloud t+1")
            if not np.all(self.class_ids[rows[:, 0]] == self.class_ids[rows[:, 1]]):
                raise ValueError("candidate edge joins different semantic classes")
            if not np.all(self.geometric_class[rows[:, 0]] == self.geometric_class[rows[:, 1]]):
                raise ValueError("candidate edge joins different geometric classes")

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)

    def rows_of(self, ids: np.ndarray) -> np.ndarray:
        """Row indices of the given node ids (ids must exist in the graph)."""
        ids = np.asarray(ids)
        rows = np.searchsorted(self.node_ids, ids)
        if np.any(rows >= len(self.node_ids)) or np.any(self.node_ids[rows] != ids):
            raise KeyError("unknown node id")
        return rows


def _intra_edges_for_cloud(positions: np.ndarray, labels: np.ndarray,
                           radius: float, id_offset: int) -> np.ndarray:
    tree = cKDTree(positions)
    pairs = tree.query_pairs(radius, output_type="ndarray")
    if len(pairs) == 0:
        return np.empty((0, 2), dtype=np.int64)
    same = labels[pairs[:, 0]] == labels[pairs[:, 1]]
    pairs = pairs[same].astype(np.int64) + id_offset
    order = np.lexsort((pairs[:, 1], pairs[:, 0]))
    return pairs[order]


def _candidate_edges(pos_t, labels_t, geom_t, pos_t1, labels_t1, geom_t1,
                     max_candidates: int, max_distance: float,
                     id_offset: int) -> np.ndarray:
    edges: list[tuple[int, int]] = []
    groups = {(int(c), int(g)) for c, g in zip(labels_t, geom_t)}
    for cls, geo in sorted(groups):
        tgt_mask = (labels_t1 == cls) & (geom_t1 == geo)
        if not tgt_mask.any():
            continue
        tgt_idx = np.nonzero(tgt_mask)[0]
        tree = cKDTree(pos_t1[tgt_idx])
        src_idx = np.nonzero((labels_t == cls) & (geom_t == geo))[0]
        hits = tree.query_ball_point(pos_t[src_idx], max_distance)
        for s, local in zip(src_idx, hits):
            if not local:
                continue
            tgts = tgt_idx[np.asarray(local)]
            dists = np.linalg.norm(pos_t1[tgts] - pos_t[s], axis=1)
            order = np.lexsort((tgts, dists))[:max_candidates]
            edges.extend((int(s), int(t) + id_offset) for t in tgts[order])
    if not edges:
        raise InsufficientCandidatesError("no registration candidates")
    arr = np.asarray(edges, dtype=np.int64)
    return arr[np.lexsort((arr[:, 1], arr[:, 0]))]


def build_graph(cloud_t: LabeledCloud, cloud_t1: LabeledCloud, params: GraphParams,
                geometry_t: PointGeometry | None = None,
                geometry_t1: PointGeometry | None = None) -> SemanticGraph:
    """Assemble the semantic graph for one consecutive cloud pair."""
    for cloud in (cloud_t, cloud_t1):
        if len(cloud) == 0:
            raise ValueError("empty cloud")
        if cloud.labels is None:
            raise ValueError("cloud has no labels")
    if geometry_t is None:
        geometry_t = classify_geometry(cloud_t, params.neighbor_count,
                                       params.line_ratio, params.curvature_threshold)
    if geometry_t1 is None:
        geometry_t1 = classify_geometry(cloud_t1, params.neighbor_count,
                                        params.line_ratio, params.curvature_threshold)
    n_t = len(cloud_t)
    intra = np.vstack([
        _intra_edges_for_cloud(cloud_t.positions, cloud_t.labels, params.intra_radius, 0),
        _intra_edges_for_cloud(cloud_t1.positions, cloud_t1.labels, params.intra_radius, n_t),
    ])
    cand = _candidate_edges(cloud_t.positions, cloud_t.labels, geometry_t.geometric_class,
                            cloud_t1.positions, cloud_t1.labels, geometry_t1.geometric_class,
                            params.max_candidates, params.max_distance, n_t)
    return SemanticGraph(
        node_ids=np.arange(n_t + len(cloud_t1), dtype=np.int64),
        positions=np.vstack([cloud_t.positions, cloud_t1.positions]),
        cloud_tag=np.concatenate([np.zeros(n_t, np.uint8), np.ones(len(cloud_t1), np.uint8)]),
        class_ids=np.concatenate([cloud_t.labels, cloud_t1.labels]),
        geometric_class=np.concatenate([geometry_t.geometric_class,
                                        geometry_t1.geometric_class]),
        normals=np.vstack([geometry_t.normals, geometry_t1.normals]),
        curvature=np.concatenate([geometry_t.curvature, geometry_t1.curvature]),
        degenerate=np.concatenate([geometry_t.degenerate, geometry_t1.degenerate]),
        intra_edges=intra,
        candidate_edges=cand,
    )


def node_features(graph: SemanticGraph, schema: SemanticSchema) -> np.ndarray:
    """Per-node feature rows: position, normal, curvature, one-hot class, corner flag."""
    lut = np.full(2**16, -1, dtype=np.int64)
    for pos, cid in enumerate(schema.ids):
        lut[cid] = pos
    hot_idx = lut[graph.class_ids]
    if np.any(hot_idx < 0):
        bad = int(graph.class_ids[int(np.argmax(hot_idx < 0))])
        raise ValueError(f"class id {bad} not in schema")
    one_hot = np.zeros((graph.n_nodes, len(schema)))
    one_hot[np.arange(graph.n_nodes), hot_idx] = 1.0
    return np.column_stack([
        graph.positions,
        graph.normals,
        graph.curvature,
        one_hot,
        (graph.geometric_class == GeometricClass.CORNER).astype(np.float64),
    ])


def write_edge_list(graph: SemanticGraph, path) -> None:
    """Debug dump: one edge per line, tagged intra/candidate."""
    with open(path, "w") as fh:
        for i, j in graph.intra_edges:
            fh.write(f"intra {i} {j}\n")
        for i, j in graph.candidate_edges:
            fh.write(f"candidate {i} {j}\n")
