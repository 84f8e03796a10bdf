import numpy as np
import pytest

from conftest import make_graph, random_pose
from semattn.errors import InsufficientCandidatesError
from semattn.graph import (GeometricClass, GraphParams, SemanticGraph, build_graph,
                           classify_geometry, node_features, write_edge_list)
from semattn.synthetic import (ClassSpec, SceneConfig, generate_synthetic_scene,
                               scene_schema, yaw_pose)
from semattn.types import LabeledCloud, SemanticSchema


def labeled(points, labels, schema, t=0):
    points = np.asarray(points, dtype=np.float64)
    cloud = LabeledCloud(t, points, np.zeros(len(points)))
    return cloud.with_labels(labels, schema)


def brute_force_candidates(cloud_t, cloud_t1, geom_t, geom_t1, m, d):
    """Exhaustive all-pairs filter with the smaller-index tie-break."""
    n_t = len(cloud_t)
    edges = []
    for s in range(n_t):
        cands = []
        for t in range(len(cloud_t1)):
            if cloud_t.labels[s] != cloud_t1.labels[t]:
                continue
            if geom_t.geometric_class[s] != geom_t1.geometric_class[t]:
                continue
            dist = float(np.linalg.norm(cloud_t.positions[s] - cloud_t1.positions[t]))
            if dist <= d:
                cands.append((dist, t))
        cands.sort()
        edges.extend((s, n_t + t) for _, t in cands[:m])
    edges.sort()
    return np.asarray(edges, dtype=np.int64).reshape(-1, 2)


def brute_force_intra(cloud, radius, offset):
    edges = []
    pos = cloud.positions
    for i in range(len(pos)):
        for j in range(i + 1, len(pos)):
            if cloud.labels[i] == cloud.labels[j] and \
                    np.linalg.norm(pos[i] - pos[j]) <= radius:
                edges.append((i + offset, j + offset))
    edges.sort()
    return np.asarray(edges, dtype=np.int64).reshape(-1, 2)


class TestClassifyGeometry:
    def test_planar_points_are_surface(self, two_class_schema):
        # isotropic disk sampling: patch borders are the worst case for the
        # eigen-ratio test (half-disk neighborhoods sit at ratio ~0.28)
        i = np.arange(300)
        r = 2.0 * np.sqrt((i + 0.5) / 300)
        th = i * np.pi * (3 - np.sqrt(5))
        pts = np.column_stack([r * np.cos(th), r * np.sin(th), np.zeros(300)])
        cloud = labeled(pts, np.ones(300), two_class_schema)
        geo = classify_geometry(cloud, 30)
        assert np.all(geo.geometric_class == GeometricClass.SURFACE)
        assert np.all(geo.curvature <= 1e-9)

    def test_collinear_points_are_corner(self, two_class_schema):
        t = np.linspace(0, 4, 60)
        pts = np.column_stack([t, 2 * t, 3 * t])
        cloud = labeled(pts, np.ones(60), two_class_schema)
        geo = classify_geometry(cloud, 10)
        assert np.all(geo.geometric_class == GeometricClass.CORNER)

    def test_coincident_neighborhood_flagged_surface(self, two_class_schema):
        pts = np.zeros((20, 3))
        cloud = labeled(pts, np.ones(20), two_class_schema)
        geo = classify_geometry(cloud, 10)
        assert np.all(geo.degenerate)
        assert np.all(geo.geometric_class == GeometricClass.SURFACE)
        assert np.all(geo.curvature == 0.0)

    def test_generator_truth_agreement(self):
        # one plane plus one post: classification should match the generator
        classes = (ClassSpec(1, "plane", "plane", 1, 150),
                   ClassSpec(2, "post", "post", 1, 40))
        cfg = SceneConfig(classes=classes, sigma=0.0, extent=8.0, resample=False)
        cloud, _, _ = generate_synthetic_scene(cfg, seed=2)
        geo = classify_geometry(cloud, 10)
        expected = np.where(cloud.labels == 2, GeometricClass.CORNER,
                            GeometricClass.SURFACE)
        agreement = np.mean(geo.geometric_class == expected)
        assert agreement >= 0.95

    def test_too_few_points_rejected(self, two_class_schema):
        cloud = labeled(np.random.default_rng(1).uniform(0, 1, (5, 3)),
                        np.ones(5), two_class_schema)
        with pytest.raises(ValueError, match="need >="):
            classify_geometry(cloud, 10)

    def test_small_k_rejected(self, two_class_schema):
        cloud = labeled(np.random.default_rng(1).uniform(0, 1, (30, 3)),
                        np.ones(30), two_class_schema)
        with pytest.raises(ValueError, match=">= 3"):
            classify_geometry(cloud, 2)

    def test_normals_unit_and_deterministically_oriented(self, two_class_schema):
        rng = np.random.default_rng(3)
        pts = rng.uniform(-3, 3, (100, 3))
        cloud = labeled(pts, np.ones(100), two_class_schema)
        a = classify_geometry(cloud, 10)
        b = classify_geometry(cloud, 10)
        assert np.array_equal(a.normals, b.normals)
        norms = np.linalg.norm(a.normals, axis=1)
        assert np.allclose(norms[~a.degenerate], 1.0, atol=1e-12)
        lead = np.take_along_axis(a.normals, np.abs(a.normals).argmax(axis=1)[:, None], 1)
        assert np.all(lead[~a.degenerate] >= 0)


class TestBuildGraph:
    def make_pair(self, seed=4, n=120, sigma=0.0):
        classes = (ClassSpec(1, "ground", "plane", 2, n // 3),
                   ClassSpec(2, "wall", "plane", 1, n // 3),
                   ClassSpec(3, "post", "post", 2, n // 6))
        cfg = SceneConfig(classes=classes, sigma=sigma, extent=6.0,
                          step=yaw_pose(2.0, (0.1, 0.0, 0.0)), resample=False)
        cloud_t, cloud_t1, _ = generate_synthetic_scene(cfg, seed=seed)
        return cloud_t, cloud_t1, scene_schema(cfg)

    def test_identical_clouds_nearest_candidate_is_own_copy(self, two_class_schema):
        rng = np.random.default_rng(5)
        pts = rng.uniform(-4, 4, (60, 3))
        cloud_t = labeled(pts, np.ones(60), two_class_schema, t=0)
        cloud_t1 = labeled(pts, np.ones(60), two_class_schema, t=1)
        params = GraphParams(max_distance=100.0, max_candidates=3)
        graph = build_graph(cloud_t, cloud_t1, params)
        edges = {(int(i), int(j)) for i, j in graph.candidate_edges}
        rows = graph.rows_of(graph.candidate_edges)
        dists = np.linalg.norm(graph.positions[rows[:, 0]] - graph.positions[rows[:, 1]],
                               axis=1)
        for s in range(60):
            assert (s, s + 60) in edges  # the zero-distance copy is selected
            mask = graph.candidate_edges[:, 0] == s
            nearest = graph.candidate_edges[mask][np.argmin(dists[mask]), 1]
            assert nearest == s + 60

    def test_disjoint_classes_error(self, two_class_schema):
        rng = np.random.default_rng(6)
        cloud_t = labeled(rng.uniform(-2, 2, (30, 3)), np.ones(30), two_class_schema)
        cloud_t1 = labeled(rng.uniform(-2, 2, (30, 3)), np.full(30, 2),
                           two_class_schema, t=1)
        with pytest.raises(InsufficientCandidatesError, match="no registration candidates"):
            build_graph(cloud_t, cloud_t1, GraphParams(max_distance=100.0))

    def test_candidates_match_brute_force(self):
        cloud_t, cloud_t1, _ = self.make_pair()
        params = GraphParams(neighbor_count=8, intra_radius=0.9,
                             max_candidates=4, max_distance=1.1)
        geo_t = classify_geometry(cloud_t, 8)
        geo_t1 = classify_geometry(cloud_t1, 8)
        graph = build_graph(cloud_t, cloud_t1, params, geo_t, geo_t1)
        expected = brute_force_candidates(cloud_t, cloud_t1, geo_t, geo_t1,
                                          params.max_candidates, params.max_distance)
        assert np.array_equal(graph.candidate_edges, expected)

    def test_intra_edges_match_brute_force(self):
        cloud_t, cloud_t1, _ = self.make_pair(n=90)
        params = GraphParams(neighbor_count=8, intra_radius=0.8, max_distance=1.2)
        graph = build_graph(cloud_t, cloud_t1, params)
        expected = np.vstack([brute_force_intra(cloud_t, 0.8, 0),
                              brute_force_intra(cloud_t1, 0.8, len(cloud_t))])
        assert np.array_equal(graph.intra_edges, expected)

    def test_every_candidate_satisfies_constraints(self):
        cloud_t, cloud_t1, _ = self.make_pair(seed=7, sigma=0.01)
        params = GraphParams(max_distance=1.0)
        graph = build_graph(cloud_t, cloud_t1, params)
        rows = graph.rows_of(graph.candidate_edges)
        dist = np.linalg.norm(graph.positions[rows[:, 0]] - graph.positions[rows[:, 1]],
                              axis=1)
        assert dist.max() <= params.max_distance
        counts = np.bincount(graph.candidate_edges[:, 0])
        assert counts.max() <= params.max_candidates

    def test_deterministic(self):
        cloud_t, cloud_t1, _ = self.make_pair(seed=8)
        params = GraphParams()
        a = build_graph(cloud_t, cloud_t1, params)
        b = build_graph(cloud_t, cloud_t1, params)
        assert np.array_equal(a.candidate_edges, b.candidate_edges)
        assert np.array_equal(a.intra_edges, b.intra_edges)

    def test_topology_invariant_under_rigid_motion(self):
        cloud_t, cloud_t1, schema = self.make_pair(seed=9)
        params = GraphParams(intra_radius=0.9, max_distance=1.1)
        base = build_graph(cloud_t, cloud_t1, params)
        pose = random_pose(np.random.default_rng(10), max_translation=3.0)
        moved_t = LabeledCloud(0, pose.apply(cloud_t.positions),
                               cloud_t.intensities, cloud_t.labels)
        moved_t1 = LabeledCloud(1, pose.apply(cloud_t1.positions),
                                cloud_t1.intensities, cloud_t1.labels)
        moved = build_graph(moved_t, moved_t1, params)
        assert np.array_equal(base.candidate_edges, moved.candidate_edges)
        assert np.array_equal(base.intra_edges, moved.intra_edges)

    def test_validation_rejects_cross_class_candidates(self):
        with pytest.raises(ValueError, match="semantic classes"):
            make_graph([[0, 0, 0]], [[0, 0, 0]], [1], [2], candidate_edges=[[0, 1]])

    def test_validation_rejects_same_cloud_candidates(self):
        with pytest.raises(ValueError, match="cloud t"):
            make_graph([[0, 0, 0], [1, 0, 0]], [[0, 0, 0]], [1, 1], [1],
                       candidate_edges=[[1, 0]])


class TestNodeFeatures:
    def test_one_hot_encoding(self):
        schema = SemanticSchema(((5, "a"), (6, "b"), (7, "c")))
        graph = make_graph([[0, 0, 0]], [[1, 0, 0]], [6], [6],
                           candidate_edges=[[0, 1]])
        feats = node_features(graph, schema)
        assert feats.shape == (2, 8 + 3)
        assert list(feats[0, 7:10]) == [0.0, 1.0, 0.0]

    def test_geometric_flag(self):
        schema = SemanticSchema(((1, "a"), (2, "b")))
        graph = make_graph([[0, 0, 0]], [[1, 0, 0]], [1], [1],
                           geom_t=[GeometricClass.CORNER],
                           geom_t1=[GeometricClass.SURFACE])
        feats = node_features(graph, schema)
        assert feats[0, -1] == 1.0 and feats[1, -1] == 0.0

    def test_full_vector_matches_hand_computed(self):
        schema = SemanticSchema(((1, "a"), (2, "b")))
        graph = make_graph([[1.0, 2.0, 3.0]], [[4.0, 5.0, 6.0]], [2], [2],
                           geom_t=[GeometricClass.CORNER], geom_t1=[GeometricClass.CORNER],
                           normals_t=[[0.0, 1.0, 0.0]], normals_t1=[[1.0, 0.0, 0.0]],
                           curvature_t=[0.25], curvature_t1=[0.5],
                           candidate_edges=[[0, 1]])
        feats = node_features(graph, schema)
        hand = [1.0, 2.0, 3.0, 0.0, 1.0, 0.0, 0.25, 0.0, 1.0, 1.0]
        assert list(feats[0]) == hand

    def test_unknown_class_rejected(self):
        schema = SemanticSchema(((1, "a"), (2, "b")))
        graph = make_graph([[0, 0, 0]], [[0, 0, 0]], [3], [3],
                           candidate_edges=[[0, 1]])
        with pytest.raises(ValueError, match="class id 3"):
            node_features(graph, schema)


def test_edge_list_dump(tmp_path):
    graph = make_graph([[0, 0, 0], [1, 0, 0]], [[0, 0, 1]], [1, 1], [1],
                       candidate_edges=[[0, 2], [1, 2]], intra_edges=[[0, 1]])
    path = tmp_path / "edges.txt"
    write_edge_list(graph, path)
    lines = path.read_text().splitlines()
    assert lines == ["intra 0 1", "candidate 0 2", "candidate 1 2"]
