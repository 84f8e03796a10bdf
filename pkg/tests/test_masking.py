import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_graph
from semattn.attention import AttentionAssignment, surrogate_attention
from semattn.errors import InsufficientCandidatesError
from semattn.graph import GeometricClass, GraphParams, build_graph, node_features
from semattn.masking import (SINGLE_LABELS, TAXONOMY_LABELS, ClassRanking,
                             apply_edge_mask, apply_node_mask, build_masking_sets,
                             class_attention_totals, rank_classes, resolve_class_set)
from semattn.synthetic import (SceneConfig, default_scene_classes,
                               generate_synthetic_scene, scene_schema, yaw_pose)


def three_class_fixture():
    """Two sources per class; hand-chosen weights on six candidate edges."""
    graph = make_graph(
        [[0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0], [4, 0, 0], [5, 0, 0]],
        [[0, 0, 1], [1, 0, 1], [2, 0, 1], [3, 0, 1], [4, 0, 1], [5, 0, 1]],
        [1, 1, 2, 2, 3, 3], [1, 1, 2, 2, 3, 3],
        candidate_edges=[[0, 6], [1, 7], [2, 8], [3, 9], [4, 10], [5, 11]],
        intra_edges=[[0, 1], [2, 3]],
    )
    weights = np.array([1.0, 1.0, 0.8, 0.6, 0.2, 0.1])
    return graph, AttentionAssignment(graph.candidate_edges, weights)


class TestRankClasses:
    def test_three_class_brute_force_oracle(self):
        graph, attn = three_class_fixture()
        ranking = rank_classes(attn, graph)
        # oracle: sum weights by source class / count of cloud-t class points
        expected = {}
        src_rows = graph.rows_of(graph.candidate_edges[:, 0])
        for cid in (1, 2, 3):
            mask = graph.class_ids[src_rows] == cid
            n_nodes = int(((graph.cloud_tag == 0) & (graph.class_ids == cid)).sum())
            expected[cid] = attn.weights[mask].sum() / n_nodes
        assert dict(ranking.entries) == pytest.approx(expected)
        assert ranking.class_ids == (1, 2, 3)  # 1.0 > 0.7 > 0.15
        assert ranking.counts == (2, 2, 2)

    def test_single_class_ranks_first_with_mean_alpha(self):
        graph = make_graph([[0, 0, 0], [1, 0, 0]], [[0, 0, 1], [1, 0, 1]],
                           [1, 1], [1, 1], candidate_edges=[[0, 2], [1, 3]])
        attn = AttentionAssignment(graph.candidate_edges, np.array([1.0, 1.0]))
        ranking = rank_classes(attn, graph)
        assert ranking.entries == ((1, 1.0),)

    def test_class_without_candidates_is_omitted(self):
        graph = make_graph([[0, 0, 0], [9, 9, 9]], [[0, 0, 1]], [1, 2], [1],
                           candidate_edges=[[0, 2]])
        attn = AttentionAssignment(graph.candidate_edges, np.array([1.0]))
        ranking = rank_classes(attn, graph)
        assert ranking.class_ids == (1,)

    def test_empty_attention_rejected(self):
        graph, _ = three_class_fixture()
        empty = AttentionAssignment(np.empty((0, 2), np.int64), np.empty(0))
        with pytest.raises(ValueError, match="empty attention"):
            rank_classes(empty, graph)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0.01, 100.0))
    def test_scaling_weights_preserves_ordering(self, scale):
        graph, attn = three_class_fixture()
        base = rank_classes(attn, graph)
        scaled = rank_classes(
            AttentionAssignment(attn.edges, attn.weights * scale), graph)
        assert scaled.class_ids == base.class_ids


class TestClassRankingFromAverages:
    def test_descending_order(self):
        ranking = ClassRanking.from_averages([(3, 0.2), (1, 0.9), (2, 0.5)])
        assert ranking.class_ids == (1, 2, 3)

    def test_tie_broken_by_class_id_and_recorded(self):
        ranking = ClassRanking.from_averages([(7, 0.4), (2, 0.4), (1, 0.9)])
        assert ranking.class_ids == (1, 2, 7)
        assert ranking.tie_groups == ((2, 7),)

    def test_negative_average_rejected(self):
        with pytest.raises(ValueError, match=">= 0"):
            ClassRanking.from_averages([(1, -0.1), (2, 0.5)])


class TestBuildMaskingSets:
    def make_ranked_graph(self, n_classes=5, seed=0):
        cfg = SceneConfig(classes=default_scene_classes(n_classes), sigma=0.01,
                          extent=8.0, step=yaw_pose(1, (0.1, 0, 0)), resample=True)
        cloud_t, cloud_t1, _ = generate_synthetic_scene(cfg, seed=seed)
        graph = build_graph(cloud_t, cloud_t1,
                            GraphParams(intra_radius=1.0, max_distance=1.0))
        feats = node_features(graph, scene_schema(cfg))
        attn = surrogate_attention(graph, feats, 0.5)
        return graph, attn, rank_classes(attn, graph)

    def test_five_class_ranking_yields_eight_sets(self):
        graph, _, ranking = self.make_ranked_graph(5)
        assert len(ranking) == 5
        sets = build_masking_sets(ranking, graph, seed=1)
        assert len(sets) == 8
        assert [m.label for m in sets] == list(TAXONOMY_LABELS)

    def test_random3_deterministic_given_seed(self):
        graph, _, ranking = self.make_ranked_graph(7)
        a = build_masking_sets(ranking, graph, seed=5)
        b = build_masking_sets(ranking, graph, seed=5)
        ra = next(m for m in a if m.kind == "random")
        rb = next(m for m in b if m.kind == "random")
        assert ra.class_ids == rb.class_ids

    def test_random3_excludes_top3(self):
        graph, _, ranking = self.make_ranked_graph(7)
        for seed in range(10):
            sets = build_masking_sets(ranking, graph, seed=seed)
            rnd = next(m for m in sets if m.kind == "random")
            assert not set(rnd.class_ids) & set(ranking.top(3))

    def test_resolved_node_ids_equal_label_filter(self):
        graph, _, ranking = self.make_ranked_graph(5)
        for mset in build_masking_sets(ranking, graph, seed=2):
            if mset.geometric is not None:
                expected = graph.node_ids[graph.geometric_class == int(mset.geometric)]
            else:
                expected = graph.node_ids[np.isin(graph.class_ids, mset.class_ids)]
            assert np.array_equal(mset.node_ids, expected)
            src_rows = graph.rows_of(graph.candidate_edges[:, 0])
            if mset.geometric is not None:
                edge_expected = np.nonzero(
                    graph.geometric_class[src_rows] == int(mset.geometric))[0]
            else:
                edge_expected = np.nonzero(
                    np.isin(graph.class_ids[src_rows], mset.class_ids))[0]
            assert np.array_equal(mset.edge_ids, edge_expected)

    def test_three_ranked_classes_skips_infeasible_sets(self):
        graph, attn = three_class_fixture()
        ranking = rank_classes(attn, graph)
        sets = build_masking_sets(ranking, graph, seed=3)
        labels = [m.label for m in sets]
        assert labels == ["1st-class", "2nd-class", "3rd-class", "top-3",
                          "corner", "surface"]

    def test_fewer_than_two_classes_rejected(self):
        graph, attn = three_class_fixture()
        ranking = ClassRanking.from_averages([(1, 0.5)])
        with pytest.raises(ValueError, match="at least 2"):
            build_masking_sets(ranking, graph, seed=0)


class TestApplyNodeMask:
    def test_empty_set_is_byte_level_noop(self):
        graph, attn = three_class_fixture()
        empty = resolve_class_set("none", (9,), graph)
        masked = apply_node_mask(graph, empty)
        assert masked.node_ids.tobytes() == graph.node_ids.tobytes()
        assert masked.intra_edges.tobytes() == graph.intra_edges.tobytes()
        assert masked.candidate_edges.tobytes() == graph.candidate_edges.tobytes()
        assert masked.positions.tobytes() == graph.positions.tobytes()

    def test_masking_every_class_errors(self):
        graph, attn = three_class_fixture()
        full = resolve_class_set("all", (1, 2, 3), graph)
        with pytest.raises(InsufficientCandidatesError,
                           match="insufficient registration points"):
            apply_node_mask(graph, full)

    def test_survivors_match_edge_filter_oracle(self):
        graph, attn = three_class_fixture()
        mset = resolve_class_set("one", (2,), graph)
        masked = apply_node_mask(graph, mset)
        removed = set(mset.node_ids.tolist())
        expected_nodes = [i for i in graph.node_ids.tolist() if i not in removed]
        assert masked.node_ids.tolist() == expected_nodes
        expected_cand = [e for e in graph.candidate_edges.tolist()
                         if e[0] not in removed and e[1] not in removed]
        assert masked.candidate_edges.tolist() == expected_cand
        expected_intra = [e for e in graph.intra_edges.tolist()
                          if e[0] not in removed and e[1] not in removed]
        assert masked.intra_edges.tolist() == expected_intra

    def test_original_graph_and_attention_untouched(self):
        graph, attn = three_class_fixture()
        before_nodes = graph.node_ids.copy()
        before_weights = attn.weights.copy()
        apply_node_mask(graph, resolve_class_set("one", (1,), graph))
        assert np.array_equal(graph.node_ids, before_nodes)
        assert np.array_equal(attn.weights, before_weights)

    def test_masked_graph_keeps_original_ids(self):
        graph, _ = three_class_fixture()
        masked = apply_node_mask(graph, resolve_class_set("one", (1,), graph))
        assert masked.node_ids.tolist() == [2, 3, 4, 5, 8, 9, 10, 11]


class TestApplyEdgeMask:
    def test_empty_set_bitwise_identical(self):
        graph, attn = three_class_fixture()
        empty = resolve_class_set("none", (9,), graph)
        masked = apply_edge_mask(attn, empty)
        assert masked.weights.tobytes() == attn.weights.tobytes()

    def test_positions_zeroed_exactly(self):
        graph, attn = three_class_fixture()
        mset = resolve_class_set("cls1", (1,), graph)
        assert mset.edge_ids.tolist() == [0, 1]
        masked = apply_edge_mask(attn, mset)
        assert masked.weights[0] == 0.0 and masked.weights[1] == 0.0
        assert np.array_equal(masked.weights[2:], attn.weights[2:])

    def test_unmasked_sum_preserved_exactly(self):
        graph, attn = three_class_fixture()
        mset = resolve_class_set("cls2", (2,), graph)
        masked = apply_edge_mask(attn, mset)
        keep = np.setdiff1d(np.arange(len(attn)), mset.edge_ids)
        assert masked.weights[keep].sum() == attn.weights[keep].sum()

    def test_no_renormalization(self):
        graph, attn = three_class_fixture()
        mset = resolve_class_set("cls3", (3,), graph)
        masked = apply_edge_mask(attn, mset)
        # remaining entries keep their exact original values
        assert np.array_equal(masked.weights[:4], attn.weights[:4])

    def test_out_of_range_edge_ids_rejected(self):
        graph, attn = three_class_fixture()
        bad = resolve_class_set("cls1", (1,), graph)
        object.__setattr__(bad, "edge_ids", np.array([99]))
        with pytest.raises(ValueError, match="outside"):
            apply_edge_mask(attn, bad)


def test_class_totals_sources_and_masses():
    graph, attn = three_class_fixture()
    totals = class_attention_totals(attn, graph)
    assert totals[1].mass == pytest.approx(2.0)
    assert totals[2].mass == pytest.approx(1.4)
    assert totals[3].mass == pytest.approx(0.30000000000000004)
    assert all(t.node_count == 2 and t.sources_with_edges == 2
               for t in totals.values())
