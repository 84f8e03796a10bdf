"""Class ranking by attention and semantically-informed perturbation masks.

Masking comes in two flavors that share the same resolved sets:

  * node masking removes the set's points from the already-built graph
    (attention must then be recomputed on the masked graph);
  * edge masking zeroes the set's candidate-edge weights in an existing
    assignment without touching the graph or renormalizing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import AttentionAssignment
from .errors import InsufficientCandidatesError
from .graph import GeometricClass, SemanticGraph

SINGLE_LABELS = ("1st-class", "2nd-class", "3rd-class")
TAXONOMY_LABELS = SINGLE_LABELS + ("top-3", "top-5", "random-3", "corner", "surface")


@dataclass(frozen=True)
class ClassTotals:
    """Raw per-class aggregates behind a ranking entry."""

    mass: float            # summed attention over edges whose source has the class
    node_count: int        # cloud-t nodes of the class
    sources_with_edges: int  # cloud-t nodes of the class with >= 1 candidate

    def merged(self, other: "ClassTotals") -> "ClassTotals":
        return ClassTotals(self.mass + other.mass,
                           self.node_count + other.node_count,
                           self.sources_with_edges + other.sources_with_edges)


@dataclass(frozen=True)
class ClassRanking:
    """Classes ordered by average attention, descending; ties recorded."""

    entries: tuple[tuple[int, float], ...]
    counts: tuple[int, ...] | None = None
    tie_groups: tuple[tuple[int, ...], ...] = ()

    def __post_init__(self):
        for cid, avg in self.entries:
            if not np.isfinite(avg) or avg < 0:
                raise ValueError(f"class {cid}: average attention must be finite and >= 0")
        if self.counts is not None and len(self.counts) != len(self.entries):
            raise ValueError("counts not aligned with entries")

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def class_ids(self) -> tuple[int, ...]:
        return tuple(cid for cid, _ in self.entries)

    def top(self, k: int) -> tuple[int, ...]:
        return self.class_ids[:k]

    @classmethod
    def from_averages(cls, averages, counts=None) -> "ClassRanking":
        """Order (class_id, average) pairs descending, smaller id first on ties."""
        items = [(int(cid), float(avg)) for cid, avg in averages]
        count_by_id = None
        if counts is not None:
            count_by_id = {int(cid): int(c) for (cid, _), c in zip(items, counts)}
        items.sort(key=lambda item: (-item[1], item[0]))
        ties = []
        start = 0
        for i in range(1, len(items) + 1):
            if i == len(items) or items[i][1] != items[start][1]:
                if i - start > 1:
                    ties.append(tuple(cid for cid, _ in items[start:i]))
                start = i
        ordered_counts = (tuple(count_by_id[cid] for cid, _ in items)
                          if count_by_id is not None else None)
        return cls(tuple(items), ordered_counts, tuple(ties))


def class_attention_totals(attention: AttentionAssignment,
                           graph: SemanticGraph) -> dict[int, ClassTotals]:
    """Per-class attention mass and node counts for one frame pair."""
    if not np.array_equal(attention.edges, graph.candidate_edges):
        raise ValueError("attention is not aligned with the graph's candidate edges")
    src_rows = graph.rows_of(graph.candidate_edges[:, 0]) if len(attention) else np.empty(0, int)
    cloud_t = graph.cloud_tag == 0
    totals: dict[int, ClassTotals] = {}
    for cid in np.unique(graph.class_ids[cloud_t]):
        cid = int(cid)
        member_rows = np.nonzero(cloud_t & (graph.class_ids == cid))[0]
        edge_mask = graph.class_ids[src_rows] == cid if len(attention) else np.empty(0, bool)
        mass = float(attention.weights[edge_mask].sum())
        n_sources = int(len(np.unique(src_rows[edge_mask]))) if edge_mask.any() else 0
        totals[cid] = ClassTotals(mass, int(len(member_rows)), n_sources)
    return totals


def merge_totals(per_pair: list[dict[int, ClassTotals]]) -> dict[int, ClassTotals]:
    merged: dict[int, ClassTotals] = {}
    for totals in per_pair:
        for cid, t in totals.items():
            merged[cid] = merged[cid].merged(t) if cid in merged else t
    return merged


def ranking_from_totals(totals: dict[int, ClassTotals]) -> ClassRanking:
    """Averages are attention mass normalized by the class's point count.

    Classes none of whose cloud-t points carry a candidate edge are omitted.
    """
    kept = {cid: t for cid, t in totals.items() if t.sources_with_edges > 0}
    if not kept:
        raise ValueError("no class has candidate-edge attention")
    pairs = [(cid, t.mass / t.node_count) for cid, t in kept.items()]
    counts = [kept[cid].node_count for cid, _ in pairs]
    return ClassRanking.from_averages(pairs, counts)


def rank_classes(attention: AttentionAssignment, graph: SemanticGraph) -> ClassRanking:
    if len(attention) == 0:
        raise ValueError("empty attention assignment")
    return ranking_from_totals(class_attention_totals(attention, graph))


@dataclass(frozen=True)
class MaskingSet:
    """A resolved perturbation target: node ids plus candidate-edge positions."""

    label: str
    kind: str  # "single" | "topk" | "random" | "geometric"
    class_ids: tuple[int, ...]
    geometric: GeometricClass | None
    node_ids: np.ndarray   # sorted node ids to remove (both clouds)
    edge_ids: np.ndarray   # sorted positions into candidate_edges (source in set)
    seed: int | None = None

    def __post_init__(self):
        node_ids = np.ascontiguousarray(np.asarray(self.node_ids, dtype=np.int64).reshape(-1))
        edge_ids = np.ascontiguousarray(np.asarray(self.edge_ids, dtype=np.int64).reshape(-1))
        node_ids.flags.writeable = False
        edge_ids.flags.writeable = False
        object.__setattr__(self, "node_ids", node_ids)
        object.__setattr__(self, "edge_ids", edge_ids)


def _resolve(label: str, kind: str, graph: SemanticGraph,
             class_ids: tuple[int, ...] = (),
             geometric: GeometricClass | None = None,
             seed: int | None = None) -> MaskingSet:
    if geometric is not None:
        member = graph.geometric_class == int(geometric)
    else:
        member = np.isin(graph.class_ids, np.asarray(class_ids, dtype=graph.class_ids.dtype))
    node_ids = graph.node_ids[member]
    src_rows = graph.rows_of(graph.candidate_edges[:, 0])
    edge_ids = np.nonzero(member[src_rows])[0]
    return MaskingSet(label, kind, tuple(sorted(class_ids)), geometric,
                      node_ids, edge_ids, seed)


def resolve_class_set(label: str, class_ids, graph: SemanticGraph) -> MaskingSet:
    """Ad-hoc class-based set, resolved against the given graph."""
    return _resolve(label, "single" if len(tuple(class_ids)) == 1 else "topk",
                    graph, tuple(int(c) for c in class_ids))


def build_masking_sets(ranking: ClassRanking, graph: SemanticGraph,
                       seed: int) -> list[MaskingSet]:
    """The full perturbation taxonomy, resolved against one graph.

    Emits the 1st/2nd/3rd single-class sets, top-3, top-5, a seeded random
    draw of up to 3 classes outside the top 3, plus the corner and surface
    sets. Sets whose class requirements exceed the ranking are skipped;
    compare against TAXONOMY_LABELS to see what was omitted.
    """
    if len(ranking) < 2:
        raise ValueError("need at least 2 ranked classes to build masking sets")
    ranked = ranking.class_ids
    sets: list[MaskingSet] = []
    for idx, label in enumerate(SINGLE_LABELS):
        if len(ranked) > idx:
            sets.append(_resolve(label, "single", graph, (ranked[idx],)))
    if len(ranked) >= 3:
        sets.append(_resolve("top-3", "topk", graph, ranked[:3]))
    if len(ranked) >= 5:
        sets.append(_resolve("top-5", "topk", graph, ranked[:5]))
    pool = ranked[3:]
    take = min(3, len(pool))
    if take >= 1:
        rng = np.random.default_rng(seed)
        chosen = tuple(pool[i] for i in rng.choice(len(pool), size=take, replace=False))
        sets.append(_resolve("random-3", "random", graph, chosen, seed=seed))
    sets.append(_resolve("corner", "geometric", graph, geometric=GeometricClass.CORNER))
    sets.append(_resolve("surface", "geometric", graph, geometric=GeometricClass.SURFACE))
    return sets


def apply_node_mask(graph: SemanticGraph, mset: MaskingSet) -> SemanticGraph:
    """New graph without the masked nodes or any edge touching them.

    Surviving nodes keep their original ids and edge order is preserved, so
    masked candidate edges can be compared against the unmasked universe.
    The input graph is not modified.
    """
    removed = np.isin(graph.node_ids, mset.node_ids)
    keep_ids = graph.node_ids[~removed]
    intra = graph.intra_edges
    intra_keep = (np.isin(intra[:, 0], keep_ids) & np.isin(intra[:, 1], keep_ids)
                  if len(intra) else np.empty(0, bool))
    cand = graph.candidate_edges
    cand_keep = (np.isin(cand[:, 0], keep_ids) & np.isin(cand[:, 1], keep_ids)
                 if len(cand) else np.empty(0, bool))
    if len(cand) and not cand_keep.any():
        raise InsufficientCandidatesError(
            f"insufficient registration points after masking {mset.label!r}")
    keep_rows = ~removed
    return SemanticGraph(
        node_ids=keep_ids,
        positions=graph.positions[keep_rows],
        cloud_tag=graph.cloud_tag[keep_rows],
        class_ids=graph.class_ids[keep_rows],
        geometric_class=graph.geometric_class[keep_rows],
        normals=graph.normals[keep_rows],
        curvature=graph.curvature[keep_rows],
        degenerate=graph.degenerate[keep_rows],
        intra_edges=intra[intra_keep] if len(intra) else intra,
        candidate_edges=cand[cand_keep] if len(cand) else cand,
    )


def apply_edge_mask(attention: AttentionAssignment, mset: MaskingSet) -> AttentionAssignment:
    """Copy of the assignment with the set's edge weights zeroed exactly.

    No renormalization happens here: remaining weights are untouched and the
    graph is not altered. Registration fails downstream if everything is
    zeroed.
    """
    if len(mset.edge_ids) and (mset.edge_ids.min() < 0
                               or mset.edge_ids.max() >= len(attention)):
        raise ValueError("edge ids outside the assignment")
    weights = attention.weights.copy()
    weights[mset.edge_ids] = 0.0
    return AttentionAssignment(attention.edges, weights, attention.head_count,
                               attention.layer)
