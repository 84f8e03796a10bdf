"""Divergence and discrepancy metrics that tie attention to pose accuracy.

Perturbed attention is compared to the unperturbed run on a fixed edge
universe (the unmasked graph's candidate edges): edges removed by node
masking or zeroed by edge masking get probability zero, everything else is
renormalized. The Jensen-Shannon distance between those distributions uses
base-2 logarithms so it is bounded in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .attention import AttentionAssignment
from .errors import ConfidenceLossError, EstimationError
from .graph import SemanticGraph
from .registration import PoseError

NORMALIZATION_TOL = 1e-9


@dataclass(frozen=True)
class EdgeUniverse:
    """Fixed, ordered candidate-edge index space shared by compared runs."""

    edges: np.ndarray  # (u, 2) int64
    _index: dict[tuple[int, int], int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        edges = np.ascontiguousarray(np.asarray(self.edges, dtype=np.int64).reshape(-1, 2))
        edges.flags.writeable = False
        object.__setattr__(self, "edges", edges)
        index = {(int(i), int(j)): pos for pos, (i, j) in enumerate(edges)}
        if len(index) != len(edges):
            raise ValueError("duplicate edges in universe")
        object.__setattr__(self, "_index", index)

    @classmethod
    def from_graph(cls, graph: SemanticGraph) -> "EdgeUniverse":
        return cls(graph.candidate_edges)

    def __len__(self) -> int:
        return len(self.edges)

    def positions_of(self, edges: np.ndarray) -> np.ndarray:
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        try:
            return np.fromiter((self._index[(int(i), int(j))] for i, j in edges),
                               dtype=np.int64, count=len(edges))
        except KeyError as exc:
            raise ValueError(f"edge {exc.args[0]} not in universe") from exc


@dataclass(frozen=True)
class AttentionDistribution:
    probabilities: np.ndarray  # (u,) float64, >= 0, sums to 1
    universe: EdgeUniverse

    def __post_init__(self):
        probs = np.ascontiguousarray(np.asarray(self.probabilities, dtype=np.float64))
        if len(probs) != len(self.universe):
            raise ValueError("probabilities not aligned with universe")
        if probs.min() < 0:
            raise ValueError("negative probability")
        if abs(probs.sum() - 1.0) > NORMALIZATION_TOL:
            raise ValueError(f"probabilities sum to {probs.sum()}, not 1")
        probs.flags.writeable = False
        object.__setattr__(self, "probabilities", probs)


def to_distribution(attention: AttentionAssignment,
                    universe: EdgeUniverse) -> AttentionDistribution:
    """Project an assignment onto the universe and normalize.

    Universe edges absent from the assignment (node-masked away) and edges
    carrying zero weight (edge-masked) end up with probability zero.
    """
    total = float(attention.weights.sum())
    if not total > 0:
        raise ConfidenceLossError("zero total attention mass")
    probs = np.zeros(len(universe))
    probs[universe.positions_of(attention.edges)] = attention.weights
    return AttentionDistribution(probs / total, universe)


def _check_shared_universe(p: AttentionDistribution, q: AttentionDistribution) -> None:
    if p.universe is q.universe:
        return
    if not np.array_equal(p.universe.edges, q.universe.edges):
        raise ValueError("distributions live on different edge universes")


def jsd(p: AttentionDistribution, q: AttentionDistribution) -> float:
    """Jensen-Shannon distance with base-2 logs, bounded in [0, 1].

    The midpoint is the edgewise average of the two distributions; terms with
    zero probability contribute zero. The squared divergence is clamped to
    [0, 1] against floating-point overshoot before the square root.
    """
    _check_shared_universe(p, q)
    pp, qq = p.probabilities, q.probabilities
    mid = 0.5 * (pp + qq)

    def kl_vs_mid(a: np.ndarray) -> float:
        mask = a > 0  # mid > 0 wherever a > 0
        return float(np.sum(a[mask] * np.log2(a[mask] / mid[mask])))

    return float(np.sqrt(np.clip((kl_vs_mid(pp) + kl_vs_mid(qq)) / 2.0, 0.0, 1.0)))


def aad_pair(before: PoseError, after: PoseError) -> tuple[float, float]:
    """Absolute accuracy discrepancy for one frame pair: (|dRRE|, |dRTE|)."""
    return abs(before.rre - after.rre), abs(before.rte - after.rte)


def aad_sequence(pairs, failures: int = 0) -> float:
    """Combined discrepancy over a sequence: mean |dRRE| plus mean |dRTE|.

    Means run over the successful pairs only; failed pairs are counted
    separately by the caller. Units are degrees plus meters, summed as-is.
    """
    pairs = list(pairs)
    if not pairs:
        raise EstimationError(f"all {failures} frame pairs failed")
    drre = np.array([d[0] for d in pairs])
    drte = np.array([d[1] for d in pairs])
    return float(drre.mean() + drte.mean())


def pearson(xs, ys) -> float:
    """Sample Pearson correlation; NaN when either side has zero variance."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise ValueError("inputs must be equal-length 1-d sequences")
    if len(xs) < 2:
        raise ValueError("need at least 2 points")
    dx = xs - xs.mean()
    dy = ys - ys.mean()
    denom = np.sqrt(np.sum(dx * dx) * np.sum(dy * dy))
    if denom == 0:
        return float("nan")
    return float(np.sum(dx * dy) / denom)


@dataclass(frozen=True)
class DivergenceReport:
    """Per-pair JSD values (None where the cell failed) and their mean."""

    per_pair: tuple[float | None, ...]
    mean: float | None

    @classmethod
    def from_pairs(cls, values) -> "DivergenceReport":
        values = tuple(values)
        present = [v for v in values if v is not None]
        return cls(values, float(np.mean(present)) if present else None)


@dataclass(frozen=True)
class DiscrepancyReport:
    """Per-pair (|dRRE|, |dRTE|), the combined sequence AAD, failure count."""

    per_pair: tuple[tuple[float, float] | None, ...]
    combined: float | None
    failures: int

    @classmethod
    def from_pairs(cls, values) -> "DiscrepancyReport":
        values = tuple(values)
        present = [v for v in values if v is not None]
        failures = len(values) - len(present)
        combined = aad_sequence(present, failures) if present else None
        return cls(values, combined, failures)


@dataclass(frozen=True)
class CorrelationPoint:
    set_label: str
    mean_jsd: float | None
    aad: float | None


@dataclass(frozen=True)
class CorrelationReport:
    """JSD-vs-AAD scatter per masking set plus Pearson summaries."""

    points: tuple[CorrelationPoint, ...]
    single_class_r: float
    all_sets_r: float
    n_single: int
    n_all: int

    @classmethod
    def from_points(cls, points, single_labels) -> "CorrelationReport":
        points = tuple(points)

        def correlate(subset):
            usable = [(p.mean_jsd, p.aad) for p in subset
                      if p.mean_jsd is not None and p.aad is not None]
            if len(usable) < 2:
                return float("nan"), len(usable)
            xs, ys = zip(*usable)
            return pearson(xs, ys), len(usable)

        single = [p for p in points if p.set_label in single_labels]
        r_single, n_single = correlate(single)
        r_all, n_all = correlate(points)
        return cls(points, r_single, r_all, n_single, n_all)
