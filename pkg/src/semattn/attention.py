"""Attention weights over registration-candidate edges.

Two producers share one contract: a minimal multi-head graph-attention
forward pass (weights from file or synthesized, no training here) and a
deterministic surrogate that scores candidates by local-shape descriptor
similarity. Both return one weight per candidate edge, softmax-normalized
per source node, from the network's last layer.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError
from .graph import CURVATURE_COL, NORMAL_COLS, SemanticGraph

WEIGHTS_MAGIC = b"SGAW"
WEIGHTS_VERSION = 1


@dataclass(frozen=True)
class AttentionAssignment:
    """Per-candidate-edge attention, aligned with the edges it scores."""

    edges: np.ndarray    # (e, 2) int64 candidate edges
    weights: np.ndarray  # (e,) float64, finite and >= 0
    head_count: int = 1
    layer: str = "last"

    def __post_init__(self):
        edges = np.ascontiguousarray(np.asarray(self.edges, dtype=np.int64).reshape(-1, 2))
        weights = np.ascontiguousarray(np.asarray(self.weights, dtype=np.float64).reshape(-1))
        if len(edges) != len(weights):
            raise ValueError("weights are not aligned with candidate edges")
        if len(weights) and (not np.all(np.isfinite(weights)) or weights.min() < 0):
            raise ValueError("attention weights must be finite and >= 0")
        if self.head_count < 1:
            raise ValueError("head_count must be >= 1")
        edges.flags.writeable = False
        weights.flags.writeable = False
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "weights", weights)

    def __len__(self) -> int:
        return len(self.weights)


@dataclass(frozen=True)
class LayerWeights:
    w: np.ndarray  # (heads, out_dim, in_dim) float32 projection
    a: np.ndarray  # (heads, 2 * out_dim) float32 attention vector

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.float32)
        a = np.asarray(self.a, dtype=np.float32)
        if w.ndim != 3 or a.ndim != 2:
            raise ValueError("w must be (heads, out, in), a must be (heads, 2*out)")
        if a.shape[0] != w.shape[0] or a.shape[1] != 2 * w.shape[1]:
            raise ValueError(
                f"attention vector shape {a.shape} inconsistent with projection {w.shape}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(a))):
            raise ValueError("non-finite layer weights")
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "a", a)

    @property
    def heads(self) -> int:
        return self.w.shape[0]

    @property
    def out_dim(self) -> int:
        return self.w.shape[1]

    @property
    def in_dim(self) -> int:
        return self.w.shape[2]


@dataclass(frozen=True)
class ModelWeights:
    layers: tuple[LayerWeights, ...]
    leaky_slope: float = 0.2

    def __post_init__(self):
        if not self.layers:
            raise ValueError("model needs at least one layer")
        for idx in range(1, len(self.layers)):
            prev, cur = self.layers[idx - 1], self.layers[idx]
            expected = prev.heads * prev.out_dim
            if cur.in_dim != expected:
                raise ValueError(
                    f"layer {idx}: input dim {cur.in_dim} != {expected} from layer {idx - 1}")

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim


def _leaky_relu(x: np.ndarray, slope: float) -> np.ndarray:
    return np.where(x > 0, x, slope * x)


def _elu(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, x, np.expm1(x))


def _grouped_softmax(groups: np.ndarray, logits: np.ndarray) -> np.ndarray:
    """Softmax within contiguous runs of equal group ids (groups pre-sorted)."""
    _, starts = np.unique(groups, return_index=True)
    counts = np.diff(np.append(starts, len(groups)))
    maxes = np.repeat(np.maximum.reduceat(logits, starts), counts)
    expv = np.exp(logits - maxes)
    sums = np.repeat(np.add.reduceat(expv, starts), counts)
    return expv / sums


def _attention_over_edges(agg_rows: np.ndarray, nbr_rows: np.ndarray,
                          projected: np.ndarray, attn_vec: np.ndarray,
                          slope: float) -> np.ndarray:
    """One head's softmax attention, returned in the callers' edge order.

    Internally edges are processed in canonical (aggregator, neighbor) order
    so the result is independent of how the edge list is permuted.
    """
    out = projected.shape[1]
    score_agg = projected @ attn_vec[:out]
    score_nbr = projected @ attn_vec[out:]
    order = np.lexsort((nbr_rows, agg_rows))
    logits = _leaky_relu(score_agg[agg_rows[order]] + score_nbr[nbr_rows[order]], slope)
    alpha_sorted = _grouped_softmax(agg_rows[order], logits)
    alpha = np.empty_like(alpha_sorted)
    alpha[order] = alpha_sorted
    return alpha


def forward_attention(graph: SemanticGraph, features: np.ndarray,
                      weights: ModelWeights) -> AttentionAssignment:
    """Multi-head graph-attention forward pass; returns last-layer attention.

    Hidden layers aggregate over intra-cloud edges (plus a self loop so
    isolated nodes stay defined) and concatenate heads; the last layer scores
    the candidate edges per source node and averages its heads.
    """
    h = np.asarray(features, dtype=np.float64)
    if h.ndim != 2 or h.shape[0] != graph.n_nodes:
        raise ValueError("features must be one row per graph node")
    if h.shape[1] != weights.in_dim:
        raise ValueError(
            f"feature dimension {h.shape[1]} != model input dimension {weights.in_dim}")

    n = graph.n_nodes
    intra_rows = (graph.rows_of(graph.intra_edges) if len(graph.intra_edges)
                  else np.empty((0, 2), dtype=np.int64))
    self_rows = np.arange(n, dtype=np.int64)
    agg = np.concatenate([intra_rows[:, 0], intra_rows[:, 1], self_rows])
    nbr = np.concatenate([intra_rows[:, 1], intra_rows[:, 0], self_rows])
    hidden_order = np.lexsort((nbr, agg))
    agg, nbr = agg[hidden_order], nbr[hidden_order]

    for layer in weights.layers[:-1]:
        head_outputs = []
        for head in range(layer.heads):
            projected = h @ layer.w[head].astype(np.float64).T
            alpha = _attention_over_edges(agg, nbr, projected,
                                          layer.a[head].astype(np.float64),
                                          weights.leaky_slope)
            agg_out = np.zeros((n, layer.out_dim))
            np.add.at(agg_out, agg, alpha[:, None] * projected[nbr])
            head_outputs.append(agg_out)
        h = _elu(np.hstack(head_outputs))

    last = weights.layers[-1]
    if len(graph.candidate_edges) == 0:
        return AttentionAssignment(graph.candidate_edges, np.empty(0), last.heads)
    rows = graph.rows_of(graph.candidate_edges)
    src_rows, dst_rows = rows[:, 0], rows[:, 1]
    per_head = np.zeros(len(rows))
    for head in range(last.heads):
        projected = h @ last.w[head].astype(np.float64).T
        per_head += _attention_over_edges(src_rows, dst_rows, projected,
                                          last.a[head].astype(np.float64),
                                          weights.leaky_slope)
    return AttentionAssignment(graph.candidate_edges, per_head / last.heads, last.heads)


def surrogate_attention(graph: SemanticGraph, features: np.ndarray,
                        temperature: float) -> AttentionAssignment:
    """Deterministic attention stand-in for runs without trained weights.

    Scores each candidate edge by negative squared distance between local
    shape descriptors (normal, curvature, corner flag) scaled by the
    temperature, then softmax-normalizes per source node; geometrically
    consistent pairs receive the higher weights.
    """
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[0] != graph.n_nodes:
        raise ValueError("features must be one row per graph node")
    desc = np.column_stack([feats[:, NORMAL_COLS], feats[:, CURVATURE_COL], feats[:, -1]])
    if len(graph.candidate_edges) == 0:
        return AttentionAssignment(graph.candidate_edges, np.empty(0), 1)
    rows = graph.rows_of(graph.candidate_edges)
    src_rows, dst_rows = rows[:, 0], rows[:, 1]
    logits = -np.sum((desc[src_rows] - desc[dst_rows]) ** 2, axis=1) / temperature
    order = np.lexsort((dst_rows, src_rows))
    alpha_sorted = _grouped_softmax(src_rows[order], logits[order])
    alpha = np.empty_like(alpha_sorted)
    alpha[order] = alpha_sorted
    return AttentionAssignment(graph.candidate_edges, alpha, 1)


def random_model_weights(in_dim: int, seed: int, layer_count: int = 2,
                         head_count: int = 4, hidden_dim: int = 32,
                         out_dim: int = 16, leaky_slope: float = 0.2) -> ModelWeights:
    """Synthesized (untrained) weights with the default architecture."""
    rng = np.random.default_rng(seed)
    layers = []
    cur_in = in_dim
    for layer in range(layer_count):
        width = out_dim if layer == layer_count - 1 else hidden_dim
        w = rng.standard_normal((head_count, width, cur_in)) / np.sqrt(cur_in)
        a = rng.standard_normal((head_count, 2 * width)) / np.sqrt(width)
        layers.append(LayerWeights(w.astype(np.float32), a.astype(np.float32)))
        cur_in = head_count * width
    return ModelWeights(tuple(layers), leaky_slope)


def save_model_weights(weights: ModelWeights, path) -> None:
    """Self-describing little-endian binary; see ``load_model_weights``."""
    heads = weights.layers[0].heads
    if any(layer.heads != heads for layer in weights.layers):
        raise ValueError("all layers must share one head count in the file format")
    with open(path, "wb") as fh:
        fh.write(WEIGHTS_MAGIC)
        fh.write(struct.pack("<III", WEIGHTS_VERSION, len(weights.layers), heads))
        fh.write(struct.pack("<f", weights.leaky_slope))
        fh.write(struct.pack("<I", weights.in_dim))
        fh.write(struct.pack(f"<{len(weights.layers)}I",
                             *(layer.out_dim for layer in weights.layers)))
        for layer in weights.layers:
            for head in range(heads):
                fh.write(np.ascontiguousarray(layer.w[head], dtype="<f4").tobytes())
                fh.write(np.ascontiguousarray(layer.a[head], dtype="<f4").tobytes())


def load_model_weights(path) -> ModelWeights:
    """Read the binary weight file.

    Layout: magic "SGAW", then u32 version, u32 layer count, u32 head count,
    f32 leaky slope, u32 input dim, u32 out_dim per layer; then per layer and
    head the row-major float32 projection matrix followed by the attention
    vector of length 2*out_dim.
    """
    data = Path(path).read_bytes()
    if data[:4] != WEIGHTS_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r}")
    try:
        version, layer_count, heads = struct.unpack_from("<III", data, 4)
        (slope,) = struct.unpack_from("<f", data, 16)
        (in_dim,) = struct.unpack_from("<I", data, 20)
        out_dims = struct.unpack_from(f"<{layer_count}I", data, 24)
    except struct.error as exc:
        raise FormatError(f"{path}: truncated header") from exc
    if version != WEIGHTS_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if layer_count < 1 or heads < 1 or in_dim < 1:
        raise FormatError(f"{path}: invalid header dimensions")
    offset = 24 + 4 * layer_count
    layers = []
    cur_in = in_dim
    for layer in range(layer_count):
        out = out_dims[layer]
        if out < 1:
            raise FormatError(f"{path}: layer {layer} has zero width")
        w = np.empty((heads, out, cur_in), dtype=np.float32)
        a = np.empty((heads, 2 * out), dtype=np.float32)
        for head in range(heads):
            need = (out * cur_in + 2 * out) * 4
            if offset + need > len(data):
                raise FormatError(f"{path}: layer {layer} truncated")
            w[head] = np.frombuffer(data, "<f4", out * cur_in, offset).reshape(out, cur_in)
            offset += out * cur_in * 4
            a[head] = np.frombuffer(data, "<f4", 2 * out, offset)
            offset += 2 * out * 4
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(a))):
            raise FormatError(f"{path}: non-finite weights in layer {layer}")
        try:
            layers.append(LayerWeights(w, a))
        except ValueError as exc:
            raise FormatError(f"{path}: layer {layer}: {exc}") from exc
        cur_in = heads * out
    if offset != len(data):
        raise FormatError(f"{path}: {len(data) - offset} trailing bytes")
    try:
        return ModelWeights(tuple(layers), float(slope))
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
