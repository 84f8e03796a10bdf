"""Sequence orchestration: vanilla pass, perturbations, CSV reports.

A run walks every consecutive cloud pair of one sequence, scores candidate
edges (forward pass with loaded weights, or the surrogate), registers each
pair by weighted SVD, ranks semantic classes sequence-wide, then replays
every masking set in both perturbation modes and aggregates JSD, AAD, and
their correlation. Failures are recorded per (pair, set, mode) cell and
rendered as NA; identical configs and seeds produce byte-identical reports.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kitti
from .analysis import (AttentionDistribution, CorrelationPoint, CorrelationReport,
                       DiscrepancyReport, DivergenceReport, EdgeUniverse, aad_pair,
                       jsd, to_distribution)
from .attention import (AttentionAssignment, ModelWeights, forward_attention,
                        load_model_weights, surrogate_attention)
from .errors import ConfigError, EstimationError
from .graph import GraphParams, SemanticGraph, build_graph, classify_geometry, node_features
from .masking import (SINGLE_LABELS, TAXONOMY_LABELS, ClassRanking, MaskingSet,
                      apply_edge_mask, apply_node_mask, build_masking_sets,
                      class_attention_totals, merge_totals, ranking_from_totals)
from .registration import PoseError, pose_error, weighted_svd_pose
from .synthetic import (ClassSpec, SceneConfig, default_scene_classes,
                        generate_synthetic_sequence, scene_schema, yaw_pose)
from .types import LabeledCloud, Pose, SemanticSchema, relative_pose

MODE_NODE = "node"
MODE_EDGE = "edge"
MODES = (MODE_NODE, MODE_EDGE)
NA = "NA"

_GRAPH_KEYS = {
    "graph_neighbors": "neighbor_count",
    "graph_line_ratio": "line_ratio",
    "graph_curvature_threshold": "curvature_threshold",
    "graph_intra_radius": "intra_radius",
    "graph_max_candidates": "max_candidates",
    "graph_max_distance": "max_distance",
}
_KNOWN_KEYS = set(_GRAPH_KEYS) | {
    "data_dir", "schema", "label_remap",
    "synthetic", "synth_clouds", "synth_seed", "synth_sigma", "synth_extent",
    "synth_resample", "synth_step_yaw_deg", "synth_step_translation",
    "synth_classes", "synth_class",
    "weights", "surrogate_temperature", "masking_seed", "out_dir",
}


@dataclass(frozen=True)
class RunConfig:
    """Validated run description; exactly one data source and one model mode."""

    data_dir: Path | None = None
    schema_path: Path | None = None
    label_remap: dict[int, int] = field(default_factory=dict)
    scene: SceneConfig | None = None
    scene_seed: int = 0
    graph: GraphParams = field(default_factory=GraphParams)
    weights_path: Path | None = None
    surrogate_temperature: float | None = None
    masking_seed: int = 0
    out_dir: Path = Path("reports")

    def __post_init__(self):
        if (self.data_dir is None) == (self.scene is None):
            raise ConfigError("exactly one data source required: data_dir or synthetic scene")
        if self.data_dir is not None and self.schema_path is None:
            raise ConfigError("data_dir source requires a schema file")
        if (self.weights_path is None) == (self.surrogate_temperature is None):
            raise ConfigError(
                "exactly one model mode required: weights path or surrogate temperature")
        if self.surrogate_temperature is not None and self.surrogate_temperature <= 0:
            raise ConfigError("surrogate_temperature must be positive")


def _parse_bool(raw: str, key: str) -> bool:
    low = raw.lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {raw!r}")


def _parse_class_spec(raw: str) -> ClassSpec:
    parts = raw.split(":")
    if len(parts) != 5:
        raise ConfigError(
            f"synth_class: expected 'id:name:kind:primitives:points', got {raw!r}")
    try:
        return ClassSpec(int(parts[0]), parts[1], parts[2], int(parts[3]), int(parts[4]))
    except ValueError as exc:
        raise ConfigError(f"synth_class {raw!r}: {exc}") from exc


def read_key_values(path) -> list[tuple[str, str]]:
    """Key/value lines, '#' comments allowed; repeated keys are preserved."""
    items: list[tuple[str, str]] = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = stripped.partition("=")
            items.append((key.strip(), value.strip()))
    return items


def parse_run_config(path, seed_override: int | None = None,
                     out_override=None) -> RunConfig:
    """Build a RunConfig from a plain-text key/value file."""
    items = read_key_values(path)
    values: dict[str, str] = {}
    class_specs: list[ClassSpec] = []
    for key, value in items:
        if key not in _KNOWN_KEYS:
            raise ConfigError(f"{path}: unknown key {key!r}")
        if key == "synth_class":
            class_specs.append(_parse_class_spec(value))
        elif key in values:
            raise ConfigError(f"{path}: duplicate key {key!r}")
        else:
            values[key] = value

    def take_float(key: str, default: float) -> float:
        try:
            return float(values.pop(key)) if key in values else default
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}") from exc

    def take_int(key: str, default: int) -> int:
        try:
            return int(values.pop(key)) if key in values else default
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}") from exc

    try:
        graph = GraphParams(
            neighbor_count=take_int("graph_neighbors", 10),
            line_ratio=take_float("graph_line_ratio", 0.25),
            curvature_threshold=take_float("graph_curvature_threshold", 0.1),
            intra_radius=take_float("graph_intra_radius", 0.5),
            max_candidates=take_int("graph_max_candidates", 5),
            max_distance=take_float("graph_max_distance", 2.0),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    scene = None
    scene_seed = 0
    if _parse_bool(values.pop("synthetic", "false"), "synthetic"):
        if not class_specs:
            class_specs = list(default_scene_classes(take_int("synth_classes", 5)))
        elif "synth_classes" in values:
            raise ConfigError("give synth_class lines or synth_classes, not both")
        translation = (0.0, 0.0, 0.0)
        if "synth_step_translation" in values:
            parts = values.pop("synth_step_translation").split(",")
            if len(parts) != 3:
                raise ConfigError("synth_step_translation: expected 'x,y,z'")
            try:
                translation = tuple(float(p) for p in parts)
            except ValueError as exc:
                raise ConfigError(f"synth_step_translation: {exc}") from exc
        try:
            scene = SceneConfig(
                classes=tuple(class_specs),
                sigma=take_float("synth_sigma", 0.0),
                extent=take_float("synth_extent", 8.0),
                step=yaw_pose(take_float("synth_step_yaw_deg", 0.0), translation),
                n_clouds=take_int("synth_clouds", 2),
                resample=_parse_bool(values.pop("synth_resample", "true"), "synth_resample"),
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        scene_seed = take_int("synth_seed", 0)
    elif class_specs or any(k.startswith("synth_") for k in values):
        raise ConfigError("synth_* keys require synthetic = true")

    remap: dict[int, int] = {}
    if "label_remap" in values:
        for pair in values.pop("label_remap").split(","):
            src, _, dst = pair.partition(":")
            try:
                remap[int(src)] = int(dst)
            except ValueError as exc:
                raise ConfigError(f"label_remap: {exc}") from exc

    temperature = None
    if "surrogate_temperature" in values:
        try:
            temperature = float(values.pop("surrogate_temperature"))
        except ValueError as exc:
            raise ConfigError(f"surrogate_temperature: {exc}") from exc
    masking_seed = take_int("masking_seed", 0)
    if seed_override is not None:
        masking_seed = seed_override
        scene_seed = seed_override
    out_dir = Path(out_override) if out_override is not None else Path(
        values.pop("out_dir", "reports"))
    values.pop("out_dir", None)

    return RunConfig(
        data_dir=Path(values.pop("data_dir")) if "data_dir" in values else None,
        schema_path=Path(values.pop("schema")) if "schema" in values else None,
        label_remap=remap,
        scene=scene,
        scene_seed=scene_seed,
        graph=graph,
        weights_path=Path(values.pop("weights")) if "weights" in values else None,
        surrogate_temperature=temperature,
        masking_seed=masking_seed,
        out_dir=out_dir,
    )


def _load_sequence(config: RunConfig) -> tuple[SemanticSchema, list[LabeledCloud], list[Pose]]:
    """Clouds plus, per pair, the ground-truth transform of cloud t onto t+1."""
    if config.scene is not None:
        clouds, gts = generate_synthetic_sequence(config.scene, config.scene_seed)
        return scene_schema(config.scene), clouds, gts
    schema = kitti.load_schema(config.schema_path)
    scan_dir = config.data_dir / "velodyne"
    label_dir = config.data_dir / "labels"
    scans = sorted(scan_dir.glob("*.bin"))
    if len(scans) < 2:
        raise ConfigError(f"{scan_dir}: need at least 2 scan files, found {len(scans)}")
    poses = kitti.load_poses(config.data_dir / "poses.txt")
    if len(poses) < len(scans):
        raise ConfigError(f"{len(poses)} poses for {len(scans)} scans")
    clouds = []
    for t, scan_path in enumerate(scans):
        cloud = kitti.load_scan(scan_path, timestamp_index=t)
        label_path = label_dir / (scan_path.stem + ".label")
        clouds.append(kitti.load_labels(label_path, cloud, schema, config.label_remap))
    # absolute poses map sensor frames to world; the alignment that carries
    # cloud t onto cloud t+1 is the relative motion expressed in frame t+1
    gts = [relative_pose(poses[t + 1], poses[t]) for t in range(len(scans) - 1)]
    return schema, clouds, gts


def _model_fn(config: RunConfig, schema: SemanticSchema):
    if config.surrogate_temperature is not None:
        temp = config.surrogate_temperature

        def run(graph: SemanticGraph, feats: np.ndarray) -> AttentionAssignment:
            return surrogate_attention(graph, feats, temp)

        return run, "surrogate"
    weights: ModelWeights = load_model_weights(config.weights_path)
    expected = 8 + len(schema)
    if weights.in_dim != expected:
        raise ConfigError(
            f"weight input dim {weights.in_dim} != feature dim {expected} for this schema")

    def run(graph: SemanticGraph, feats: np.ndarray) -> AttentionAssignment:
        return forward_attention(graph, feats, weights)

    return run, "forward"


@dataclass
class PairVanilla:
    index: int
    graph: SemanticGraph
    attention: AttentionAssignment
    universe: EdgeUniverse
    distribution: AttentionDistribution
    pose: Pose
    error: PoseError
    ground_truth: Pose


@dataclass
class VanillaRun:
    config: RunConfig
    schema: SemanticSchema
    model_mode: str
    pairs: list[PairVanilla]
    ranking: ClassRanking


def run_vanilla(config: RunConfig) -> VanillaRun:
    """Unperturbed pass over all consecutive pairs plus the sequence ranking."""
    schema, clouds, gts = _load_sequence(config)
    if len(clouds) < 2:
        raise ConfigError("need at least 2 clouds")
    model, model_mode = _model_fn(config, schema)
    params = config.graph
    geometries = []
    for t, cloud in enumerate(clouds):
        try:
            geometries.append(classify_geometry(cloud, params.neighbor_count,
                                                params.line_ratio,
                                                params.curvature_threshold))
        except ValueError as exc:
            raise EstimationError(f"frame {t}: {exc}") from exc
    pairs: list[PairVanilla] = []
    totals = []
    for t in range(len(clouds) - 1):
        try:
            graph = build_graph(clouds[t], clouds[t + 1], params,
                                geometries[t], geometries[t + 1])
            feats = node_features(graph, schema)
            attention = model(graph, feats)
            universe = EdgeUniverse.from_graph(graph)
            distribution = to_distribution(attention, universe)
            pose = weighted_svd_pose(graph, attention)
        except (EstimationError, ValueError) as exc:
            raise EstimationError(f"frame pair {t}: {exc}") from exc
        err = pose_error(gts[t], pose)
        pairs.append(PairVanilla(t, graph, attention, universe, distribution,
                                 pose, err, gts[t]))
        totals.append(class_attention_totals(attention, graph))
    ranking = ranking_from_totals(merge_totals(totals))
    return VanillaRun(config, schema, model_mode, pairs, ranking)


@dataclass
class CellResult:
    """One (pair, set, mode) outcome; failure text when estimation broke."""

    jsd: float | None = None
    error: PoseError | None = None
    deltas: tuple[float, float] | None = None
    failure: str | None = None


@dataclass
class SetModeResult:
    cells: list[CellResult]
    divergence: DivergenceReport
    discrepancy: DiscrepancyReport


@dataclass
class SequenceRun:
    vanilla: VanillaRun
    set_labels: list[str]
    sets_by_pair: list[list[MaskingSet]]
    omitted_sets: tuple[str, ...]
    results: dict[str, dict[str, SetModeResult]]  # label -> mode -> result
    correlations: dict[str, CorrelationReport]    # mode -> report

    @property
    def total_failure(self) -> bool:
        return all(res.discrepancy.combined is None
                   for modes in self.results.values() for res in modes.values())


def _node_mode_cell(pair: PairVanilla, mset: MaskingSet, schema, model) -> CellResult:
    cell = CellResult()
    try:
        masked_graph = apply_node_mask(pair.graph, mset)
        masked_attention = model(masked_graph, node_features(masked_graph, schema))
        cell.jsd = jsd(pair.distribution, to_distribution(masked_attention, pair.universe))
    except EstimationError as exc:
        cell.failure = str(exc)
        return cell
    try:
        pose = weighted_svd_pose(masked_graph, masked_attention)
        cell.error = pose_error(pair.ground_truth, pose)
        cell.deltas = aad_pair(pair.error, cell.error)
    except EstimationError as exc:
        cell.failure = str(exc)
    return cell


def _edge_mode_cell(pair: PairVanilla, mset: MaskingSet) -> CellResult:
    cell = CellResult()
    masked_attention = apply_edge_mask(pair.attention, mset)
    try:
        cell.jsd = jsd(pair.distribution, to_distribution(masked_attention, pair.universe))
    except EstimationError as exc:
        cell.failure = str(exc)
        return cell
    try:
        pose = weighted_svd_pose(pair.graph, masked_attention)
        cell.error = pose_error(pair.ground_truth, pose)
        cell.deltas = aad_pair(pair.error, cell.error)
    except EstimationError as exc:
        cell.failure = str(exc)
    return cell


def run_perturbations(vanilla: VanillaRun, config: RunConfig,
                      set_labels=None) -> SequenceRun:
    """Apply every masking set in both modes to every pair and aggregate.

    Node mode masks the graph and reruns attention; edge mode zeroes the
    vanilla assignment and re-registers without a new forward pass. A failed
    cell is recorded and never aborts the rest of the sequence.
    """
    model, _ = _model_fn(config, vanilla.schema)
    sets_by_pair = [build_masking_sets(vanilla.ranking, pair.graph, config.masking_seed)
                    for pair in vanilla.pairs]
    labels = [m.label for m in sets_by_pair[0]]
    for sets in sets_by_pair[1:]:
        if [m.label for m in sets] != labels:
            raise RuntimeError("masking taxonomy diverged across pairs")
    if set_labels is not None:
        unknown = [l for l in set_labels if l not in TAXONOMY_LABELS]
        if unknown:
            raise ConfigError(f"unknown masking sets: {', '.join(unknown)}")
        labels = [l for l in labels if l in set_labels]
    omitted = tuple(l for l in TAXONOMY_LABELS
                    if l not in [m.label for m in sets_by_pair[0]])

    results: dict[str, dict[str, SetModeResult]] = {}
    for label in labels:
        results[label] = {}
        for mode in MODES:
            cells = []
            for pair, sets in zip(vanilla.pairs, sets_by_pair):
                mset = next(m for m in sets if m.label == label)
                if mode == MODE_NODE:
                    cells.append(_node_mode_cell(pair, mset, vanilla.schema, model))
                else:
                    cells.append(_edge_mode_cell(pair, mset))
            results[label][mode] = SetModeResult(
                cells,
                DivergenceReport.from_pairs(c.jsd for c in cells),
                DiscrepancyReport.from_pairs(c.deltas for c in cells),
            )

    correlations = {}
    for mode in MODES:
        points = [CorrelationPoint(label,
                                   results[label][mode].divergence.mean,
                                   results[label][mode].discrepancy.combined)
                  for label in labels]
        correlations[mode] = CorrelationReport.from_points(points, SINGLE_LABELS)
    return SequenceRun(vanilla, labels, sets_by_pair, omitted, results, correlations)


def _fmt(value) -> str:
    if value is None:
        return NA
    if isinstance(value, float):
        return NA if np.isnan(value) else repr(float(value))
    return str(value)


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def emit_ranking(vanilla: VanillaRun, out_dir: Path) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    ranking = vanilla.ranking
    tied = {cid for group in ranking.tie_groups for cid in group}
    rows = []
    for pos, (cid, avg) in enumerate(ranking.entries, start=1):
        count = ranking.counts[pos - 1] if ranking.counts else None
        rows.append([pos, cid, vanilla.schema.name_of(cid), avg, count,
                     "yes" if cid in tied else "no"])
    path = out_dir / "ranking.csv"
    _write_csv(path, ["rank", "class_id", "class_name", "average_attention",
                      "node_count", "tied"], rows)
    return path


def emit_reports(run: SequenceRun, out_dir) -> list[Path]:
    """Write ranking.csv, jsd.csv, aad.csv, correlation.csv, pairs.csv, run_meta.txt."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = [emit_ranking(run.vanilla, out_dir)]

    jsd_rows, aad_rows, corr_rows, pair_rows = [], [], [], []
    for label in run.set_labels:
        for mode in MODES:
            res = run.results[label][mode]
            used = sum(1 for v in res.divergence.per_pair if v is not None)
            jsd_rows.append([label, mode, res.divergence.mean, used])
            ok = len(res.cells) - res.discrepancy.failures
            aad_rows.append([label, mode, res.discrepancy.combined, ok,
                             res.discrepancy.failures])
    for pair in run.vanilla.pairs:
        pair_rows.append([pair.index, "vanilla", "vanilla", None,
                          pair.error.rre, pair.error.rte, None, None, ""])
    for label in run.set_labels:
        for mode in MODES:
            for pair, cell in zip(run.vanilla.pairs, run.results[label][mode].cells):
                pair_rows.append([
                    pair.index, label, mode, cell.jsd,
                    cell.error.rre if cell.error else None,
                    cell.error.rte if cell.error else None,
                    cell.deltas[0] if cell.deltas else None,
                    cell.deltas[1] if cell.deltas else None,
                    cell.failure or "",
                ])
    for mode in MODES:
        report = run.correlations[mode]
        for point in report.points:
            corr_rows.append([mode, point.set_label, point.mean_jsd, point.aad,
                              None, None])
        corr_rows.append([mode, "pearson-single-class", None, None,
                          report.single_class_r, report.n_single])
        corr_rows.append([mode, "pearson-all-sets", None, None,
                          report.all_sets_r, report.n_all])

    specs = [
        ("jsd.csv", ["set", "mode", "mean_jsd", "pairs_with_jsd"], jsd_rows),
        ("aad.csv", ["set", "mode", "aad", "successful_pairs", "failed_pairs"], aad_rows),
        ("correlation.csv", ["mode", "entry", "mean_jsd", "aad", "pearson_r", "n_points"],
         corr_rows),
        ("pairs.csv", ["pair", "set", "mode", "jsd", "rre_deg", "rte_m",
                       "delta_rre_deg", "delta_rte_m", "failure"], pair_rows),
    ]
    for name, header, rows in specs:
        path = out_dir / name
        _write_csv(path, header, rows)
        paths.append(path)

    meta = out_dir / "run_meta.txt"
    random_sets = [m for m in run.sets_by_pair[0] if m.kind == "random"]
    random_classes = ",".join(str(c) for m in random_sets for c in m.class_ids)
    with open(meta, "w") as fh:
        fh.write(f"model_mode = {run.vanilla.model_mode}\n")
        fh.write(f"masking_seed = {run.vanilla.config.masking_seed}\n")
        fh.write(f"pairs = {len(run.vanilla.pairs)}\n")
        fh.write(f"omitted_sets = {','.join(run.omitted_sets) or 'none'}\n")
        fh.write(f"random3_classes = {random_classes or 'none'}\n")
        fh.write("node_jsd_convention = rerun attention on the masked graph, "
                 "compared on the unmasked pair's candidate-edge universe "
                 "(missing edges get probability zero)\n")
        fh.write("aad_units = mean |dRRE| in degrees plus mean |dRTE| in meters, "
                 "summed as-is\n")
        fh.write(f"failure_literal = {NA}\n")
    paths.append(meta)
    return paths
