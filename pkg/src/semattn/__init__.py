"""Semantic-attention explainability for graph-attention pointcloud registration.

Ranks semantic classes by their learned attention, perturbs the input via
node or edge masks, and validates attention as an importance indicator by
correlating attention-distribution divergence with pose-accuracy
discrepancy.
"""

from .analysis import (AttentionDistribution, CorrelationReport, DiscrepancyReport,
                       DivergenceReport, EdgeUniverse, aad_pair, aad_sequence, jsd,
                       pearson, to_distribution)
from .attention import (AttentionAssignment, LayerWeights, ModelWeights,
                        forward_attention, load_model_weights, random_model_weights,
                        save_model_weights, surrogate_attention)
from .errors import (ConfidenceLossError, ConfigError, DegenerateGeometryError,
                     EstimationError, FormatError, InsufficientCandidatesError)
from .graph import (GeometricClass, GraphParams, SemanticGraph, build_graph,
                    classify_geometry, node_features)
from .kitti import (load_labels, load_poses, load_scan, load_schema, save_labels,
                    save_poses, save_scan, save_schema)
from .masking import (ClassRanking, MaskingSet, apply_edge_mask, apply_node_mask,
                      build_masking_sets, rank_classes)
from .pipeline import (RunConfig, SequenceRun, emit_reports, parse_run_config,
                       run_perturbations, run_vanilla)
from .registration import (PoseError, pose_error, rre, rte, weighted_rigid_transform,
                           weighted_svd_pose)
from .synthetic import (ClassSpec, SceneConfig, default_scene_classes,
                        generate_synthetic_scene, generate_synthetic_sequence,
                        scene_schema, yaw_pose)
from .types import LabeledCloud, LabeledPoint, Pose, SemanticSchema, relative_pose

__version__ = "0.1.0"
