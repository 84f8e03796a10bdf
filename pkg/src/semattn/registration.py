"""Weighted rigid alignment (Kabsch) and pose-error metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from mpmath import mp, mpf
from mpmath import acos as mp_acos

from .errors import ConfidenceLossError, DegenerateGeometryError
from .types import Pose

WEIGHT_SUM_EPS = 1e-8
RANK_EPS = 1e-12
# |cos| beyond this is too close to +-1 for float64 acos; switch to the
# high-precision path (acos resolution near the boundary is ~sqrt(eps)).
ACOS_ESCALATE = 1.0 - 1e-12


@dataclass(frozen=True)
class PoseError:
    """Rotation error in degrees and translation error in meters."""

    rre: float
    rte: float

    def __post_init__(self):
        if not (np.isfinite(self.rre) and np.isfinite(self.rte)):
            raise ValueError("non-finite pose error")
        if not (0.0 <= self.rre <= 180.0):
            raise ValueError(f"rre {self.rre} outside [0, 180]")
        if self.rte < 0.0:
            raise ValueError("rte must be non-negative")


def weighted_rigid_transform(src: np.ndarray, dst: np.ndarray, weights: np.ndarray) -> Pose:
    """Least-squares rigid transform mapping ``src`` onto ``dst``.

    Weights enter homogeneously: scaling them by any positive constant leaves
    the result unchanged. Raises ``ConfidenceLossError`` when the total weight
    is negligible and ``DegenerateGeometryError`` when the weighted point sets
    do not constrain the rotation (second singular value ~ 0).
    """
    src = np.asarray(src, dtype=np.float64).reshape(-1, 3)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 3)
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if len(src) != len(dst) or len(src) != len(w):
        raise ValueError("src, dst, and weights must have equal length")
    total = w.sum()
    if not total > WEIGHT_SUM_EPS:
        raise ConfidenceLossError(f"confidence loss: total weight {total} <= {WEIGHT_SUM_EPS}")
    wn = w / total
    mu_src = wn @ src
    mu_dst = wn @ dst
    h = (src - mu_src).T @ ((dst - mu_dst) * wn[:, None])
    u, s, vt = np.linalg.svd(h)
    if s[1] < RANK_EPS:
        raise DegenerateGeometryError(
            f"degenerate correspondence geometry (singular values {s})")
    v = vt.T
    d = np.sign(np.linalg.det(v @ u.T))
    rot = v @ np.diag([1.0, 1.0, d]) @ u.T
    return Pose(rot, mu_dst - rot @ mu_src)


def weighted_svd_pose(graph, attention) -> Pose:
    """Pose from a graph's candidate edges weighted by attention."""
    if not np.array_equal(attention.edges, graph.candidate_edges):
        raise ValueError("attention is not aligned with the graph's candidate edges")
    rows = graph.rows_of(graph.candidate_edges)
    src = graph.positions[rows[:, 0]]
    dst = graph.positions[rows[:, 1]]
    return weighted_rigid_transform(src, dst, attention.weights)


def _mp_matmul(a, b):
    return [[sum(a[i][k] * b[k][j] for k in range(3)) for j in range(3)] for i in range(3)]


def _mp_transpose(a):
    return [[a[j][i] for j in range(3)] for i in range(3)]


def _mp_inverse_transpose(m):
    a, b, c = m[0]
    d, e, f = m[1]
    g, h, i = m[2]
    det = a * (e * i - f * h) - b * (d * i - f * g) + c * (d * h - e * g)
    adj = [[(e * i - f * h), -(b * i - c * h), (b * f - c * e)],
           [-(d * i - f * g), (a * i - c * g), -(a * f - c * d)],
           [(d * h - e * g), -(a * h - b * g), (a * e - b * d)]]
    return _mp_transpose([[adj[r][s] / det for s in range(3)] for r in range(3)])


def _mp_polish(m):
    # Newton iteration toward the orthogonal polar factor; quadratic
    # convergence, 4 steps take 1e-9 residuals to the working precision.
    x = m
    for _ in range(4):
        y = _mp_inverse_transpose(x)
        x = [[(x[i][j] + y[i][j]) / 2 for j in range(3)] for i in range(3)]
    return x


def _rre_highprec(rot_gt: np.ndarray, rot_est: np.ndarray) -> float:
    with mp.workdps(40):
        a = _mp_polish([[mpf(float(v)) for v in row] for row in rot_gt])
        b = _mp_polish([[mpf(float(v)) for v in row] for row in rot_est])
        m = _mp_matmul(_mp_transpose(a), b)
        arg = (m[0][0] + m[1][1] + m[2][2] - 1) / 2
        arg = max(mpf(-1), min(mpf(1), arg))
        return float(mp_acos(arg) * 180 / mp.pi)


def rre(ground_truth: Pose, estimate: Pose) -> float:
    """Relative rotation error in degrees: acos((tr(R^T R_est) - 1) / 2).

    The acos argument is clamped to [-1, 1] against floating-point overshoot.
    Near the clamp boundary float64 cannot resolve the angle (the formula has
    sqrt(eps) sensitivity there), so the trace is re-evaluated at extended
    precision after projecting both rotations onto SO(3).
    """
    arg = (np.trace(ground_truth.rotation.T @ estimate.rotation) - 1.0) / 2.0
    if abs(arg) > ACOS_ESCALATE:
        return _rre_highprec(ground_truth.rotation, estimate.rotation)
    return float(np.degrees(np.arccos(np.clip(arg, -1.0, 1.0))))


def rte(ground_truth: Pose, estimate: Pose) -> float:
    """Relative translation error: Euclidean distance in meters."""
    return float(np.linalg.norm(ground_truth.translation - estimate.translation))


def pose_error(ground_truth: Pose, estimate: Pose) -> PoseError:
    return PoseError(rre(ground_truth, estimate), rte(ground_truth, estimate))
