"""Evaluation metrics: depth completion and average model-point distance."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import RigidPose
from .mesh import TriangleMesh

COMPLETION_ERR_MM = 2.0
ADD_FRACTION = 0.1


def completion_mask(before: np.ndarray, object_mask: np.ndarray) -> np.ndarray:
    """Object pixels that have no depth in ``before``."""
    return np.asarray(object_mask, dtype=bool) & np.isnan(before)


def depth_completion_pct(before, after, gt, err_mm: float = COMPLETION_ERR_MM,
                         mask=None) -> float:
    """Percentage of initially missing object pixels recovered within ``err_mm``.

    ``mask`` defaults to every pixel with ground-truth depth; it is always
    intersected with the pixels missing in ``before``. An empty mask scores
    100 since nothing was left to recover.
    """
    before, after, gt = (np.asarray(a, dtype=np.float64) for a in (before, after, gt))
    if not before.shape == after.shape == gt.shape:
        raise ValueError("depth maps must be aligned")
    obj = np.isfinite(gt) if mask is None else np.asarray(mask, dtype=bool)
    m = completion_mask(before, obj)
    total = int(m.sum())
    if total == 0:
        return 100.0
    with np.errstate(invalid="ignore"):
        good = m & np.isfinite(after) & (np.abs(after - gt) < err_mm)
    return 100.0 * int(good.sum()) / total


def add_error(pose_est: RigidPose, pose_gt: RigidPose, mesh: TriangleMesh) -> float:
    """Mean distance between model vertices under the two poses (mm)."""
    V = mesh.vertices
    return float(np.mean(np.linalg.norm(pose_est.apply(V) - pose_gt.apply(V), axis=1)))


@dataclass(frozen=True)
class PoseEstimate:
    pose: RigidPose
    add: float
    correct: bool

    @classmethod
    def evaluate(cls, pose: RigidPose, gt: RigidPose, mesh: TriangleMesh,
                 fraction: float = ADD_FRACTION) -> PoseEstimate:
        add = add_error(pose, gt, mesh)
        return cls(pose, add, add < fraction * mesh.diameter)
