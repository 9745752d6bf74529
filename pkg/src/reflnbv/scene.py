"""Scenes of posed meshes, depth/normal rendering and PCA normal estimation.

Depth and normal maps are plain arrays: depth is ``(H, W)`` z-depth in mm
and normals are ``(H, W, 3)`` unit vectors in the world frame. ``NaN``
marks a missing pixel in both.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .geometry import PinholeCamera, RigidPose
from .mesh import TriangleMesh

MISS = -1
RAY_EPS = 1e-4  # mm; keeps secondary rays off their own surface


@dataclass(frozen=True)
class SceneInstance:
    mesh: TriangleMesh
    pose: RigidPose
    material: str = "default"


class SceneModel:
    def __init__(self, instances: Sequence[SceneInstance] = ()):
        self.instances = tuple(instances)

    def __len__(self):
        return len(self.instances)

    def __iter__(self):
        return iter(self.instances)

    def only(self, index: int) -> SceneModel:
        return SceneModel([self.instances[index]])

    def intersect(self, origins, dirs, tmin=1e-9, tmax=np.inf, any_hit=False):
        """Closest hit over all instances.

        Returns ``t``, instance id, triangle id and the unoriented world-frame
        face normal (NaN on a miss).
        """
        dirs = np.asarray(dirs, dtype=np.float64)
        origins = np.broadcast_to(np.asarray(origins, dtype=np.float64), dirs.shape)
        shape = dirs.shape[:-1]
        t_best = np.broadcast_to(np.asarray(tmax, dtype=np.float64), shape).copy()
        inst = np.full(shape, MISS, dtype=np.int64)
        tri = np.full(shape, MISS, dtype=np.int64)
        normal = np.full(shape + (3,), np.nan)
        for i, item in enumerate(self.instances):
            if len(item.mesh) == 0:
                continue
            inv = item.pose.inverse()
            # t is preserved because rigid maps keep the direction scale
            t, f = item.mesh.bvh.intersect(inv.apply(origins), inv.apply_vectors(dirs),
                                           tmin=tmin, tmax=t_best, any_hit=any_hit)
            hit = f >= 0
            t_best[hit] = t[hit]
            inst[hit] = i
            tri[hit] = f[hit]
            normal[hit] = item.pose.apply_vectors(item.mesh.face_normals[f[hit]])
        t_best[inst == MISS] = np.inf
        return t_best, inst, tri, normal

    def occluded(self, points, targets) -> np.ndarray:
        """True where the open segment from each point to its target is blocked."""
        points = np.asarray(points, dtype=np.float64)
        d = np.asarray(targets, dtype=np.float64) - points
        dist = np.linalg.norm(d, axis=-1)
        d = d / np.where(dist > 0, dist, 1.0)[..., None]
        t, inst, _, _ = self.intersect(points, d, tmin=RAY_EPS, tmax=dist - RAY_EPS, any_hit=True)
        return inst != MISS


def raycast_view(scene: SceneModel, camera: PinholeCamera):
    """Render ``(depth, normals, hit_ids)`` for every pixel of ``camera``.

    Normals are the geometric face normals, flipped to face the camera.
    """
    dirs = camera.ray_directions()
    t, inst, _, normal = scene.intersect(camera.center, dirs)
    hit = inst != MISS
    depth = np.where(hit, t, np.nan)
    flip = np.einsum("hwk,hwk->hw", np.nan_to_num(normal), dirs) > 0
    normal[flip] *= -1.0
    return depth, normal, inst


def estimate_normals_pca(depth: np.ndarray, camera: PinholeCamera, k: int = 16,
                         radius: int = 5) -> np.ndarray:
    """Per-pixel normals from the covariance of the k nearest 3D neighbours.

    Neighbours are searched in a ``(2*radius+1)**2`` pixel window around each
    valid pixel (the pixel itself included). Pixels with fewer than ``k``
    valid neighbours, or whose neighbourhood is not at least planar-rank, are
    left as NaN. Normals are flipped toward the camera.
    """
    if k < 3:
        raise ValueError("k must be at least 3")
    H, W = depth.shape
    normals = np.full((H, W, 3), np.nan)
    pts = camera.backproject(depth)
    valid = np.isfinite(depth)
    if not valid.any():
        return normals
    padded = np.pad(pts, ((radius, radius), (radius, radius), (0, 0)), constant_values=np.nan)
    windows = sliding_window_view(padded, (2 * radius + 1, 2 * radius + 1), axis=(0, 1))
    vy, vx = np.nonzero(valid)
    nb = windows[vy, vx].reshape(len(vy), 3, -1).transpose(0, 2, 1)  # (n, M, 3)
    center = pts[vy, vx]
    d2 = np.sum((nb - center[:, None, :]) ** 2, axis=2)
    d2 = np.where(np.isfinite(d2), d2, np.inf)
    enough = np.isfinite(d2).sum(axis=1) >= k
    if not enough.any():
        return normals
    nb, d2, center = nb[enough], d2[enough], center[enough]
    vy, vx = vy[enough], vx[enough]
    idx = np.argpartition(d2, k - 1, axis=1)[:, :k]
    sel = np.take_along_axis(nb, idx[:, :, None], axis=1)
    sel = sel - sel.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", sel, sel) / k
    evals, evecs = np.linalg.eigh(cov)
    n = evecs[:, :, 0]
    rank_ok = evals[:, 1] > 1e-10 * np.maximum(evals[:, 2], 1e-300)
    to_cam = camera.center - center
    n = np.where((np.sum(n * to_cam, axis=1) < 0)[:, None], -n, n)
    normals[vy[rank_ok], vx[rank_ok]] = n[rank_ok]
    return normals
