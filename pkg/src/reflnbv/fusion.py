"""Reprojection fusion of new depth captures into the reference view.

Each valid pixel of a new depth map is lifted to 3D and projected into the
reference camera. A reference pixel that is still missing takes the nearest
projected depth that lands on it (z-buffer). Pixels that already hold depth
are never overwritten; a contribution that disagrees with them by more than
the consistency gate is counted as rejected.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import PinholeCamera


@dataclass
class FusionState:
    reference: PinholeCamera
    depth: np.ndarray  # fused reference-view depth, NaN = missing
    points: np.ndarray = field(default_factory=lambda: np.empty((0, 3)))
    sources: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    rejected: int = 0
    views: int = 0

    @classmethod
    def initial(cls, reference: PinholeCamera, depth: np.ndarray) -> FusionState:
        depth = np.array(depth, dtype=np.float64)
        if depth.shape != reference.shape:
            raise ValueError(f"depth map {depth.shape} does not match camera {reference.shape}")
        valid = np.isfinite(depth)
        pts = reference.backproject(depth)[valid]
        return cls(reference, depth, pts, np.zeros(len(pts), dtype=np.int64), 0, 1)

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.depth)


def splat(points: np.ndarray, camera: PinholeCamera):
    """Z-buffered nearest-pixel projection: ``(depth map, winner index map)``."""
    depth = np.full(camera.shape, np.nan)
    winner = np.full(camera.shape, -1, dtype=np.int64)
    if not len(points):
        return depth, winner
    u, v, z = camera.project(points)
    ok = camera.in_image(u, v, z)
    idx = np.flatnonzero(ok)
    if not len(idx):
        return depth, winner
    flat = np.rint(v[idx]).astype(np.int64) * camera.width + np.rint(u[idx]).astype(np.int64)
    # nearest first within each pixel; index as second key keeps ties deterministic
    order = np.lexsort((idx, z[idx], flat))
    flat, idx = flat[order], idx[order]
    first = np.ones(len(flat), dtype=bool)
    first[1:] = flat[1:] != flat[:-1]
    depth.ravel()[flat[first]] = z[idx[first]]
    winner.ravel()[flat[first]] = idx[first]
    return depth, winner


def fuse_view(state: FusionState, depth_new: np.ndarray, camera: PinholeCamera,
              consistency_mm: float = 2.0, source_id: int | None = None) -> FusionState:
    """Return a new state with ``depth_new`` (seen by ``camera``) fused in."""
    depth_new = np.asarray(depth_new, dtype=np.float64)
    if depth_new.shape != camera.shape:
        raise ValueError(f"depth map {depth_new.shape} does not match camera {camera.shape}")
    source_id = state.views if source_id is None else source_id
    valid_new = np.isfinite(depth_new)
    pts = camera.backproject(depth_new)[valid_new]
    proj, winner = splat(pts, state.reference)
    landed = np.isfinite(proj)
    existing = state.valid
    fill = landed & ~existing
    clash = landed & existing & (np.abs(proj - np.nan_to_num(state.depth)) > consistency_mm)
    depth = state.depth.copy()
    depth[fill] = proj[fill]
    used = winner[fill]
    return FusionState(state.reference, depth,
                       np.concatenate([state.points, pts[used]]),
                       np.concatenate([state.sources, np.full(len(used), source_id, dtype=np.int64)]),
                       state.rejected + int(clash.sum()), state.views + 1)
