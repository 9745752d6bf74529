"""Rigid poses, pinhole cameras and the active stereo rig.

World units are millimetres. Cameras follow the usual computer-vision
convention: x right, y down, z along the optical axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation


@dataclass(frozen=True)
class RigidPose:
    """Rigid transform ``x -> R x + t`` (local frame to parent frame)."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-6) or abs(np.linalg.det(R) - 1.0) > 1e-6:
            raise ValueError("rotation must be orthonormal with determinant +1")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> RigidPose:
        return cls()

    @classmethod
    def from_matrix(cls, T) -> RigidPose:
        T = np.asarray(T, dtype=np.float64)
        return cls(T[:3, :3], T[:3, 3])

    @classmethod
    def from_euler(cls, angles_deg, translation=(0.0, 0.0, 0.0), seq: str = "xyz") -> RigidPose:
        R = Rotation.from_euler(seq, angles_deg, degrees=True).as_matrix()
        return cls(R, translation)

    @classmethod
    def from_rotvec(cls, rotvec, translation=(0.0, 0.0, 0.0)) -> RigidPose:
        return cls(Rotation.from_rotvec(rotvec).as_matrix(), translation)

    @classmethod
    def look_at(cls, eye, target, up=(0.0, 0.0, 1.0)) -> RigidPose:
        """Camera-to-world pose at ``eye`` whose +z axis points at ``target``."""
        eye = np.asarray(eye, dtype=np.float64)
        z = np.asarray(target, dtype=np.float64) - eye
        z /= np.linalg.norm(z)
        up = np.asarray(up, dtype=np.float64)
        if abs(np.dot(z, up / np.linalg.norm(up))) > 0.999:
            # looking along the up vector; pick any perpendicular reference
            up = np.array([0.0, 1.0, 0.0]) if abs(z[1]) < 0.9 else np.array([1.0, 0.0, 0.0])
        # image y points down, i.e. away from "up"
        x = np.cross(z, up)
        x /= np.linalg.norm(x)
        y = np.cross(z, x)
        return cls(np.column_stack([x, y, z]), eye)

    @property
    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def inverse(self) -> RigidPose:
        Rt = self.rotation.T
        return RigidPose(Rt, -Rt @ self.translation)

    def __matmul__(self, other: RigidPose) -> RigidPose:
        return RigidPose(self.rotation @ other.rotation,
                         self.rotation @ other.translation + self.translation)

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def apply_vectors(self, vectors) -> np.ndarray:
        return np.asarray(vectors, dtype=np.float64) @ self.rotation.T

    def rotation_angle_deg(self) -> float:
        c = (np.trace(self.rotation) - 1.0) / 2.0
        return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))

    def __eq__(self, other):
        if not isinstance(other, RigidPose):
            return NotImplemented
        return (np.array_equal(self.rotation, other.rotation)
                and np.array_equal(self.translation, other.translation))

    def __hash__(self):
        return hash((self.rotation.tobytes(), self.translation.tobytes()))


@dataclass(frozen=True)
class PinholeCamera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    pose: RigidPose = field(default_factory=RigidPose)

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def center(self) -> np.ndarray:
        return self.pose.translation

    def with_pose(self, pose: RigidPose) -> PinholeCamera:
        return PinholeCamera(self.fx, self.fy, self.cx, self.cy, self.width, self.height, pose)

    def pixel_grid(self) -> tuple[np.ndarray, np.ndarray]:
        v, u = np.mgrid[0:self.height, 0:self.width]
        return u.astype(np.float64), v.astype(np.float64)

    def ray_directions(self, u=None, v=None) -> np.ndarray:
        """World-frame ray directions with unit optical-axis component.

        The ray parameter along such a direction equals z-depth, which is
        what the depth maps store.
        """
        if u is None:
            u, v = self.pixel_grid()
        u = np.asarray(u, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        d = np.stack([(u - self.cx) / self.fx, (v - self.cy) / self.fy, np.ones_like(u)], axis=-1)
        return self.pose.apply_vectors(d)

    def backproject(self, depth: np.ndarray, u=None, v=None) -> np.ndarray:
        """World points for a depth map (or for pixel coordinates u, v with depths)."""
        if u is None:
            u, v = self.pixel_grid()
        d = self.ray_directions(u, v)
        return self.center + d * np.asarray(depth, dtype=np.float64)[..., None]

    def project(self, points) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Continuous pixel coordinates and z-depth of world points."""
        pc = self.pose.inverse().apply(points)
        z = pc[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = self.fx * pc[..., 0] / z + self.cx
            v = self.fy * pc[..., 1] / z + self.cy
        return u, v, z

    def in_image(self, u, v, z) -> np.ndarray:
        """Whether projected coordinates fall inside the pixel grid (nearest-pixel rule)."""
        return ((z > 0) & (u > -0.5) & (u < self.width - 0.5)
                & (v > -0.5) & (v < self.height - 0.5))


@dataclass(frozen=True)
class StereoRig:
    """Left/right cameras plus the projector, all posed in the world frame.

    ``projector_intensity`` is the canonical light intensity and
    ``ambient_intensity`` the (usually zero) ambient term.
    """

    left: PinholeCamera
    right: PinholeCamera
    projector_pose: RigidPose
    projector_intensity: float = 1.0
    ambient_intensity: float = 0.0

    def __post_init__(self):
        # a switched-off projector is only reachable through dark()
        if self.projector_intensity <= 0:
            raise ValueError("projector_intensity must be positive")
        if self.ambient_intensity < 0:
            raise ValueError("ambient_intensity must be nonnegative")
        if np.allclose(self.left.center, self.right.center):
            raise ValueError("left and right cameras must be at distinct positions")

    @property
    def projector_center(self) -> np.ndarray:
        return self.projector_pose.translation

    @classmethod
    def standard(cls, width=96, height=72, fx=110.0, fy=None, baseline=60.0,
                 projector_offset=(0.0, 0.0, 0.0), projector_intensity=1.0,
                 ambient_intensity=0.0) -> StereoRig:
        """Rig in its own frame: projector at the origin, cameras at +-baseline/2 on x."""
        fy = fx if fy is None else fy
        cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
        half = baseline / 2.0
        left = PinholeCamera(fx, fy, cx, cy, width, height, RigidPose(np.eye(3), (-half, 0.0, 0.0)))
        right = PinholeCamera(fx, fy, cx, cy, width, height, RigidPose(np.eye(3), (half, 0.0, 0.0)))
        return cls(left, right, RigidPose(np.eye(3), projector_offset),
                   projector_intensity, ambient_intensity)

    def placed(self, pose: RigidPose) -> StereoRig:
        """Move the whole rig rigidly: every component pose is pre-multiplied by ``pose``."""
        return StereoRig(self.left.with_pose(pose @ self.left.pose),
                         self.right.with_pose(pose @ self.right.pose),
                         pose @ self.projector_pose,
                         self.projector_intensity, self.ambient_intensity)

    def dark(self) -> StereoRig:
        """Copy of the rig with the projector switched off."""
        rig = object.__new__(StereoRig)
        for name in ("left", "right", "projector_pose", "ambient_intensity"):
            object.__setattr__(rig, name, getattr(self, name))
        object.__setattr__(rig, "projector_intensity", 0.0)
        return rig
