"""Phong reflectance for a projector-lit surface seen by a camera.

Scalar functions take a :class:`ShadingFrame`; the ``*_arrays`` variants
broadcast over arrays of unit vectors with a trailing axis of size 3 and are
what the renderer and planner use.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import PinholeCamera, RigidPose
from .scene import MISS, SceneModel, raycast_view


@dataclass(frozen=True)
class PhongMaterial:
    k_d: float
    k_s: float
    n: float

    def __post_init__(self):
        if self.k_d < 0 or self.k_s < 0:
            raise ValueError("k_d and k_s must be nonnegative")
        if not self.n > 0:
            raise ValueError("glossiness n must be positive")


# values reported for the three calibrated example materials
TUBE_FITTING = PhongMaterial(0.037, 0.74, 19.9)
DIN_CONNECTOR_METAL = PhongMaterial(0.04, 0.82, 38.9)
MATTE = PhongMaterial(0.45, 0.02, 8.65)


@dataclass(frozen=True)
class ShadingFrame:
    """Surface point with unit normal, direction to the light and direction to the camera."""

    point: np.ndarray
    normal: np.ndarray
    to_light: np.ndarray
    to_camera: np.ndarray

    def __post_init__(self):
        for name in ("normal", "to_light", "to_camera"):
            v = np.asarray(getattr(self, name), dtype=np.float64)
            if abs(np.linalg.norm(v) - 1.0) > 1e-6:
                raise ValueError(f"{name} must be a unit vector")
            object.__setattr__(self, name, v)
        object.__setattr__(self, "point", np.asarray(self.point, dtype=np.float64))

    @classmethod
    def from_points(cls, point, normal, light_pos, camera_pos) -> ShadingFrame:
        point = np.asarray(point, dtype=np.float64)
        L = np.asarray(light_pos, dtype=np.float64) - point
        C = np.asarray(camera_pos, dtype=np.float64) - point
        n = np.asarray(normal, dtype=np.float64)
        return cls(point, n / np.linalg.norm(n), L / np.linalg.norm(L), C / np.linalg.norm(C))


def diffuse_radiance(L_in: float, frame: ShadingFrame) -> float:
    return float(L_in * max(0.0, float(np.dot(frame.to_light, frame.normal))))


def mirror_ray(frame: ShadingFrame) -> np.ndarray:
    cos_theta = float(np.dot(frame.to_light, frame.normal))
    if cos_theta < 0:
        raise ValueError("light is below the surface (L.N < 0)")
    return 2.0 * cos_theta * frame.normal - frame.to_light


def specular_radiance(L_in: float, frame: ShadingFrame, mat: PhongMaterial) -> float:
    if np.dot(frame.to_light, frame.normal) < 0:
        return 0.0
    cos_alpha = float(np.dot(mirror_ray(frame), frame.to_camera))
    if cos_alpha < 0:
        return 0.0
    return float(L_in * cos_alpha ** mat.n)


def phong_radiance(L_in: float, frame: ShadingFrame, mat: PhongMaterial) -> float:
    return mat.k_d * diffuse_radiance(L_in, frame) + mat.k_s * specular_radiance(L_in, frame, mat)


# -- vectorised forms --------------------------------------------------------

def shading_cosines(N, L, C):
    """``(cos_theta, cos_alpha)`` for broadcast arrays of unit vectors."""
    cos_theta = np.sum(L * N, axis=-1)
    R = 2.0 * cos_theta[..., None] * N - L
    cos_alpha = np.sum(R * C, axis=-1)
    return cos_theta, cos_alpha


def phong_radiance_arrays(L_in, N, L, C, k_d, k_s, n, ambient=0.0):
    """Radiance per point; light below the horizon contributes nothing but ambient."""
    cos_theta, cos_alpha = shading_cosines(N, L, C)
    lit = cos_theta > 0
    diffuse = np.where(lit, cos_theta, 0.0)
    spec = np.where(lit & (cos_alpha > 0), np.maximum(cos_alpha, 0.0) ** n, 0.0)
    return k_d * (L_in * diffuse + ambient) + k_s * L_in * spec


def material_arrays(materials: dict[str, PhongMaterial], scene: SceneModel, inst: np.ndarray):
    """Per-pixel ``k_d, k_s, n`` arrays from an instance-id map (zeros off-object)."""
    k_d = np.zeros(inst.shape)
    k_s = np.zeros(inst.shape)
    n = np.ones(inst.shape)
    for i, item in enumerate(scene):
        m = materials[item.material]
        sel = inst == i
        k_d[sel], k_s[sel], n[sel] = m.k_d, m.k_s, m.n
    return k_d, k_s, n


def light_scale(points, light_pos, L_in, falloff_ref: float | None):
    """Incident intensity, optionally with inverse-square falloff normalised at ``falloff_ref`` mm."""
    if falloff_ref is None:
        return np.full(np.shape(points)[:-1], float(L_in))
    d2 = np.sum((np.asarray(light_pos) - points) ** 2, axis=-1)
    return L_in * falloff_ref ** 2 / d2


def shade_points(scene: SceneModel, materials, inst, points, normals, camera_pos,
                 light_pos, L_in, ambient=0.0, falloff_ref=None, shadows=True):
    """Radiance towards ``camera_pos`` for surface points of known instance.

    ``normals`` are flipped to face the camera first. Points whose segment to
    the light is blocked receive ambient light only.
    """
    C = camera_pos - points
    C /= np.linalg.norm(C, axis=-1, keepdims=True)
    N = np.where((np.sum(normals * C, axis=-1) < 0)[..., None], -normals, normals)
    L = light_pos - points
    L /= np.linalg.norm(L, axis=-1, keepdims=True)
    k_d, k_s, n = material_arrays(materials, scene, inst)
    Lin = light_scale(points, light_pos, L_in, falloff_ref)
    if shadows and len(points):
        Lin = np.where(scene.occluded(points, np.broadcast_to(light_pos, points.shape)), 0.0, Lin)
    return phong_radiance_arrays(Lin, N, L, C, k_d, k_s, n, ambient)


def render_radiance(scene: SceneModel, camera: PinholeCamera, projector_pose: RigidPose,
                    L_in: float, materials: dict[str, PhongMaterial], ambient: float = 0.0,
                    falloff_ref: float | None = None, shadows: bool = True) -> np.ndarray:
    """Radiance image seen by ``camera`` under the projector; NaN off-object."""
    depth, normals, inst = raycast_view(scene, camera)
    E = np.full(depth.shape, np.nan)
    hit = inst != MISS
    if not hit.any():
        return E
    pts = camera.backproject(depth)[hit]
    E[hit] = shade_points(scene, materials, inst[hit], pts, normals[hit], camera.center,
                          projector_pose.translation, L_in, ambient, falloff_ref, shadows)
    return E
