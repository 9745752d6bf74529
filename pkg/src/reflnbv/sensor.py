"""Active stereo capture simulation with intensity-driven depth dropout."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import StereoRig
from .reflectance import PhongMaterial, light_scale, material_arrays, phong_radiance_arrays, render_radiance
from .response import ResponseCurve, exposure_intensity, intensity_from_radiance
from .scene import MISS, SceneModel, raycast_view


@dataclass(frozen=True)
class SensingConfig:
    sigma: float = 100.0
    z_min_valid: float = 5.0
    z_max_valid: float = 255.0
    exposure_time: float = 4.0  # ms
    dropout: str = "stochastic"  # or "deterministic"
    threshold: float = 0.5
    depth_noise_std: float = 0.1  # mm
    falloff_ref: float | None = None  # mm; None disables inverse-square falloff
    shadows: bool = True

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if not 0 <= self.z_min_valid < self.z_max_valid <= 255:
            raise ValueError("need 0 <= z_min_valid < z_max_valid <= 255")
        if self.exposure_time <= 0:
            raise ValueError("exposure_time must be positive")
        if self.dropout not in ("stochastic", "deterministic"):
            raise ValueError("dropout must be 'stochastic' or 'deterministic'")
        if not 0 < self.threshold < 1:
            raise ValueError("threshold must lie in (0, 1)")
        if self.depth_noise_std < 0:
            raise ValueError("depth_noise_std must be nonnegative")


def sensing_probability(Z, cfg: SensingConfig = SensingConfig()):
    """Probability that a pixel of intensity ``Z`` yields a depth measurement.

    ``exp((Z - Z_max) / sigma)`` inside the valid band, zero outside it
    (``+inf`` marks an over-exposed pixel).
    """
    Z = np.asarray(Z, dtype=np.float64)
    inside = (Z >= cfg.z_min_valid) & (Z <= cfg.z_max_valid)
    with np.errstate(over="ignore", invalid="ignore"):
        P = np.where(inside, np.exp((np.where(inside, Z, 0.0) - cfg.z_max_valid) / cfg.sigma), 0.0)
    return P if P.ndim else float(P)


def stereo_probability(P_left, P_right):
    P_left = np.asarray(P_left)
    P_right = np.asarray(P_right)
    if P_left.shape != P_right.shape:
        raise ValueError(f"probability maps differ in shape: {P_left.shape} vs {P_right.shape}")
    return np.minimum(P_left, P_right)


@dataclass
class Capture:
    depth: np.ndarray  # measured depth, NaN where no measurement
    left: np.ndarray  # uint8 left intensity image
    right: np.ndarray  # uint8 right intensity image
    probability: np.ndarray  # min(P_L, P_R) in the left view
    true_depth: np.ndarray
    normals: np.ndarray
    hits: np.ndarray


def point_probabilities(scene: SceneModel, rig: StereoRig, materials, curve: ResponseCurve,
                        cfg: SensingConfig, points, normals, inst, lit=None):
    """Depth-sensing probability of surface points for both cameras of ``rig``.

    Returns ``(P_left, P_right, E_left, E_right)``. A camera that cannot see
    a point (outside its image, or the line of sight blocked) gets zero
    probability. ``lit`` may carry a precomputed unshadowed mask.
    """
    light = rig.projector_center
    if lit is None:
        lit = ~scene.occluded(points, np.broadcast_to(light, points.shape)) if cfg.shadows \
            else np.ones(len(points), dtype=bool)
    Lin = np.where(lit, light_scale(points, light, rig.projector_intensity, cfg.falloff_ref), 0.0)
    L = light - points
    L /= np.linalg.norm(L, axis=-1, keepdims=True)
    k_d, k_s, n = material_arrays(materials, scene, inst)
    probs, radiances = [], []
    for cam in (rig.left, rig.right):
        u, v, z = cam.project(points)
        visible = cam.in_image(u, v, z)
        if visible.any():
            visible[visible] = ~scene.occluded(points[visible],
                                               np.broadcast_to(cam.center, points[visible].shape))
        C = cam.center - points
        C /= np.linalg.norm(C, axis=-1, keepdims=True)
        N = np.where((np.sum(normals * C, axis=-1) < 0)[..., None], -normals, normals)
        E = phong_radiance_arrays(Lin, N, L, C, k_d, k_s, n, rig.ambient_intensity)
        P = sensing_probability(exposure_intensity(E, cfg.exposure_time, curve), cfg)
        probs.append(np.where(visible, P, 0.0))
        radiances.append(E)
    return probs[0], probs[1], radiances[0], radiances[1]


def _intensity_image(E, dt, curve):
    return np.rint(intensity_from_radiance(np.nan_to_num(E, nan=0.0), dt, curve)).astype(np.uint8)


def simulate_capture(scene: SceneModel, rig: StereoRig, materials: dict[str, PhongMaterial],
                     curve: ResponseCurve, cfg: SensingConfig, seed: int = 0) -> Capture:
    """One active stereo acquisition; depth is reported in the left camera."""
    cam = rig.left
    depth, normals, inst = raycast_view(scene, cam)
    hit = inst != MISS
    P = np.zeros(depth.shape)
    E_left = np.full(depth.shape, np.nan)
    if hit.any():
        pts = cam.backproject(depth)[hit]
        P_l, P_r, E_left[hit], _ = point_probabilities(scene, rig, materials, curve, cfg, pts,
                                                       normals[hit], inst[hit])
        P[hit] = stereo_probability(P_l, P_r)

    H, W = depth.shape
    uniform = np.empty((H, W))
    noise = np.empty((H, W))
    # one child stream per row keeps row-parallel and serial runs identical
    for row, ss in enumerate(np.random.SeedSequence(seed).spawn(H)):
        rng = np.random.default_rng(ss)
        uniform[row] = rng.random(W)
        noise[row] = rng.standard_normal(W)
    if cfg.dropout == "deterministic":
        measured = hit & (P >= cfg.threshold)
    else:
        measured = hit & (uniform < P)
    measured_depth = np.where(measured, depth + cfg.depth_noise_std * noise, np.nan)

    E_right = render_radiance(scene, rig.right, rig.projector_pose, rig.projector_intensity,
                              materials, rig.ambient_intensity, cfg.falloff_ref, cfg.shadows)
    return Capture(depth=measured_depth,
                   left=_intensity_image(E_left, cfg.exposure_time, curve),
                   right=_intensity_image(E_right, cfg.exposure_time, curve),
                   probability=P, true_depth=depth, normals=normals, hits=inst)


def white_pattern_image(scene: SceneModel, rig: StereoRig, materials, curve: ResponseCurve,
                        dt: float, quantize: bool = True, falloff_ref=None, shadows=True):
    """Left-camera image under full projector illumination (calibration input).

    With ``quantize=False`` the continuous, clamped intensity is returned.
    """
    E = render_radiance(scene, rig.left, rig.projector_pose, rig.projector_intensity, materials,
                        rig.ambient_intensity, falloff_ref, shadows)
    E = np.nan_to_num(E, nan=0.0)
    Z = intensity_from_radiance(E, dt, curve)
    return np.rint(Z).astype(np.uint8) if quantize else Z
