"""Synthetic fixtures shared by the unit and acceptance tests."""

from __future__ import annotations

import numpy as np

from reflnbv.calibration import CalibrationSamples
from reflnbv.geometry import RigidPose, StereoRig
from reflnbv.mesh import icosphere
from reflnbv.planner import (PlanningContext, PoseHypothesis, PoseHypothesisSet,
                             hypothesis_maps, synthetic_hypotheses, viewpoint_sphere)
from reflnbv.reflectance import PhongMaterial, render_radiance
from reflnbv.response import ExposureStack, ResponseCurve, intensity_from_radiance
from reflnbv.scene import SceneInstance, SceneModel, raycast_view
from reflnbv.sensor import SensingConfig, white_pattern_image

EXPOSURES_MS = tuple(0.25 * 2.0 ** k for k in range(8))


def gamma_log_inverse(gamma: float = 2.2, z_max: int = 255) -> np.ndarray:
    """Ground-truth ``ln f^-1(z)`` of ``f(X) = z_max (X / X_sat) ** (1 / gamma)``, X_sat = 1."""
    z = np.arange(1, z_max + 1, dtype=np.float64)
    return np.concatenate([[np.nan], gamma * np.log(z / z_max)])


def exposure_stack(curve: ResponseCurve, exposures=EXPOSURES_MS, pixels: int = 4096,
                   seed: int = 0, scale: float = 1.0) -> ExposureStack:
    """8-bit images of a static scene whose log radiances span the whole exposure range."""
    rng = np.random.default_rng(seed)
    lo = curve.g[1] - np.log(max(exposures))
    hi = curve.g[-2] - np.log(min(exposures))
    E = scale * np.exp(rng.uniform(lo, hi, pixels)).reshape(64, -1)
    images = [np.rint(intensity_from_radiance(E, dt, curve)).astype(np.uint8) for dt in exposures]
    return ExposureStack(images, list(exposures))


def phong_samples(k_d, k_s, n, count: int = 4000, seed: int = 0, noise: float = 0.0,
                  L_in: float = 1.0) -> CalibrationSamples:
    """Samples with cos(alpha) spread over [-1, 1] and radiance from the exact model.

    ``noise`` is the standard deviation of multiplicative Gaussian noise.
    """
    rng = np.random.default_rng(seed)
    cos_theta = rng.uniform(0.05, 1.0, count)
    cos_alpha = rng.uniform(-1.0, 1.0, count)
    E = L_in * (k_d * cos_theta + k_s * np.where(cos_alpha > 0, np.maximum(cos_alpha, 0) ** n, 0))
    if noise:
        E = E * (1.0 + noise * rng.standard_normal(count))
    pixels = np.column_stack([np.arange(count) // 64, np.arange(count) % 64])
    return CalibrationSamples(E, cos_theta, cos_alpha, pixels, np.full(count, np.nan))


def sphere_capture(material, curve: ResponseCurve | None = None, width: int = 320,
                   height: int = 240, fx: float = 440.0, peak_z: float = 245.0,
                   quantize: bool = False):
    """White-pattern capture of a sphere seen head on, exposed so the highlight peaks at ``peak_z``.

    Returns ``(image, dt, depth, normals, rig, mask)`` with ground-truth
    depth and normals. Head on, ``cos(alpha)`` sweeps all of [-1, 1].
    """
    curve = curve or ResponseCurve.gamma(2.2)
    rig = StereoRig.standard(width, height, fx).placed(
        RigidPose.look_at((0.0, 0.0, 400.0), (0.0, 0.0, 0.0), (0.0, 1.0, 0.0)))
    scene = SceneModel([SceneInstance(icosphere(50.0, 4), RigidPose(), "m")])
    depth, normals, inst = raycast_view(scene, rig.left)
    E = render_radiance(scene, rig.left, rig.projector_pose, 1.0, {"m": material})
    dt = float(np.exp(curve.log_exposure(peak_z)) / np.nanmax(E))
    image = white_pattern_image(scene, rig, {"m": material}, curve, dt, quantize=quantize)
    return image, dt, depth, normals, rig, inst == 0


def gain_fixture(seed: int, K: int = 3, n_pixels: int = 10, n_candidates: int = 4):
    """Small planning problem: K pose hypotheses of a coarse sphere and random missing pixels.

    Returns ``(ctx, candidates, hypotheses, pixels, maps, material)``.
    """
    rng = np.random.default_rng(seed)
    material = PhongMaterial(rng.uniform(0.05, 0.5), rng.uniform(0.0, 0.8), rng.uniform(2, 40))
    curve = ResponseCurve.gamma(2.2)
    cfg = SensingConfig(exposure_time=float(rng.uniform(1.0, 12.0)))
    rig = StereoRig.standard(32, 24, 40.0)
    reference = rig.placed(RigidPose.look_at((0.0, 0.0, 300.0), (0.0, 0.0, 0.0),
                                             (0.0, 1.0, 0.0))).left
    hyps = synthetic_hypotheses(RigidPose(), icosphere(40.0, 1), K, 5.0, 8.0,
                                seed=seed, material="m")
    # jitter confidences so the weights are not ordered by pose error
    hyps = PoseHypothesisSet([PoseHypothesis(h.pose, h.confidence + rng.normal(), h.mesh,
                                             h.material) for h in hyps])
    ctx = PlanningContext(reference, rig, {"m": material}, curve, cfg)
    maps = [hypothesis_maps(h, reference) for h in hyps]
    union = np.argwhere(np.any([np.isfinite(d) for d, _ in maps], axis=0))
    pixels = union[rng.choice(len(union), n_pixels, replace=False)]
    pool = viewpoint_sphere((0.0, 0.0, 0.0), 300.0, 16, up=(0.0, 0.0, 1.0))
    candidates = [pool[i] for i in rng.choice(len(pool), n_candidates, replace=False)]
    return ctx, candidates, hyps, pixels, maps, material
