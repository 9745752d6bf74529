import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from synth import phong_samples, sphere_capture
from reflnbv.calibration import (CalibrationError, CalibrationSamples, NoSpecularSignal,
                                 build_samples, calibrate_material, fit_diffuse, fit_samples,
                                 fit_specular)
from reflnbv.reflectance import MATTE, TUBE_FITTING, PhongMaterial
from reflnbv.response import ResponseCurve

CURVE = ResponseCurve.gamma(2.2)


@pytest.fixture(scope="module")
def tube_capture():
    return sphere_capture(TUBE_FITTING, CURVE)


def test_sphere_samples_cover_both_lobes(tube_capture):
    s = build_samples(*tube_capture[:5], CURVE, tube_capture[5])
    assert s.cos_alpha.min() < -0.9 and s.cos_alpha.max() > 0.99
    assert (s.cos_alpha < 0).sum() > 100 and (s.cos_alpha > 0.05).sum() > 100


def test_saturated_pixels_excluded():
    image, dt, depth, normals, rig, mask = sphere_capture(TUBE_FITTING, CURVE, quantize=True)
    image = image.copy()
    image[mask & (image > 200)] = 255
    s = build_samples(image, dt, depth, normals, rig, CURVE, mask)
    assert len(s) > 0
    assert not (s.intensity >= 255).any()
    assert np.isfinite(s.radiance).all()


def test_empty_mask_rejected(tube_capture):
    image, dt, depth, normals, rig, mask = tube_capture
    with pytest.raises(CalibrationError):
        build_samples(image, dt, depth, normals, rig, CURVE, np.zeros_like(mask))


def test_all_saturated_rejected(tube_capture):
    image, dt, depth, normals, rig, mask = tube_capture
    with pytest.raises(CalibrationError, match="saturated"):
        build_samples(np.full_like(image, 255), dt, depth, normals, rig, CURVE, mask)


def test_mask_restricts_samples(tube_capture):
    image, dt, depth, normals, rig, mask = tube_capture
    half = mask.copy()
    half[:, : mask.shape[1] // 2] = False
    s = build_samples(image, dt, depth, normals, rig, CURVE, half)
    assert (s.pixels[:, 1] >= mask.shape[1] // 2).all()
    assert half[s.pixels[:, 0], s.pixels[:, 1]].all()


def test_fit_diffuse_exact():
    s = phong_samples(0.45, 0.0, 1.0)
    assert fit_diffuse(s) == pytest.approx(0.45, abs=1e-6)


def test_fit_diffuse_noise_all_seeds():
    for seed in range(100):
        s = phong_samples(0.45, 0.3, 10.0, seed=seed, noise=0.01)
        assert abs(fit_diffuse(s) - 0.45) / 0.45 < 0.05


def test_fit_diffuse_zero_radiance():
    s = phong_samples(0.45, 0.0, 1.0)
    assert fit_diffuse(s.with_radiance(np.zeros(len(s)))) == 0.0


def test_fit_diffuse_needs_samples():
    s = phong_samples(0.45, 0.0, 1.0, count=200)
    with pytest.raises(CalibrationError, match="outside the specular lobe"):
        fit_diffuse(s.subset(s.cos_alpha > 0))


def test_fit_specular_exact():
    s = phong_samples(0.037, 0.74, 19.9)
    k_d = fit_diffuse(s)
    k_s, n = fit_specular(s, k_d)
    assert k_s == pytest.approx(0.74, rel=1e-4)
    assert n == pytest.approx(19.9, rel=1e-4)


def test_fit_specular_two_points_closed_form():
    ca = np.array([0.9, 0.5])
    Q = 0.6 * ca ** 7.0
    s = CalibrationSamples(Q, np.ones(2), ca, np.zeros((2, 2), int), np.full(2, np.nan))
    k_s, n = fit_specular(s, 0.0, min_samples=2, trim=0.0, refine=False)
    assert n == pytest.approx(math.log(Q[0] / Q[1]) / math.log(0.9 / 0.5), rel=1e-12)
    assert k_s == pytest.approx(0.6, rel=1e-12)


def test_fit_specular_warns_on_dropped_lobe():
    s = phong_samples(0.3, 0.0, 1.0, count=500)
    E = s.radiance.copy()
    lobe = np.flatnonzero(s.cos_alpha > 0.05)
    keep_pos = lobe[: max(10, len(lobe) // 10)]
    E[keep_pos] += 0.2 * s.cos_alpha[keep_pos] ** 5
    with pytest.warns(RuntimeWarning, match="dropped"):
        fit_specular(s.with_radiance(E), 0.3)


def test_fit_specular_no_signal():
    s = phong_samples(0.3, 0.0, 1.0)
    with pytest.raises(NoSpecularSignal):
        fit_specular(s.with_radiance(s.radiance * 0.9), 0.3)


def test_purely_diffuse_data_gives_no_specular():
    s = phong_samples(0.3, 0.0, 1.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        mat, report = fit_samples(s.with_radiance(s.radiance * 0.999))
    assert mat.k_s == 0.0 and not report.specular_found
    assert mat.k_d == pytest.approx(0.2997, rel=1e-6)


def test_holdout_residual_noise_free(tube_capture):
    image, dt, depth, normals, rig, mask = tube_capture
    mat, report = calibrate_material(image, dt, depth, normals, rig, CURVE, mask)
    assert report.rms_relative_residual < 1e-6
    assert report.n_holdout == pytest.approx(0.2 * (report.n_train + report.n_holdout), abs=1)
    for got, want in zip((mat.k_d, mat.k_s, mat.n), (0.037, 0.74, 19.9)):
        assert got == pytest.approx(want, rel=1e-3)


def test_matte_sphere_roundtrip():
    image, dt, depth, normals, rig, mask = sphere_capture(MATTE, CURVE)
    mat, _ = calibrate_material(image, dt, depth, normals, rig, CURVE, mask)
    assert mat.k_d == pytest.approx(0.45, rel=1e-3)
    assert mat.k_s == pytest.approx(0.02, rel=1e-3)
    assert mat.n == pytest.approx(8.65, rel=1e-3)


def test_fit_permutation_invariant():
    s = phong_samples(0.04, 0.82, 38.9, seed=2, noise=0.01)
    perm = np.random.default_rng(0).permutation(len(s))
    a, _ = fit_samples(s, holdout=0.0)
    b, _ = fit_samples(s.subset(perm), holdout=0.0)
    assert a.k_d == pytest.approx(b.k_d, rel=1e-9)
    assert a.k_s == pytest.approx(b.k_s, rel=1e-6)
    assert a.n == pytest.approx(b.n, rel=1e-6)


@settings(max_examples=30)
@given(st.floats(0.02, 0.6), st.floats(0.05, 1.0), st.floats(1.0, 60.0))
def test_identifiable_from_exact_samples(k_d, k_s, n):
    s = phong_samples(k_d, k_s, n, count=3000)
    mat, _ = fit_samples(s)
    assert mat.k_d == pytest.approx(k_d, rel=1e-3)
    assert mat.k_s == pytest.approx(k_s, rel=1e-3)
    assert mat.n == pytest.approx(n, rel=1e-3)


def test_calibrated_material_is_valid():
    s = phong_samples(0.037, 0.74, 19.9, noise=0.01)
    mat, _ = fit_samples(s)
    assert isinstance(mat, PhongMaterial)
    assert mat.k_d >= 0 and mat.k_s >= 0 and mat.n > 0
