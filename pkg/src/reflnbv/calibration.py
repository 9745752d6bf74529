"""Two-stage least-squares estimation of Phong parameters from a white-pattern capture.

Stage one fits ``k_d`` on pixels outside the specular lobe (``cos alpha <
0``). Stage two removes the fitted diffuse part and solves ``ln k_s + n ln cos
alpha = ln(Q / L_in)`` on pixels inside the lobe, then polishes that solution
in the linear domain.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

from .geometry import StereoRig
from .reflectance import PhongMaterial, shading_cosines
from .response import ResponseCurve, radiance_from_intensity


class CalibrationError(ValueError):
    pass


class NoSpecularSignal(CalibrationError):
    pass


@dataclass
class CalibrationSamples:
    """Per-pixel calibration observations, stored column-wise."""

    radiance: np.ndarray
    cos_theta: np.ndarray
    cos_alpha: np.ndarray
    pixels: np.ndarray  # (n, 2) as (row, col)
    intensity: np.ndarray

    def __len__(self):
        return len(self.radiance)

    def subset(self, sel) -> CalibrationSamples:
        return CalibrationSamples(self.radiance[sel], self.cos_theta[sel], self.cos_alpha[sel],
                                  self.pixels[sel], self.intensity[sel])

    def with_radiance(self, radiance) -> CalibrationSamples:
        return CalibrationSamples(np.asarray(radiance, dtype=np.float64), self.cos_theta,
                                  self.cos_alpha, self.pixels, self.intensity)


@dataclass
class FitReport:
    rms_relative_residual: float
    n_train: int
    n_holdout: int
    n_diffuse: int
    n_specular: int
    specular_dropped: float
    specular_found: bool = True


def build_samples(image, dt, depth, normals, rig: StereoRig, curve: ResponseCurve,
                  mask) -> CalibrationSamples:
    """Turn a calibration capture into per-pixel radiance/angle samples.

    Pixels are kept when they are inside ``mask``, unsaturated, above the
    response floor, have valid depth and normal, and face the projector.
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise CalibrationError("object mask is empty")
    Z = np.asarray(image, dtype=np.float64)
    cam = rig.left
    inside = mask & np.isfinite(depth) & np.all(np.isfinite(normals), axis=-1)
    unsat = inside & (Z < curve.z_max)
    if inside.any() and not unsat.any():
        raise CalibrationError("calibration exposure too long: every object pixel is saturated")
    keep = unsat & (Z > curve.z_min)
    rows, cols = np.nonzero(keep)
    pts = cam.backproject(depth)[keep]
    N = normals[keep]
    C = cam.center - pts
    C /= np.linalg.norm(C, axis=1, keepdims=True)
    N = np.where((np.sum(N * C, axis=1) < 0)[:, None], -N, N)
    L = rig.projector_center - pts
    L /= np.linalg.norm(L, axis=1, keepdims=True)
    cos_theta, cos_alpha = shading_cosines(N, L, C)
    facing = cos_theta >= 0
    E = radiance_from_intensity(Z[keep], dt, curve)
    return CalibrationSamples(np.asarray(E)[facing], np.minimum(cos_theta[facing], 1.0),
                              np.clip(cos_alpha[facing], -1.0, 1.0),
                              np.column_stack([rows, cols])[facing], Z[keep][facing])


def _trimmed_lstsq(A, y, w=None, trim: float = 0.05):
    """Weighted least squares, refit once after dropping the worst ``trim`` fraction."""
    w = np.ones(len(y)) if w is None else w
    sw = np.sqrt(w)
    x = np.linalg.lstsq(A * sw[:, None], y * sw, rcond=None)[0]
    if trim > 0 and len(y) >= 20:
        resid = np.abs(A @ x - y) * sw
        keep = resid <= np.quantile(resid, 1.0 - trim)
        x = np.linalg.lstsq(A[keep] * sw[keep, None], y[keep] * sw[keep], rcond=None)[0]
    return x


def fit_diffuse(samples: CalibrationSamples, L_in: float = 1.0, trim: float = 0.05,
                min_samples: int = 10) -> float:
    """``k_d`` from samples outside the specular lobe."""
    sel = samples.cos_alpha < 0
    if sel.sum() < min_samples:
        raise CalibrationError(
            f"only {int(sel.sum())} samples outside the specular lobe (need {min_samples}); "
            "choose a calibration pose that shows more of the object away from the highlight")
    E = samples.radiance[sel]
    x = L_in * samples.cos_theta[sel]
    k_d = _trimmed_lstsq(x[:, None], E, trim=trim)[0]
    return float(max(k_d, 0.0))


def fit_specular(samples: CalibrationSamples, k_d: float, L_in: float = 1.0,
                 eps: float = 0.05, trim: float = 0.05, min_samples: int = 10,
                 refine: bool = True):
    """``(k_s, n)`` from the specular residual ``Q = E - k_d L_in cos(theta)``.

    The closed-form step is a weighted linear fit of ``ln k_s + n ln cos(alpha)
    = ln(Q / L_in)`` over lobe samples (``cos alpha > eps``) with positive
    ``Q``, weighted by ``Q**2`` since ``ln Q`` is noisy where ``Q`` is small.
    With ``refine`` it is followed by a nonlinear least-squares polish of
    ``k_s cos(alpha)**n = Q / L_in`` on every lobe sample, residuals scaled
    by ``1 / E``; the log transform alone is biased once noise is comparable
    to the specular signal.
    """
    lobe = samples.cos_alpha > eps
    E = samples.radiance[lobe]
    ca = samples.cos_alpha[lobe]
    Q = (E - k_d * L_in * samples.cos_theta[lobe]) / L_in
    positive = Q > 1e-9 * np.maximum(E, 1e-300)
    n_lobe = int(lobe.sum())
    if n_lobe and not positive.any():
        raise NoSpecularSignal("no specular signal: the diffuse fit explains every lobe sample")
    if n_lobe and (1.0 - positive.mean()) >= 0.8:
        warnings.warn(f"{100 * (1 - positive.mean()):.0f}% of specular samples have no positive "
                      "residual and were dropped", RuntimeWarning, stacklevel=2)
    if positive.sum() < min_samples:
        raise NoSpecularSignal(f"only {int(positive.sum())} usable specular samples "
                               f"(need {min_samples})")
    Qp = Q[positive]
    A = np.column_stack([np.ones(len(Qp)), np.log(ca[positive])])
    x0 = _trimmed_lstsq(A, np.log(Qp), Qp ** 2, trim=trim)
    if refine:
        scale = 1.0 / E
        res = least_squares(lambda p: (np.exp(p[0]) * ca ** p[1] - Q) * scale, x0, method="lm")
        if res.success and np.all(np.isfinite(res.x)):
            x0 = res.x
    ln_ks, n = x0
    if n <= 0:
        raise CalibrationError(f"fitted glossiness {n:.3g} is not positive")
    return float(np.exp(ln_ks)), float(n)


def predict_radiance(mat: PhongMaterial, cos_theta, cos_alpha, L_in: float = 1.0):
    spec = np.where(cos_alpha > 0, np.maximum(cos_alpha, 0.0) ** mat.n, 0.0)
    return L_in * (mat.k_d * np.maximum(cos_theta, 0.0) + mat.k_s * spec)


def fit_samples(samples: CalibrationSamples, L_in: float = 1.0, holdout: float = 0.2,
                seed: int = 0, trim: float = 0.05):
    """Both stages on a training split plus the residual on the held-out split."""
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(samples))
    n_hold = int(round(holdout * len(samples)))
    test, train = np.sort(perm[:n_hold]), np.sort(perm[n_hold:])
    tr = samples.subset(train)
    k_d = fit_diffuse(tr, L_in, trim)
    lobe = tr.cos_alpha > 0.05
    try:
        k_s, n = fit_specular(tr, k_d, L_in, trim=trim)
        found = True
    except NoSpecularSignal:
        k_s, n, found = 0.0, 1.0, False
    mat = PhongMaterial(k_d, k_s, n)
    te = samples.subset(test) if n_hold else tr
    pred = predict_radiance(mat, te.cos_theta, te.cos_alpha, L_in)
    rms = float(np.sqrt(np.mean(((pred - te.radiance) / te.radiance) ** 2))) if len(te) else 0.0
    Q = tr.radiance[lobe] - k_d * L_in * tr.cos_theta[lobe]
    dropped = float(np.mean(Q <= 0)) if lobe.any() else 0.0
    return mat, FitReport(rms, len(train), n_hold, int((tr.cos_alpha < 0).sum()),
                          int(lobe.sum()), dropped, found)


def calibrate_material(image, dt, depth, normals, rig: StereoRig, curve: ResponseCurve, mask,
                       holdout: float = 0.2, seed: int = 0):
    """Phong parameters and a fit report from one white-pattern calibration capture."""
    samples = build_samples(image, dt, depth, normals, rig, curve, mask)
    return fit_samples(samples, rig.projector_intensity, holdout, seed)
