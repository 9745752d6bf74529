"""Camera photometric response: recovery from an exposure stack and its use.

The curve is stored as its inverse log form ``g[z] = ln f^-1(z)`` tabulated
at every integer intensity, anchored so that ``g`` at the mid intensity is 0.
Fractional intensities are linearly interpolated.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

log = logging.getLogger(__name__)


class ResponseFitError(ValueError):
    pass


@dataclass(frozen=True)
class ResponseCurve:
    g: np.ndarray
    z_min: int = 0
    z_max: int = 255

    def __post_init__(self):
        g = np.array(self.g, dtype=np.float64)
        if g.shape != (self.z_max - self.z_min + 1,):
            raise ValueError("g must have one entry per intensity level")
        if np.any(np.diff(g) <= 0):
            raise ValueError("g must be strictly increasing")
        g.setflags(write=False)
        object.__setattr__(self, "g", g)

    @property
    def levels(self) -> np.ndarray:
        return np.arange(self.z_min, self.z_max + 1, dtype=np.float64)

    @property
    def mid(self) -> float:
        return (self.z_min + self.z_max) / 2.0

    def log_exposure(self, Z):
        """``g(Z)`` with linear interpolation between table entries."""
        return np.interp(Z, self.levels, self.g)

    def intensity(self, log_x):
        """Inverse of :meth:`log_exposure`, clamped to ``[z_min, z_max]``."""
        return np.interp(log_x, self.g, self.levels)

    def anchored(self) -> ResponseCurve:
        return ResponseCurve(self.g - self.log_exposure(self.mid), self.z_min, self.z_max)

    @classmethod
    def gamma(cls, gamma: float = 2.2, z_min: int = 0, z_max: int = 255) -> ResponseCurve:
        """Curve of ``Z = z_max * (X / X_sat) ** (1 / gamma)``, anchored at the mid level."""
        z = np.arange(z_min, z_max + 1, dtype=np.float64)
        with np.errstate(divide="ignore"):
            g = gamma * np.log(z / z_max)
        if not np.isfinite(g[0]):
            g[0] = 2 * g[1] - g[2]
        return cls(g, z_min, z_max).anchored()

    @classmethod
    def linear(cls, z_min: int = 0, z_max: int = 255) -> ResponseCurve:
        return cls.gamma(1.0, z_min, z_max)

    def save(self, path) -> None:
        lines = [f"# inverse log response g(z) = ln f^-1(z); z_min={self.z_min} z_max={self.z_max}"]
        lines += [f"{int(z)} {v:.12g}" for z, v in zip(self.levels, self.g)]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> ResponseCurve:
        data = np.loadtxt(path, comments="#", ndmin=2)
        z = data[:, 0].astype(int)
        return cls(data[:, 1], int(z.min()), int(z.max()))


@dataclass
class ExposureStack:
    images: Sequence[np.ndarray]
    exposure_times: Sequence[float]
    paths: list[str] = field(default_factory=list)

    def __post_init__(self):
        if len(self.images) < 2:
            raise ValueError("an exposure stack needs at least two images")
        if len(self.images) != len(self.exposure_times):
            raise ValueError("one exposure time per image is required")
        shapes = {np.shape(im) for im in self.images}
        if len(shapes) != 1:
            raise ValueError("all images must share the same dimensions")
        dt = np.asarray(self.exposure_times, dtype=np.float64)
        if np.any(dt <= 0):
            raise ValueError("exposure times must be positive")
        if len(np.unique(dt)) != len(dt):
            raise ValueError("exposure times must be distinct")

    @classmethod
    def from_manifest(cls, path) -> ExposureStack:
        """Load a YAML manifest ``{images: [{path: ..., exposure_ms: ...}, ...]}``."""
        from .imageio import read_intensity_png

        path = Path(path)
        spec = yaml.safe_load(path.read_text())
        entries = spec.get("images") if isinstance(spec, dict) else None
        if (not isinstance(entries, list)
                or not all(isinstance(e, dict) and "path" in e and "exposure_ms" in e
                           for e in entries)):
            raise ValueError(f"{path}: expected images: [{{path, exposure_ms}}, ...]")
        paths = [str((path.parent / e["path"]).resolve()) for e in entries]
        images = [read_intensity_png(p) for p in paths]
        return cls(images, [float(e["exposure_ms"]) for e in entries], paths)


def hat_weight(z, z_min: int = 0, z_max: int = 255):
    mid = (z_min + z_max) / 2.0
    z = np.asarray(z, dtype=np.float64)
    return np.where(z <= mid, z - z_min, z_max - z)


def stratified_samples(reference: np.ndarray, samples: int, bins: int = 32, seed: int = 0,
                       z_min: int = 0, z_max: int = 255) -> np.ndarray:
    """Flat pixel indices picked evenly across intensity bins of ``reference``."""
    rng = np.random.default_rng(seed)
    flat = np.asarray(reference).ravel()
    edges = np.linspace(z_min, z_max + 1, bins + 1)
    which = np.digitize(flat, edges) - 1
    per_bin = max(1, samples // bins)
    chosen = []
    for b in range(bins):
        idx = np.flatnonzero(which == b)
        if len(idx):
            chosen.append(rng.choice(idx, size=min(per_bin, len(idx)), replace=False))
    return np.sort(np.concatenate(chosen)) if chosen else np.array([], dtype=np.int64)


def _coverage_gaps(observed: np.ndarray, lo: int, hi: int):
    gaps, start = [], None
    for z in range(lo, hi + 1):
        if not observed[z]:
            start = z if start is None else start
        elif start is not None:
            gaps.append((start, z - 1))
            start = None
    if start is not None:
        gaps.append((start, hi))
    return gaps


def _isotonic(y: np.ndarray) -> np.ndarray:
    """Pool-adjacent-violators projection onto nondecreasing sequences."""
    blocks = []  # (mean, size)
    for v in y:
        blocks.append([float(v), 1])
        while len(blocks) > 1 and blocks[-2][0] > blocks[-1][0]:
            m2, n2 = blocks.pop()
            m1, n1 = blocks.pop()
            blocks.append([(m1 * n1 + m2 * n2) / (n1 + n2), n1 + n2])
    return np.concatenate([np.full(n, m) for m, n in blocks])


def recover_response(stack: ExposureStack, lam: float = 100.0, samples: int = 256,
                     z_min: int = 0, z_max: int = 255, max_gap: int = 32,
                     seed: int = 0) -> ResponseCurve:
    """Least-squares recovery of ``g`` from a multi-exposure stack.

    Solves ``w(Z_ij) (g(Z_ij) - ln E_i) = w(Z_ij) ln dt_j`` over stratified
    sample pixels, with a hat-weighted second-difference smoothness penalty of
    strength ``lam`` and the constraint ``g(mid) = 0``.
    """
    imgs = np.stack([np.asarray(im) for im in stack.images]).reshape(len(stack.images), -1)
    imgs = np.rint(imgs).astype(np.int64)
    ln_dt = np.log(np.asarray(stack.exposure_times, dtype=np.float64))
    ref = imgs[len(imgs) // 2]
    pix = stratified_samples(ref, samples, seed=seed, z_min=z_min, z_max=z_max)
    Z = imgs[:, pix].T  # (samples, exposures)
    w = hat_weight(Z, z_min, z_max)
    informative = (w > 0).any(axis=1)
    Z, w = Z[informative], w[informative]
    if len(Z) < 50:
        raise ResponseFitError(f"only {len(Z)} informative sample pixels; need at least 50")

    observed = np.zeros(z_max + 1, dtype=bool)
    observed[Z[w > 0]] = True
    gaps = [g for g in _coverage_gaps(observed, z_min + 1, z_max - 1) if g[1] - g[0] + 1 > max_gap]
    if gaps:
        desc = ", ".join(f"{a}-{b}" for a, b in gaps)
        raise ResponseFitError(f"insufficient intensity coverage: no samples in {desc}")

    n_lev = z_max - z_min + 1
    n_s, n_e = Z.shape
    rows = n_s * n_e + 1 + (n_lev - 2)
    A = np.zeros((rows, n_lev + n_s))
    b = np.zeros(rows)
    r = np.arange(n_s * n_e)
    zi = (Z - z_min).ravel()
    si = np.repeat(np.arange(n_s), n_e)
    wf = w.ravel()
    A[r, zi] = wf
    A[r, n_lev + si] = -wf
    b[r] = wf * np.tile(ln_dt, n_s)
    k = n_s * n_e
    mid = (z_min + z_max) / 2.0 - z_min
    lo = int(np.floor(mid))
    frac = mid - lo
    A[k, lo] += 1.0 - frac
    if frac > 0:
        A[k, lo + 1] += frac
    k += 1
    for z in range(1, n_lev - 1):
        wz = lam * hat_weight(z + z_min, z_min, z_max)
        A[k, z - 1], A[k, z], A[k, z + 1] = wz, -2 * wz, wz
        k += 1
    x, _, rank, _ = np.linalg.lstsq(A, b, rcond=None)
    if rank < A.shape[1]:
        raise ResponseFitError("response system is singular; widen the exposure range")
    g = x[:n_lev]

    bad = int(np.sum(np.diff(g) <= 0))
    if bad:
        if bad > 0.005 * n_lev:
            raise ResponseFitError(f"recovered response is not monotone at {bad} levels")
        log.info("projecting %d non-monotone response entries", bad)
        g = _isotonic(g) + 1e-9 * np.arange(n_lev)
    curve = ResponseCurve(g, z_min, z_max)
    return curve.anchored()


def exposure_intensity(E, dt, curve: ResponseCurve):
    """Continuous intensity for radiance ``E`` and exposure ``dt``.

    Over-exposed values come back as ``+inf`` so saturation stays visible;
    zero radiance maps to ``z_min``.
    """
    E = np.asarray(E, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_x = np.log(E) + np.log(dt)
    Z = curve.intensity(np.where(E > 0, log_x, -np.inf))
    Z = np.where(E > 0, Z, float(curve.z_min))
    return np.where(log_x > curve.g[-1], np.inf, Z)


def intensity_from_radiance(E, dt, curve: ResponseCurve):
    """Intensity clamped to the sensor range (saturation at ``z_max``)."""
    if np.any(np.asarray(E) < 0) or dt <= 0:
        raise ValueError("radiance must be nonnegative and exposure positive")
    Z = np.minimum(exposure_intensity(E, dt, curve), curve.z_max)
    return Z if np.ndim(Z) else float(Z)


def radiance_from_intensity(Z, dt, curve: ResponseCurve):
    """Radiance ``exp(g(Z) - ln dt)``; NaN for saturated or floor pixels."""
    Z = np.asarray(Z, dtype=np.float64)
    E = np.exp(curve.log_exposure(Z) - np.log(dt))
    E = np.where((Z > curve.z_min) & (Z < curve.z_max), E, np.nan)
    return E if np.ndim(E) else float(E)
