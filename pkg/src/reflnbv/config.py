"""Experiment configuration: YAML loading, validation and object construction.

Validation collects every problem before failing; each message names the
offending key and, when the value came from a file, its line number.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .geometry import RigidPose, StereoRig
from .mesh import TriangleMesh
from .meshio import load_mesh
from .planner import POLICIES, LoopSettings, PoseHypothesisSet, synthetic_hypotheses, viewpoint_sphere
from .planner import ViewpointCandidate
from .reflectance import PhongMaterial
from .response import ResponseCurve
from .scene import SceneInstance, SceneModel
from .scenes import GENERATORS, MATERIAL_PRESETS
from .sensor import SensingConfig


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.errors))


def config_hash(raw: dict) -> str:
    """SHA-256 of the canonical JSON form (sorted keys), so key order never matters."""
    text = json.dumps(raw, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode()).hexdigest()


def _line_map(text: str) -> dict[str, int]:
    """Dotted key path -> 1-based line of its value."""
    lines: dict[str, int] = {}

    def walk(node, path):
        lines[path] = node.start_mark.line + 1
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                walk(v, f"{path}.{k.value}" if path else str(k.value))
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                walk(v, f"{path}[{i}]")

    root = yaml.compose(text)
    if root is not None:
        walk(root, "")
    return lines


class _Checker:
    def __init__(self, lines: dict[str, int] | None = None):
        self.lines = lines or {}
        self.errors: list[str] = []

    def fail(self, path: str, msg: str):
        probe = path
        while probe and probe not in self.lines:
            probe = probe.rsplit(".", 1)[0] if "." in probe else ""
        where = f" (line {self.lines[probe]})" if probe in self.lines else ""
        self.errors.append(f"{path}{where}: {msg}")

    def section(self, raw: dict, key: str, path: str = "") -> dict:
        full = f"{path}.{key}" if path else key
        val = raw.get(key, {})
        if val is None:
            return {}
        if not isinstance(val, dict):
            self.fail(full, "expected a mapping")
            return {}
        return val

    def number(self, raw: dict, key: str, path: str, default=None, *, positive=False,
               nonneg=False, integer=False):
        full = f"{path}.{key}" if path else key
        if key not in raw:
            if default is None:
                self.fail(full, "is required")
            return default
        val = raw[key]
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            self.fail(full, f"expected a number, got {val!r}")
            return default
        if integer and int(val) != val:
            self.fail(full, f"expected an integer, got {val!r}")
            return default
        if positive and not val > 0:
            self.fail(full, f"must be positive, got {val!r}")
            return default
        if nonneg and val < 0:
            self.fail(full, f"must be nonnegative, got {val!r}")
            return default
        return int(val) if integer else float(val)

    def vector(self, raw: dict, key: str, path: str, default=None):
        full = f"{path}.{key}" if path else key
        if key not in raw:
            if default is None:
                self.fail(full, "is required")
            return None if default is None else np.asarray(default, dtype=np.float64)
        val = raw[key]
        if (not isinstance(val, (list, tuple)) or len(val) != 3
                or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in val)):
            self.fail(full, f"expected three numbers, got {val!r}")
            return None
        return np.asarray(val, dtype=np.float64)

    def pose(self, raw: Any, path: str):
        """Either ``{rotation_deg, translation}`` (xyz Euler) or ``{eye, target, up}``."""
        if not isinstance(raw, dict):
            self.fail(path, "expected a pose mapping")
            return None
        if "eye" in raw:
            eye = self.vector(raw, "eye", path)
            target = self.vector(raw, "target", path, (0.0, 0.0, 0.0))
            up = self.vector(raw, "up", path, (0.0, 0.0, 1.0))
            if eye is None or target is None or up is None:
                return None
            try:
                return RigidPose.look_at(eye, target, up)
            except ValueError as e:
                self.fail(path, str(e))
                return None
        rot = self.vector(raw, "rotation_deg", path, (0.0, 0.0, 0.0))
        t = self.vector(raw, "translation", path, (0.0, 0.0, 0.0))
        if rot is None or t is None:
            return None
        return RigidPose.from_euler(rot, t)


@dataclass
class ObjectSpec:
    mesh: TriangleMesh
    source: str
    pose: RigidPose
    material: str


@dataclass
class CandidateSpec:
    center: np.ndarray | None = None
    radius: float = 400.0
    count: int = 32
    hemisphere: bool = True
    explicit: list[ViewpointCandidate] = field(default_factory=list)

    def build(self) -> list[ViewpointCandidate]:
        if self.explicit:
            return list(self.explicit)
        return viewpoint_sphere(self.center, self.radius, self.count, self.hemisphere)


@dataclass
class HypothesisSpec:
    K: int = 5
    rot_std_deg: float = 3.0
    trans_std_mm: float = 3.0
    sharpness: float = 0.5


@dataclass
class ExperimentConfig:
    objects: list[ObjectSpec]
    target: int
    materials: dict[str, PhongMaterial]
    rig: StereoRig
    reference: RigidPose
    curve: ResponseCurve
    candidates: CandidateSpec
    sensing: SensingConfig
    hypotheses: HypothesisSpec
    policy: str
    loop: LoopSettings
    seeds: list[int]
    output: Path
    raw: dict
    base_dir: Path = Path(".")

    @property
    def hash(self) -> str:
        return config_hash(self.raw)

    def scene(self) -> SceneModel:
        return SceneModel([SceneInstance(o.mesh, o.pose, o.material) for o in self.objects])

    def candidate_list(self) -> list[ViewpointCandidate]:
        """Candidates minus any that coincide with the reference viewpoint."""
        ref = self.reference.translation
        return [c for c in self.candidates.build() if np.linalg.norm(c.center - ref) > 1e-6]

    def pose_hypotheses(self, seed: int) -> PoseHypothesisSet:
        obj = self.objects[self.target]
        h = self.hypotheses
        return synthetic_hypotheses(obj.pose, obj.mesh, h.K, h.rot_std_deg, h.trans_std_mm,
                                    seed=seed, material=obj.material, sharpness=h.sharpness)


def _build_mesh(chk: _Checker, raw: dict, path: str, base: Path):
    src = raw.get("mesh")
    if not isinstance(src, str):
        chk.fail(f"{path}.mesh", "expected a generator name or a mesh file path")
        return None
    params = raw.get("params", {}) or {}
    if src in GENERATORS:
        if not isinstance(params, dict):
            chk.fail(f"{path}.params", "expected a mapping")
            return None
        try:
            return GENERATORS[src](**params)
        except (TypeError, ValueError) as e:
            chk.fail(f"{path}.params", f"cannot build {src!r}: {e}")
            return None
    p = (base / src).resolve()
    if not p.exists():
        chk.fail(f"{path}.mesh", f"mesh file not found: {p}")
        return None
    try:
        return load_mesh(p)
    except Exception as e:  # malformed file contents
        chk.fail(f"{path}.mesh", f"cannot read {p}: {e}")
        return None


def parse_config(raw: dict, base_dir=".", lines: dict[str, int] | None = None) -> ExperimentConfig:
    """Validate a raw mapping; raises :class:`ConfigError` listing every problem."""
    chk = _Checker(lines)
    base = Path(base_dir)
    if not isinstance(raw, dict):
        raise ConfigError(["top level: expected a mapping"])

    # materials
    materials: dict[str, PhongMaterial] = {}
    for name, m in chk.section(raw, "materials").items():
        path = f"materials.{name}"
        if isinstance(m, str):
            if m not in MATERIAL_PRESETS:
                chk.fail(path, f"unknown material preset {m!r}; choose from {sorted(MATERIAL_PRESETS)}")
            else:
                materials[name] = MATERIAL_PRESETS[m]
        elif isinstance(m, dict):
            k_d = chk.number(m, "k_d", path, nonneg=True)
            k_s = chk.number(m, "k_s", path, nonneg=True)
            n = chk.number(m, "n", path, positive=True)
            if None not in (k_d, k_s, n):
                materials[name] = PhongMaterial(k_d, k_s, n)
        else:
            chk.fail(path, "expected a preset name or {k_d, k_s, n}")

    # scene
    scene = chk.section(raw, "scene")
    objects = []
    objs = scene.get("objects")
    if not isinstance(objs, list) or not objs:
        chk.fail("scene.objects", "expected a nonempty list of objects")
        objs = []
    for i, o in enumerate(objs):
        path = f"scene.objects[{i}]"
        if not isinstance(o, dict):
            chk.fail(path, "expected a mapping")
            continue
        mesh = _build_mesh(chk, o, path, base)
        pose = chk.pose(o.get("pose", {}), f"{path}.pose")
        mat = o.get("material")
        defined = raw.get("materials") if isinstance(raw.get("materials"), dict) else {}
        if mat not in defined:
            chk.fail(f"{path}.material", f"material {mat!r} is not defined under materials")
        if mesh is not None and pose is not None:
            objects.append(ObjectSpec(mesh, str(o.get("mesh")), pose, str(mat)))
    target = chk.number(scene, "target", "scene", 0, nonneg=True, integer=True)
    if objs and target is not None and target >= len(objs):
        chk.fail("scene.target", f"index {target} out of range for {len(objs)} objects")

    # rig
    r = chk.section(raw, "rig")
    width = chk.number(r, "width", "rig", 128, positive=True, integer=True)
    height = chk.number(r, "height", "rig", 96, positive=True, integer=True)
    fx = chk.number(r, "fx", "rig", 200.0, positive=True)
    fy = chk.number(r, "fy", "rig", fx or 200.0, positive=True)
    baseline = chk.number(r, "baseline", "rig", 60.0, positive=True)
    intensity = chk.number(r, "projector_intensity", "rig", 1.0, positive=True)
    ambient = chk.number(r, "ambient", "rig", 0.0, nonneg=True)
    offset = chk.vector(r, "projector_offset", "rig", (0.0, 0.0, 0.0))
    rig = None
    if None not in (width, height, fx, fy, baseline, intensity, ambient) and offset is not None:
        rig = StereoRig.standard(width, height, fx, fy, baseline, offset, intensity, ambient)

    reference = chk.pose(raw.get("reference"), "reference") if "reference" in raw else None
    if "reference" not in raw:
        chk.fail("reference", "is required (rig pose of the reference view)")

    # response
    resp = chk.section(raw, "response")
    curve = None
    if "path" in resp:
        p = (base / str(resp["path"])).resolve()
        if not p.exists():
            chk.fail("response.path", f"response curve file not found: {p}")
        else:
            try:
                curve = ResponseCurve.load(p)
            except Exception as e:
                chk.fail("response.path", f"cannot read {p}: {e}")
    else:
        gamma = chk.number(resp, "gamma", "response", 2.2, positive=True)
        if gamma is not None:
            curve = ResponseCurve.gamma(gamma)

    # candidates
    cs = chk.section(raw, "candidates")
    cand = CandidateSpec()
    if "explicit" in cs:
        ex = cs["explicit"]
        if not isinstance(ex, list) or not ex:
            chk.fail("candidates.explicit", "expected a nonempty list of poses")
        else:
            for i, e in enumerate(ex):
                p = chk.pose(e, f"candidates.explicit[{i}]")
                if p is not None:
                    cid = e.get("id", i) if isinstance(e, dict) else i
                    cand.explicit.append(ViewpointCandidate(int(cid), p))
            ids = [c.id for c in cand.explicit]
            if len(set(ids)) != len(ids):
                chk.fail("candidates.explicit", "candidate ids must be unique")
    else:
        sph = chk.section(cs, "sphere", "candidates")
        cand.center = chk.vector(sph, "center", "candidates.sphere", (0.0, 0.0, 0.0))
        cand.radius = chk.number(sph, "radius", "candidates.sphere", 400.0, positive=True)
        cand.count = chk.number(sph, "count", "candidates.sphere", 32, positive=True, integer=True)
        cand.hemisphere = bool(sph.get("hemisphere", True))

    # sensing
    s = chk.section(raw, "sensing")
    sensing = None
    vals = dict(
        sigma=chk.number(s, "sigma", "sensing", 100.0, positive=True),
        z_min_valid=chk.number(s, "z_min_valid", "sensing", 5.0, nonneg=True),
        z_max_valid=chk.number(s, "z_max_valid", "sensing", 255.0, positive=True),
        exposure_time=chk.number(s, "exposure_time", "sensing", 4.0, positive=True),
        threshold=chk.number(s, "threshold", "sensing", 0.5, positive=True),
        depth_noise_std=chk.number(s, "depth_noise_std", "sensing", 0.1, nonneg=True),
    )
    vals["dropout"] = s.get("dropout", "stochastic")
    if "falloff_ref" in s and s["falloff_ref"] is not None:
        vals["falloff_ref"] = chk.number(s, "falloff_ref", "sensing", positive=True)
    vals["shadows"] = bool(s.get("shadows", True))
    if None not in vals.values():
        try:
            sensing = SensingConfig(**vals)
        except ValueError as e:
            chk.fail("sensing", str(e))

    h = chk.section(raw, "hypotheses")
    hyp = HypothesisSpec(
        K=chk.number(h, "K", "hypotheses", 5, positive=True, integer=True),
        rot_std_deg=chk.number(h, "rot_std_deg", "hypotheses", 3.0, nonneg=True),
        trans_std_mm=chk.number(h, "trans_std_mm", "hypotheses", 3.0, nonneg=True),
        sharpness=chk.number(h, "sharpness", "hypotheses", 0.5, nonneg=True),
    )

    policy = raw.get("policy", "nbv")
    if not isinstance(policy, str) or policy not in POLICIES:
        chk.fail("policy", f"expected exactly one of {', '.join(POLICIES)}, got {policy!r}")
        policy = "nbv"

    st = chk.section(raw, "stop")
    thr = st.get("gain_threshold", 0.0)
    if isinstance(thr, str) and thr.lower() in ("inf", "+inf", ".inf"):
        thr = float("inf")
    if isinstance(thr, bool) or not isinstance(thr, (int, float)) or thr < 0:
        chk.fail("stop.gain_threshold", f"must be a nonnegative number, got {thr!r}")
        thr = 0.0
    max_views = chk.number(st, "max_views", "stop", 3, nonneg=True, integer=True)
    fu = chk.section(raw, "fusion")
    ic = chk.section(raw, "icp")
    me = chk.section(raw, "metrics")
    loop_vals = dict(
        policy=policy, max_views=max_views, gain_threshold=float(thr),
        consistency_mm=chk.number(fu, "consistency_mm", "fusion", 2.0, positive=True),
        completion_err_mm=chk.number(me, "completion_err_mm", "metrics", 2.0, positive=True),
        evaluate_pose=bool(ic.get("enabled", True)),
        icp_corr_dist=chk.number(ic, "corr_dist", "icp", 5.0, positive=True),
        icp_max_iter=chk.number(ic, "max_iter", "icp", 50, positive=True, integer=True),
        score_baselines=bool(raw.get("score_baselines", False)),
        refresh_hypotheses=bool(h.get("refresh", False)),
    )
    if loop_vals["refresh_hypotheses"] and not loop_vals["evaluate_pose"]:
        chk.fail("hypotheses.refresh", "needs icp.enabled: the refresh follows the ICP estimate")

    seeds = raw.get("seeds", [0])
    if isinstance(seeds, int) and not isinstance(seeds, bool):
        seeds = list(range(seeds))
    if (not isinstance(seeds, list) or not seeds
            or not all(isinstance(x, int) and not isinstance(x, bool) and x >= 0 for x in seeds)):
        chk.fail("seeds", "expected a count or a nonempty list of nonnegative integers")
        seeds = [0]
    elif len(set(seeds)) != len(seeds):
        chk.fail("seeds", "seeds must be distinct")

    output = raw.get("output", "results")
    if not isinstance(output, str):
        chk.fail("output", "expected a directory path")
        output = "results"

    if chk.errors:
        raise ConfigError(chk.errors)
    return ExperimentConfig(objects, target, materials, rig, reference, curve, cand, sensing, hyp,
                            policy, LoopSettings(**loop_vals), list(seeds), base / output, raw, base)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError([f"{path}: file not found"])
    text = path.read_text()
    try:
        raw = yaml.safe_load(text)
        lines = _line_map(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        where = f" (line {mark.line + 1})" if mark is not None else ""
        raise ConfigError([f"{path}{where}: YAML parse error: {getattr(e, 'problem', e)}"]) from None
    return parse_config(raw if raw is not None else {}, path.parent, lines)
