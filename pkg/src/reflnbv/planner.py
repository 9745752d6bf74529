"""Next-best-view planning from pose hypotheses and the sensing model.

The gain of a candidate viewpoint is the expected number of currently
missing reference-view depth pixels it would measure, averaged over pose
hypotheses with softmax weights of their confidences.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .fusion import FusionState, fuse_view
from .geometry import PinholeCamera, RigidPose, StereoRig
from .icp import icp_refine
from .mesh import TriangleMesh
from .metrics import PoseEstimate, depth_completion_pct
from .response import ResponseCurve
from .scene import SceneInstance, SceneModel, raycast_view
from .sensor import SensingConfig, point_probabilities, simulate_capture, stereo_probability

log = logging.getLogger(__name__)

POLICIES = ("nbv", "random", "max-distance")


def softmax(c) -> np.ndarray:
    c = np.asarray(c, dtype=np.float64)
    e = np.exp(c - c.max())
    return e / e.sum()


@dataclass(frozen=True)
class PoseHypothesis:
    pose: RigidPose
    confidence: float
    mesh: TriangleMesh
    material: str = "default"

    def __post_init__(self):
        if not np.isfinite(self.confidence):
            raise ValueError("hypothesis confidence must be finite")

    def scene(self) -> SceneModel:
        return SceneModel([SceneInstance(self.mesh, self.pose, self.material)])


class PoseHypothesisSet:
    def __init__(self, hypotheses: Sequence[PoseHypothesis]):
        if not hypotheses:
            raise ValueError("need at least one pose hypothesis")
        self.hypotheses = tuple(hypotheses)
        self.weights = softmax([h.confidence for h in self.hypotheses])

    def __len__(self):
        return len(self.hypotheses)

    def __iter__(self):
        return iter(self.hypotheses)

    def __getitem__(self, k):
        return self.hypotheses[k]

    def best(self) -> PoseHypothesis:
        return self.hypotheses[int(np.argmax([h.confidence for h in self.hypotheses]))]

    def moved(self, delta: RigidPose) -> PoseHypothesisSet:
        """Every pose composed with the world motion ``delta``; confidences kept."""
        return PoseHypothesisSet([PoseHypothesis(delta @ h.pose, h.confidence, h.mesh, h.material)
                                  for h in self.hypotheses])

    def shifted(self, delta: float) -> PoseHypothesisSet:
        return PoseHypothesisSet([PoseHypothesis(h.pose, h.confidence + delta, h.mesh, h.material)
                                  for h in self.hypotheses])


def synthetic_hypotheses(gt_pose: RigidPose, mesh: TriangleMesh, K: int = 5,
                         rot_std_deg: float = 3.0, trans_std_mm: float = 3.0, seed: int = 0,
                         material: str = "default", sharpness: float = 0.5) -> PoseHypothesisSet:
    """Stand-in for a template-matching detector: K noisy copies of the true pose.

    Each hypothesis is rotated by a Gaussian rotation vector (per-axis std
    ``rot_std_deg``) about the object origin and shifted by Gaussian noise
    (``trans_std_mm``). Its confidence is ``-sharpness * m * exp(0.25 xi)``
    where ``m`` is the error in degrees plus millimetres and ``xi`` is standard
    normal, so better poses tend to score higher without being a perfect
    ranking.
    """
    if K < 1:
        raise ValueError("K must be at least 1")
    rng = np.random.default_rng(seed)
    hyps = []
    for _ in range(K):
        rv = rng.standard_normal(3) * np.radians(rot_std_deg)
        dt = rng.standard_normal(3) * trans_std_mm
        xi = rng.standard_normal()
        delta = RigidPose.from_rotvec(rv)
        pose = RigidPose(delta.rotation @ gt_pose.rotation, gt_pose.translation + dt)
        magnitude = np.degrees(np.linalg.norm(rv)) + np.linalg.norm(dt)
        hyps.append(PoseHypothesis(pose, float(-sharpness * magnitude * np.exp(0.25 * xi)),
                                   mesh, material))
    return PoseHypothesisSet(hyps)


def hypothesis_maps(h: PoseHypothesis, camera: PinholeCamera):
    """Depth and normal maps of the hypothesised object alone in ``camera``."""
    depth, normals, _ = raycast_view(h.scene(), camera)
    return depth, normals


@dataclass(frozen=True)
class ViewpointCandidate:
    id: int
    pose: RigidPose  # world pose of the rig frame

    @property
    def center(self) -> np.ndarray:
        return self.pose.translation


def viewpoint_sphere(center, radius: float, count: int, hemisphere: bool = True,
                     up=(0.0, 0.0, 1.0), start_id: int = 0) -> list[ViewpointCandidate]:
    """Fibonacci-lattice rig poses on a (hemi)sphere, each looking at ``center``.

    The first viewpoint sits on the pole along ``up``.
    """
    if count < 1 or radius <= 0:
        raise ValueError("count must be >= 1 and radius > 0")
    center = np.asarray(center, dtype=np.float64)
    up = np.asarray(up, dtype=np.float64)
    up = up / np.linalg.norm(up)
    # orthonormal basis around up
    a = np.array([1.0, 0.0, 0.0]) if abs(up[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(up, a)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(up, e1)
    golden = np.pi * (3.0 - np.sqrt(5.0))
    out = []
    for i in range(count):
        if hemisphere:
            h = 1.0 - i / count
        else:
            h = 1.0 - 2.0 * i / (count - 1) if count > 1 else 1.0
        r = np.sqrt(max(0.0, 1.0 - h * h))
        phi = golden * i
        d = h * up + r * (np.cos(phi) * e1 + np.sin(phi) * e2)
        eye = center + radius * d
        out.append(ViewpointCandidate(start_id + i, RigidPose.look_at(eye, center, up)))
    return out


@dataclass
class PlanningContext:
    """Sensor model shared by every gain evaluation."""

    reference: PinholeCamera
    rig: StereoRig  # rig in its own frame; candidates place it in the world
    materials: dict
    curve: ResponseCurve
    cfg: SensingConfig


def pixel_gains(ctx: PlanningContext, h: PoseHypothesis, depth: np.ndarray, normals: np.ndarray,
                pixels: np.ndarray, candidate: ViewpointCandidate) -> np.ndarray:
    """Predicted depth-sensing probability of reference pixels seen from a candidate.

    ``pixels`` is ``(n, 2)`` as ``(row, col)``; ``depth``/``normals`` are the
    hypothesis maps in the reference view. Pixels without hypothesis depth
    score zero.
    """
    pixels = np.asarray(pixels, dtype=np.int64).reshape(-1, 2)
    out = np.zeros(len(pixels))
    if not len(pixels):
        return out
    d = depth[pixels[:, 0], pixels[:, 1]]
    ok = np.isfinite(d)
    if not ok.any():
        return out
    rows, cols = pixels[ok, 0], pixels[ok, 1]
    X = ctx.reference.backproject(d[ok], cols.astype(np.float64), rows.astype(np.float64))
    N = normals[rows, cols]
    rig = ctx.rig.placed(candidate.pose)
    scene = h.scene()
    P_l, P_r, _, _ = point_probabilities(scene, rig, ctx.materials, ctx.curve, ctx.cfg, X, N,
                                         np.zeros(len(X), dtype=np.int64))
    out[ok] = stereo_probability(P_l, P_r)
    return out


def pixel_gain(ctx, h, depth, normals, u, candidate) -> float:
    """Gain of a single reference pixel ``u = (row, col)``."""
    return float(pixel_gains(ctx, h, depth, normals, np.asarray([u]), candidate)[0])


def missing_pixels(current_depth: np.ndarray, hyp_depths: Sequence[np.ndarray]) -> np.ndarray:
    """Reference pixels without depth that fall inside some hypothesis silhouette."""
    silhouette = np.zeros(current_depth.shape, dtype=bool)
    for d in hyp_depths:
        silhouette |= np.isfinite(d)
    return np.argwhere(np.isnan(current_depth) & silhouette)


@dataclass
class GainReport:
    ids: list[int]
    gains: np.ndarray
    per_hypothesis: np.ndarray  # (candidates, K) unweighted pixel sums
    weights: np.ndarray
    chosen: int

    @property
    def best_gain(self) -> float:
        return float(self.gains[self.ids.index(self.chosen)])

    def rows(self):
        for i, cid in enumerate(self.ids):
            yield cid, float(self.gains[i]), [float(x) for x in self.per_hypothesis[i]]


def viewpoint_gain(ctx: PlanningContext, candidate: ViewpointCandidate,
                   hypotheses: PoseHypothesisSet, missing: np.ndarray, maps=None):
    """``(G, per_hypothesis_sums)`` for one candidate."""
    maps = maps or [hypothesis_maps(h, ctx.reference) for h in hypotheses]
    sums = np.array([pixel_gains(ctx, h, d, n, missing, candidate).sum()
                     for h, (d, n) in zip(hypotheses, maps)])
    return float(np.dot(hypotheses.weights, sums)), sums


def select_max(ids: Sequence[int], gains) -> int:
    """Id of the largest gain; ties go to the lowest id."""
    gains = np.asarray(gains, dtype=np.float64)
    if not len(ids):
        raise ValueError("no candidate viewpoints")
    best = gains.max()
    return min(i for i, g in zip(ids, gains) if g == best)


def score_candidates(ctx: PlanningContext, candidates: Sequence[ViewpointCandidate],
                     hypotheses: PoseHypothesisSet, missing: np.ndarray, maps=None,
                     workers: int = 1) -> GainReport:
    """Gain of every candidate; ``workers > 1`` scores candidates on a thread pool."""
    if not candidates:
        raise ValueError("no candidate viewpoints")
    maps = maps or [hypothesis_maps(h, ctx.reference) for h in hypotheses]

    def one(c):
        return viewpoint_gain(ctx, c, hypotheses, missing, maps)[1]

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            per = np.array(list(pool.map(one, candidates)))
    else:
        per = np.array([one(c) for c in candidates])
    gains = per @ hypotheses.weights
    ids = [c.id for c in candidates]
    return GainReport(ids, gains, per, hypotheses.weights, select_max(ids, gains))


def select_nbv(ctx, candidates, hypotheses, missing, maps=None, workers: int = 1):
    report = score_candidates(ctx, candidates, hypotheses, missing, maps, workers)
    chosen = next(c for c in candidates if c.id == report.chosen)
    return chosen, report


def baseline_random(candidates: Sequence[ViewpointCandidate], rng) -> ViewpointCandidate:
    """Uniform pick; the caller removes it from the pool, so picks are without replacement."""
    if not candidates:
        raise ValueError("candidate pool is exhausted")
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    return candidates[int(rng.integers(len(candidates)))]


def baseline_max_distance(candidates: Sequence[ViewpointCandidate], visited) -> ViewpointCandidate:
    """Candidate whose closest visited viewpoint is farthest away (ties: first in order)."""
    if not candidates:
        raise ValueError("candidate pool is exhausted")
    visited = np.asarray(visited, dtype=np.float64).reshape(-1, 3)
    if not len(visited):
        raise ValueError("max-distance baseline needs at least one visited viewpoint")
    centers = np.array([c.center for c in candidates])
    dmin = np.linalg.norm(centers[:, None, :] - visited[None, :, :], axis=2).min(axis=1)
    return candidates[int(np.argmax(dmin))]


@dataclass
class IterationRecord:
    iteration: int
    chosen: int  # -1 for the reference capture
    gain: float
    completion: float
    missing: int
    add: float = float("nan")
    correct: bool = False
    wall_ms: float = 0.0


@dataclass
class LoopResult:
    fused_depth: np.ndarray
    initial_depth: np.ndarray
    true_depth: np.ndarray
    object_mask: np.ndarray
    trajectory: list[int]
    records: list[IterationRecord]
    stop_reason: str
    reports: list[GainReport] = field(default_factory=list)
    poses: list = field(default_factory=list)


@dataclass(frozen=True)
class LoopSettings:
    policy: str = "nbv"
    max_views: int = 3
    gain_threshold: float = 0.0  # stop once the best expected gain drops below this
    consistency_mm: float = 2.0
    completion_err_mm: float = 2.0
    evaluate_pose: bool = True
    icp_corr_dist: float = 5.0
    icp_max_iter: int = 50
    score_baselines: bool = False  # also compute gains when a baseline picks the view
    workers: int = 1
    refresh_hypotheses: bool = False  # follow the latest ICP estimate; needs evaluate_pose

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise ValueError(f"unknown policy {self.policy!r}; expected one of {POLICIES}")
        if self.max_views < 0:
            raise ValueError("max_views must be nonnegative")
        if self.refresh_hypotheses and not self.evaluate_pose:
            raise ValueError("refresh_hypotheses needs evaluate_pose (the ICP estimate)")


def capture_seed(seed: int, view: int) -> int:
    """Noise seed of a capture; the reference is view -1, candidates use their id.

    Keying on the viewpoint gives every policy the same measurement from the
    same viewpoint under one run seed.
    """
    return int(np.random.SeedSequence([seed, view + 1]).generate_state(1)[0])


def run_nbv_loop(scene: SceneModel, rig: StereoRig, reference_pose: RigidPose,
                 candidates: Sequence[ViewpointCandidate], hypotheses: PoseHypothesisSet,
                 materials: dict, curve: ResponseCurve, cfg: SensingConfig,
                 settings: LoopSettings = LoopSettings(), seed: int = 0,
                 target: int = 0) -> LoopResult:
    """Capture from the reference pose, then add views chosen by ``settings.policy``.

    ``rig`` is given in its own frame; the reference pose and each candidate
    pose place it in the world. Depth from every new view is fused into the
    reference left camera. ``target`` selects the scene instance whose
    ground-truth silhouette and pose drive the metrics.
    """
    ref_rig = rig.placed(reference_pose)
    ref_cam = ref_rig.left
    ctx = PlanningContext(ref_cam, rig, materials, curve, cfg)
    obj = scene.instances[target]

    t0 = time.perf_counter()
    cap0 = simulate_capture(scene, ref_rig, materials, curve, cfg, seed=capture_seed(seed, -1))
    object_mask = cap0.hits == target
    state = FusionState.initial(ref_cam, cap0.depth)
    maps = [hypothesis_maps(h, ref_cam) for h in hypotheses]
    hyp_depths = [d for d, _ in maps]
    rng = np.random.default_rng([seed, 17])

    def evaluate(iteration, chosen, gain, t_start):
        completion = depth_completion_pct(cap0.depth, state.depth, cap0.true_depth,
                                          settings.completion_err_mm, object_mask)
        missing = len(missing_pixels(state.depth, hyp_depths))
        add, correct, pose = float("nan"), False, None
        if settings.evaluate_pose:
            observed = ref_cam.backproject(state.depth)[object_mask & state.valid]
            res = icp_refine(hypotheses.best().pose, obj.mesh, observed,
                             settings.icp_max_iter, settings.icp_corr_dist, seed=seed)
            est = PoseEstimate.evaluate(res.pose, obj.pose, obj.mesh)
            add, correct, pose = est.add, est.correct, res.pose
        rec = IterationRecord(iteration, chosen, gain, completion, missing, add, correct,
                              1000.0 * (time.perf_counter() - t_start))
        return rec, pose

    rec, pose = evaluate(0, -1, float("nan"), t0)
    records, poses, reports, trajectory = [rec], [pose], [], []
    pool = list(candidates)
    visited = [ref_rig.projector_center]
    stop = "budget"
    for it in range(1, settings.max_views + 1):
        t_it = time.perf_counter()
        missing = missing_pixels(state.depth, hyp_depths)
        if not len(missing):
            stop = "complete"
            break
        if not pool:
            stop = "exhausted"
            break
        report = None
        if settings.policy == "nbv" or settings.score_baselines or settings.gain_threshold > 0:
            report = score_candidates(ctx, pool, hypotheses, missing, maps, settings.workers)
            reports.append(report)
            if report.best_gain < settings.gain_threshold:
                stop = "threshold"
                break
        if settings.policy == "nbv":
            choice = next(c for c in pool if c.id == report.chosen)
        elif settings.policy == "random":
            choice = baseline_random(pool, rng)
        else:
            choice = baseline_max_distance(pool, visited)
        gain = float(report.gains[report.ids.index(choice.id)]) if report else float("nan")

        view_rig = rig.placed(choice.pose)
        cap = simulate_capture(scene, view_rig, materials, curve, cfg,
                               seed=capture_seed(seed, choice.id))
        state = fuse_view(state, cap.depth, view_rig.left, settings.consistency_mm, choice.id)
        pool.remove(choice)
        visited.append(view_rig.projector_center)
        trajectory.append(choice.id)
        rec, pose = evaluate(it, choice.id, gain, t_it)
        records.append(rec)
        poses.append(pose)
        if settings.refresh_hypotheses and pose is not None:
            # carry the cluster along with the refined estimate of its best member
            hypotheses = hypotheses.moved(pose @ hypotheses.best().pose.inverse())
            maps = [hypothesis_maps(h, ref_cam) for h in hypotheses]
            hyp_depths = [d for d, _ in maps]
        log.debug("iteration %d: view %d gain %.2f completion %.1f%%", it, choice.id, gain,
                  rec.completion)
    return LoopResult(state.depth, cap0.depth, cap0.true_depth, object_mask, trajectory, records,
                      stop, reports, poses)
