"""Command-line entry points.

Exit codes: 0 on success, 1 for invalid input or configuration, 2 for
failures while running.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from .calibration import calibrate_material
from .config import ConfigError, _Checker, load_config
from .experiment import load_manifest, run_experiment
from .geometry import RigidPose, StereoRig
from .imageio import (read_depth_png, read_float_map, read_intensity_png, read_mask_png,
                      write_depth_png, write_float_map, write_intensity_png, write_mask_png)
from .meshio import load_mesh, save_mesh
from .metrics import PoseEstimate, depth_completion_pct
from .planner import (PlanningContext, hypothesis_maps, missing_pixels, score_candidates,
                      capture_seed)
from .response import ExposureStack, ResponseCurve, recover_response
from .scene import SceneModel
from .scenes import GENERATORS, PRESETS, preset_config
from .sensor import simulate_capture, white_pattern_image

log = logging.getLogger("reflnbv")


class UsageError(ValueError):
    pass


def _load_yaml(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise UsageError(f"{path}: file not found")
    data = yaml.safe_load(path.read_text())
    if not isinstance(data, dict):
        raise UsageError(f"{path}: expected a YAML mapping")
    return data


def _pose_from(raw, what: str) -> RigidPose:
    if isinstance(raw, dict) and "matrix" in raw:
        return RigidPose.from_matrix(np.asarray(raw["matrix"], dtype=np.float64))
    chk = _Checker()
    pose = chk.pose(raw, what)
    if chk.errors:
        raise UsageError("; ".join(chk.errors))
    return pose


def _rig_from(raw: dict) -> StereoRig:
    r = raw or {}
    return StereoRig.standard(int(r.get("width", 128)), int(r.get("height", 96)),
                              float(r.get("fx", 200.0)), r.get("fy"), float(r.get("baseline", 60.0)),
                              tuple(r.get("projector_offset", (0.0, 0.0, 0.0))),
                              float(r.get("projector_intensity", 1.0)), float(r.get("ambient", 0.0)))


def _write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


# -- subcommands ---------------------------------------------------------------

def cmd_calibrate_response(args) -> None:
    stack = ExposureStack.from_manifest(args.manifest)
    curve = recover_response(stack, lam=args.lam, samples=args.samples, seed=args.seed)
    curve.save(args.out)
    print(f"wrote {args.out}")


def cmd_calibrate_material(args) -> None:
    spec = _load_yaml(args.manifest)
    base = Path(args.manifest).parent
    try:
        image = read_intensity_png(base / spec["image"])
        depth = read_depth_png(base / spec["depth"], float(spec.get("depth_scale", 1.0)))
        normals = read_float_map(base / spec["normals"])
        mask = read_mask_png(base / spec["mask"])
        dt = float(spec["exposure_ms"])
        curve = (ResponseCurve.load(base / spec["response"]) if "response" in spec
                 else ResponseCurve.gamma(float(spec.get("gamma", 2.2))))
        rig = _rig_from(spec.get("rig", {})).placed(_pose_from(spec["rig_pose"], "rig_pose"))
    except KeyError as e:
        raise UsageError(f"{args.manifest}: missing key {e}") from None
    mat, report = calibrate_material(image, dt, depth, normals, rig, curve, mask,
                                     holdout=args.holdout, seed=args.seed)
    out = {"k_d": mat.k_d, "k_s": mat.k_s, "n": mat.n,
           "report": {"rms_relative_residual": report.rms_relative_residual,
                      "n_train": report.n_train, "n_holdout": report.n_holdout,
                      "n_diffuse": report.n_diffuse, "n_specular": report.n_specular,
                      "specular_dropped": report.specular_dropped,
                      "specular_found": report.specular_found}}
    Path(args.out).write_text(yaml.safe_dump(out, sort_keys=False))
    print(f"k_d={mat.k_d:.5g} k_s={mat.k_s:.5g} n={mat.n:.5g} "
          f"(holdout rms {report.rms_relative_residual:.3g}); wrote {args.out}")


def _view_rig(cfg, view: str):
    if view == "reference":
        return cfg.reference, -1
    try:
        cid = int(view)
    except ValueError:
        raise UsageError(f"--view must be 'reference' or a candidate id, got {view!r}") from None
    for c in cfg.candidates.build():
        if c.id == cid:
            return c.pose, cid
    raise UsageError(f"no candidate viewpoint with id {cid}")


def cmd_simulate(args) -> None:
    cfg = load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rig_pose, vid = _view_rig(cfg, args.view)
    rig = cfg.rig.placed(rig_pose)
    scene = cfg.scene()
    cap = simulate_capture(scene, rig, cfg.materials, cfg.curve, cfg.sensing,
                           seed=capture_seed(args.seed, vid))
    write_intensity_png(out / "left.png", cap.left)
    write_intensity_png(out / "right.png", cap.right)
    write_depth_png(out / "depth.png", cap.depth)
    write_float_map(out / "probability.rnbv", cap.probability)
    write_float_map(out / "normals.rnbv", cap.normals)
    written = ["left.png", "right.png", "depth.png", "probability.rnbv", "normals.rnbv"]
    if args.calibration:
        # white-pattern capture plus ground-truth geometry for calibrate-material
        dt = args.calibration_exposure or cfg.sensing.exposure_time
        white = white_pattern_image(scene, rig, cfg.materials, cfg.curve, dt,
                                    falloff_ref=cfg.sensing.falloff_ref, shadows=cfg.sensing.shadows)
        write_intensity_png(out / "white.png", white)
        write_depth_png(out / "true_depth.png", cap.true_depth, scale=args.depth_scale)
        write_mask_png(out / "mask.png", cap.hits == cfg.target)
        cfg.curve.save(out / "response.txt")
        manifest = {"image": "white.png", "exposure_ms": float(dt), "depth": "true_depth.png",
                    "depth_scale": float(args.depth_scale), "normals": "normals.rnbv",
                    "mask": "mask.png", "response": "response.txt",
                    "rig": cfg.raw.get("rig", {}),
                    "rig_pose": {"matrix": rig_pose.matrix.tolist()}}
        (out / "calibration.yaml").write_text(yaml.safe_dump(manifest, sort_keys=False))
        written += ["white.png", "true_depth.png", "mask.png", "response.txt", "calibration.yaml"]
    print(f"wrote {', '.join(written)} to {out}")


def cmd_plan(args) -> None:
    cfg = load_config(args.config)
    rig = cfg.rig.placed(cfg.reference)
    cap = simulate_capture(cfg.scene(), rig, cfg.materials, cfg.curve, cfg.sensing,
                           seed=capture_seed(args.seed, -1))
    hyps = cfg.pose_hypotheses(args.seed)
    maps = [hypothesis_maps(h, rig.left) for h in hyps]
    missing = missing_pixels(cap.depth, [d for d, _ in maps])
    if not len(missing):
        raise UsageError("the reference capture has no missing object pixels; nothing to plan")
    ctx = PlanningContext(rig.left, cfg.rig, cfg.materials, cfg.curve, cfg.sensing)
    report = score_candidates(ctx, cfg.candidate_list(), hyps, missing, maps)
    header = ["candidate_id", "gain"] + [f"hyp_{k}" for k in range(len(hyps))]
    rows = [[cid, f"{g:.6f}"] + [f"{x:.6f}" for x in per] for cid, g, per in report.rows()]
    _write_csv(args.out, header, rows)
    print(f"next best view: candidate {report.chosen} (gain {report.best_gain:.2f} of "
          f"{len(missing)} missing pixels); wrote {args.out}")


def cmd_run(args) -> None:
    if args.manifest:
        cfg, seeds, policies = load_manifest(args.manifest)
    else:
        if not args.config:
            raise UsageError("run needs --config or --manifest")
        cfg = load_config(args.config)
        seeds, policies = cfg.seeds, [cfg.policy]
    if args.policies:
        policies = [p.strip() for p in args.policies.split(",") if p.strip()]
    if args.seeds:
        seeds = [int(s) for s in args.seeds.split(",")]
    out = Path(args.out) if args.out else cfg.output
    res = run_experiment(cfg, seeds, policies, out, workers=args.workers)
    for s in res.summary:
        print(f"{s['policy']:>12}: completion {s['mean_completion_pct']:6.2f}%  "
              f"ADD {s['mean_add_mm']:.3f} mm  correct {s['correct_rate_pct']:.0f}%  "
              f"({s['runs']} runs)")
    print(f"wrote {out / 'results.csv'}")


def cmd_eval(args) -> None:
    gt = read_depth_png(args.gt, args.depth_scale)
    before = read_depth_png(args.before, args.depth_scale)
    after = read_depth_png(args.after, args.depth_scale)
    mask = read_mask_png(args.mask) if args.mask else None
    completion = depth_completion_pct(before, after, gt, args.err_mm, mask)
    add, correct = float("nan"), ""
    if args.pose_est or args.pose_gt:
        if not (args.pose_est and args.pose_gt and args.mesh):
            raise UsageError("ADD needs --pose-est, --pose-gt and --mesh together")
        est = PoseEstimate.evaluate(_pose_from(_load_yaml(args.pose_est), "pose_est"),
                                    _pose_from(_load_yaml(args.pose_gt), "pose_gt"),
                                    load_mesh(args.mesh))
        add, correct = est.add, str(int(est.correct))
    _write_csv(args.out, ["object_id", "completion_pct", "add_mm", "correct"],
               [[args.object_id, f"{completion:.6f}",
                 "nan" if not np.isfinite(add) else f"{add:.6f}", correct]])
    print(f"completion {completion:.2f}%" + (f", ADD {add:.3f} mm" if np.isfinite(add) else ""))


def cmd_gen_scene(args) -> None:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    raw = preset_config(args.preset)
    for i, obj in enumerate(raw["scene"]["objects"]):
        mesh = GENERATORS[obj["mesh"]](**obj.get("params", {}))
        name = f"object_{i}_{obj['mesh']}.ply"
        save_mesh(out / name, mesh)
        obj["mesh"] = name
        obj.pop("params", None)
    ResponseCurve.gamma(raw["response"].get("gamma", 2.2)).save(out / "response.txt")
    raw["response"] = {"path": "response.txt"}
    if args.seeds:
        raw["seeds"] = list(range(args.seeds))
    (out / "config.yaml").write_text(yaml.safe_dump(raw, sort_keys=False))
    load_config(out / "config.yaml")  # the generated scene must validate
    print(f"wrote {args.preset} scene to {out / 'config.yaml'}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="reflnbv", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("calibrate-response", help="recover g(Z) from an exposure stack")
    s.add_argument("--manifest", required=True, help="YAML listing image paths and exposure_ms")
    s.add_argument("--out", required=True)
    s.add_argument("--lam", type=float, default=100.0, help="smoothness weight")
    s.add_argument("--samples", type=int, default=256)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_calibrate_response)

    s = sub.add_parser("calibrate-material", help="fit Phong parameters to a white-pattern capture")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--holdout", type=float, default=0.2)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_calibrate_material)

    s = sub.add_parser("simulate", help="simulate one active stereo capture")
    s.add_argument("--config", required=True)
    s.add_argument("--view", default="reference", help="'reference' or a candidate id")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--calibration", action="store_true",
                   help="also write a white-pattern calibration set")
    s.add_argument("--calibration-exposure", type=float, default=None)
    s.add_argument("--depth-scale", type=float, default=10.0,
                   help="depth PNG units per mm for the calibration depth")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("plan", help="score candidate viewpoints after the reference capture")
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_plan)

    s = sub.add_parser("run", help="run the NBV loop for policies x seeds")
    s.add_argument("--config")
    s.add_argument("--manifest", help="rerun from a previous manifest.json")
    s.add_argument("--policies", help="comma-separated subset of nbv,random,max-distance")
    s.add_argument("--seeds", help="comma-separated seeds")
    s.add_argument("--out")
    s.add_argument("--workers", type=int, default=1, help="parallel runs (processes)")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("eval", help="depth completion and ADD for one object")
    s.add_argument("--gt", required=True)
    s.add_argument("--before", required=True)
    s.add_argument("--after", required=True)
    s.add_argument("--mask")
    s.add_argument("--depth-scale", type=float, default=1.0)
    s.add_argument("--err-mm", type=float, default=2.0)
    s.add_argument("--pose-est")
    s.add_argument("--pose-gt")
    s.add_argument("--mesh")
    s.add_argument("--object-id", default="0")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("gen-scene", help="write a built-in scene (config, mesh, response)")
    s.add_argument("--preset", choices=PRESETS, required=True)
    s.add_argument("--seeds", type=int, default=None, help="number of seeds to configure")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen_scene)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code == 0 else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ConfigError as e:
        print(str(e), file=sys.stderr)
        return 1
    except (UsageError, ValueError, FileNotFoundError, KeyError, yaml.YAMLError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # anything else is a failure while running
        print(f"runtime error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
