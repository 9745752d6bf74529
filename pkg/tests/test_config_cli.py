import csv
import io
import json

import numpy as np
import pytest
import yaml
from hypothesis import given
from hypothesis import strategies as st

from reflnbv.cli import main
from reflnbv.config import ConfigError, config_hash, load_config, parse_config
from reflnbv.experiment import RESULT_COLUMNS, run_experiment, summarize
from reflnbv.imageio import (read_depth_png, read_float_map, read_intensity_png, read_mask_png,
                             write_depth_png, write_float_map, write_intensity_png,
                             write_mask_png)
from reflnbv.mesh import bent_plate, icosphere
from reflnbv.meshio import load_mesh, save_mesh
from reflnbv.scenes import PRESETS, preset_config


def small_config(preset="sphere", **over):
    raw = preset_config(preset)
    raw["rig"].update(width=48, height=36, fx=75.0)
    raw["candidates"]["sphere"]["count"] = 8
    raw["stop"]["max_views"] = 1
    raw["icp"] = {"enabled": False}
    raw["hypotheses"]["K"] = 2
    raw.update(over)
    return raw


def write_yaml(path, raw):
    path.write_text(yaml.safe_dump(raw, sort_keys=False))
    return path


def read_csv(path):
    return list(csv.DictReader(io.StringIO(path.read_text())))


# -- config ----------------------------------------------------------------

@pytest.mark.parametrize("preset", PRESETS)
def test_presets_load(preset, tmp_path):
    cfg = load_config(write_yaml(tmp_path / "c.yaml", preset_config(preset)))
    assert len(cfg.objects) == 1 and cfg.policy == "nbv"
    # the pole viewpoint coincides with the reference view and is dropped
    assert len(cfg.candidates.build()) == 32 and len(cfg.candidate_list()) == 31


def test_negative_sigma_names_field_and_line(tmp_path):
    raw = small_config()
    raw["sensing"]["sigma"] = -3.0
    path = write_yaml(tmp_path / "c.yaml", raw)
    line = next(i for i, t in enumerate(path.read_text().splitlines(), 1) if "sigma" in t)
    with pytest.raises(ConfigError) as e:
        load_config(path)
    assert any(m.startswith(f"sensing.sigma (line {line})") for m in e.value.errors)


def test_missing_mesh_lists_path(tmp_path):
    raw = small_config()
    raw["scene"]["objects"][0]["mesh"] = "nowhere/part.ply"
    with pytest.raises(ConfigError, match="nowhere/part.ply"):
        load_config(write_yaml(tmp_path / "c.yaml", raw))


def test_all_errors_reported(tmp_path):
    raw = small_config(policy="greedy")
    raw["sensing"]["sigma"] = 0
    raw["rig"]["width"] = -1
    raw["stop"]["max_views"] = 1.5
    with pytest.raises(ConfigError) as e:
        load_config(write_yaml(tmp_path / "c.yaml", raw))
    fields = {m.split(" ")[0].rstrip(":") for m in e.value.errors}
    assert {"policy", "sensing.sigma", "rig.width", "stop.max_views"} <= fields


def test_yaml_syntax_error_has_line(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("rig:\n  width: 4\n  height: [1, 2\n")
    with pytest.raises(ConfigError, match=r"line \d+"):
        load_config(p)


def test_missing_file():
    with pytest.raises(ConfigError, match="not found"):
        load_config("/nonexistent/config.yaml")


def test_refresh_needs_icp():
    raw = small_config()
    raw["hypotheses"]["refresh"] = True
    with pytest.raises(ConfigError, match="hypotheses.refresh"):
        parse_config(raw)


def test_infinite_threshold_accepted():
    raw = small_config()
    raw["stop"]["gain_threshold"] = ".inf"
    assert parse_config(raw).loop.gain_threshold == float("inf")


@given(st.permutations(list(range(6))))
def test_hash_ignores_key_order(order):
    raw = small_config()
    keys = list(raw)
    shuffled = {keys[i]: raw[keys[i]] for i in order} | {k: raw[k] for k in keys[6:]}
    assert config_hash(shuffled) == config_hash(raw)


def test_hash_changes_with_content():
    a = small_config()
    b = small_config()
    b["sensing"]["sigma"] = 101.0
    assert config_hash(a) != config_hash(b)


# -- experiment ------------------------------------------------------------

@pytest.fixture(scope="module")
def experiment(tmp_path_factory):
    out = tmp_path_factory.mktemp("exp")
    cfg = parse_config(small_config(seeds=list(range(5))))
    res = run_experiment(cfg, policies=["nbv", "random", "max-distance"], out_dir=out)
    return cfg, res, out


def test_fifteen_run_groups(experiment):
    _, res, out = experiment
    rows = read_csv(out / "results.csv")
    assert tuple(rows[0]) == RESULT_COLUMNS
    groups = {(r["policy"], r["seed"]) for r in rows}
    assert len(groups) == 15 and len({r["run_id"] for r in rows}) == 15
    keys = [(r["policy"], r["seed"], r["iteration"]) for r in rows]
    assert len(keys) == len(set(keys))


def test_summary_matches_hand_mean(experiment):
    _, res, out = experiment
    rows = read_csv(out / "results.csv")
    summary = {r["policy"]: r for r in read_csv(out / "summary.csv")}
    for policy in ("nbv", "random", "max-distance"):
        finals = {}
        for r in rows:
            if r["policy"] == policy:
                if r["seed"] not in finals or int(r["iteration"]) > int(finals[r["seed"]]["iteration"]):
                    finals[r["seed"]] = r
        hand = sum(float(r["completion_pct"]) for r in finals.values()) / len(finals)
        assert float(summary[policy]["mean_completion_pct"]) == pytest.approx(hand, abs=1e-5)
        assert int(summary[policy]["runs"]) == 5
    assert [s["policy"] for s in summarize(res.rows)] == ["nbv", "random", "max-distance"]


def test_manifest_rerun_is_byte_identical(experiment, tmp_path):
    _, _, out = experiment
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seeds"] == list(range(5)) and len(manifest["config_hash"]) == 64
    assert main(["run", "--manifest", str(out / "manifest.json"), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "results.csv").read_bytes() == (out / "results.csv").read_bytes()
    assert (tmp_path / "summary.csv").read_bytes() == (out / "summary.csv").read_bytes()


def test_parallel_runs_match_serial(experiment, tmp_path):
    cfg, res, _ = experiment
    par = run_experiment(cfg, seeds=[0, 1], policies=["nbv", "random", "max-distance"],
                         out_dir=tmp_path, workers=3)
    serial = [r for r in res.rows if r.seed in (0, 1)]
    assert [r.cells() for r in par.rows] == [r.cells() for r in serial]


def test_timings_kept_out_of_results(experiment):
    _, _, out = experiment
    assert "wall" not in (out / "results.csv").read_text().splitlines()[0]
    timings = read_csv(out / "timings.csv")
    assert all(float(t["wall_ms"]) >= 0 for t in timings)


def test_tampered_manifest_rejected(experiment, tmp_path):
    _, _, out = experiment
    m = json.loads((out / "manifest.json").read_text())
    m["config"]["sensing"]["sigma"] = 50.0
    (tmp_path / "manifest.json").write_text(json.dumps(m))
    assert main(["run", "--manifest", str(tmp_path / "manifest.json"),
                 "--out", str(tmp_path / "o")]) == 1


def test_unknown_policy_rejected():
    with pytest.raises(ValueError):
        run_experiment(parse_config(small_config()), policies=["greedy"])


# -- CLI -------------------------------------------------------------------

@pytest.fixture(scope="module")
def scene_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("scene")
    assert main(["gen-scene", "--preset", "sphere", "--seeds", "1", "--out", str(out)]) == 0
    raw = yaml.safe_load((out / "config.yaml").read_text())
    raw.update({k: v for k, v in small_config().items() if k in ("rig", "candidates", "stop",
                                                                   "icp", "hypotheses")})
    write_yaml(out / "config.yaml", raw)
    return out


def test_gen_scene_outputs(scene_dir):
    assert (scene_dir / "object_0_sphere.ply").exists() and (scene_dir / "response.txt").exists()
    cfg = load_config(scene_dir / "config.yaml")
    assert len(cfg.objects[0].mesh) == len(icosphere(40.0, 3))


def test_cli_usage_errors(tmp_path, capsys):
    assert main([]) == 1
    assert main(["frobnicate"]) == 1
    assert main(["run"]) == 1
    assert main(["run", "--config", str(tmp_path / "missing.yaml")]) == 1
    bad = write_yaml(tmp_path / "bad.yaml", small_config(policy="greedy"))
    assert main(["run", "--config", str(bad)]) == 1
    assert "policy" in capsys.readouterr().err
    assert main(["--help"]) == 0


def test_cli_validation_and_runtime_exit_codes(tmp_path):
    p = tmp_path / "stack.yaml"
    p.write_text(yaml.safe_dump({"images": ["a.png", "b.png"], "exposure_ms": [1.0, 2.0]}))
    assert main(["calibrate-response", "--manifest", str(p), "--out", str(tmp_path / "g.txt")]) == 1
    # a well-formed manifest whose image is not a PNG fails while running
    (tmp_path / "a.png").write_bytes(b"not an image")
    write_yaml(p, {"images": [{"path": "a.png", "exposure_ms": 1.0}]})
    assert main(["calibrate-response", "--manifest", str(p), "--out", str(tmp_path / "g.txt")]) == 2


def test_cli_simulate_plan_run_eval(scene_dir, tmp_path):
    cfg = str(scene_dir / "config.yaml")
    sim = tmp_path / "sim"
    assert main(["simulate", "--config", cfg, "--out", str(sim)]) == 0
    depth = read_depth_png(sim / "depth.png")
    assert depth.shape == (36, 48) and np.isfinite(depth).any()
    assert read_float_map(sim / "probability.rnbv").max() <= 1.0
    assert main(["simulate", "--config", cfg, "--view", "99", "--out", str(sim)]) == 1

    plan = tmp_path / "plan.csv"
    assert main(["plan", "--config", cfg, "--out", str(plan)]) == 0
    rows = read_csv(plan)
    assert len(rows) == 7 and set(rows[0]) == {"candidate_id", "gain", "hyp_0", "hyp_1"}
    assert all(float(r["gain"]) >= 0 for r in rows)

    run = tmp_path / "run"
    assert main(["run", "--config", cfg, "--policies", "nbv,random", "--seeds", "0",
                 "--out", str(run)]) == 0
    rows = read_csv(run / "results.csv")
    assert {r["policy"] for r in rows} == {"nbv", "random"}

    before = read_depth_png(run / "fused_nbv-s0.png")
    gt = np.nan_to_num(before, nan=400.0)
    write_depth_png(tmp_path / "gt.png", gt)
    pose = {"rotation_deg": [0, 0, 0], "translation": [0, 0, 0]}
    moved = {"rotation_deg": [0, 0, 0], "translation": [3, 0, 0]}
    write_yaml(tmp_path / "est.yaml", moved)
    write_yaml(tmp_path / "gt.yaml", pose)
    out = tmp_path / "eval.csv"
    assert main(["eval", "--gt", str(tmp_path / "gt.png"), "--before", str(run / "fused_nbv-s0.png"),
                 "--after", str(tmp_path / "gt.png"), "--pose-est", str(tmp_path / "est.yaml"),
                 "--pose-gt", str(tmp_path / "gt.yaml"), "--mesh",
                 str(scene_dir / "object_0_sphere.ply"), "--out", str(out)]) == 0
    row = read_csv(out)[0]
    assert float(row["completion_pct"]) == 100.0
    assert float(row["add_mm"]) == pytest.approx(3.0, abs=1e-6) and row["correct"] == "1"
    assert main(["eval", "--gt", str(tmp_path / "gt.png"), "--before", str(tmp_path / "gt.png"),
                 "--after", str(tmp_path / "gt.png"), "--pose-est", str(tmp_path / "est.yaml"),
                 "--out", str(out)]) == 1


def test_cli_calibration_roundtrip(tmp_path):
    # head-on sphere so the capture shows both sides of the specular lobe
    raw = preset_config("sphere")
    raw["rig"].update(width=160, height=120, fx=220.0)
    cfgp = write_yaml(tmp_path / "c.yaml", raw)
    sim = tmp_path / "sim"
    assert main(["simulate", "--config", str(cfgp), "--calibration",
                 "--calibration-exposure", "4", "--out", str(sim)]) == 0
    out = tmp_path / "mat.yaml"
    assert main(["calibrate-material", "--manifest", str(sim / "calibration.yaml"),
                 "--out", str(out)]) == 0
    fit = yaml.safe_load(out.read_text())
    assert fit["k_d"] == pytest.approx(0.037, rel=0.05)
    assert fit["k_s"] == pytest.approx(0.74, rel=0.05)
    assert fit["n"] == pytest.approx(19.9, rel=0.05)


def test_cli_calibrate_response(tmp_path):
    from synth import exposure_stack
    from reflnbv.response import ResponseCurve
    stack = exposure_stack(ResponseCurve.gamma(2.2))
    names = []
    for i, img in enumerate(stack.images):
        names.append(f"e{i}.png")
        write_intensity_png(tmp_path / names[-1], img)
    write_yaml(tmp_path / "stack.yaml", {"images": [
        {"path": n, "exposure_ms": float(t)} for n, t in zip(names, stack.exposure_times)]})
    assert main(["calibrate-response", "--manifest", str(tmp_path / "stack.yaml"),
                 "--out", str(tmp_path / "g.txt")]) == 0
    g = ResponseCurve.load(tmp_path / "g.txt")
    assert g.log_exposure(g.mid) == pytest.approx(0.0, abs=1e-9)


# -- file formats ----------------------------------------------------------

def test_depth_png_roundtrip(tmp_path):
    d = np.array([[np.nan, 0.5, 400.25], [6553.5, 1.0, np.nan]])
    write_depth_png(tmp_path / "d.png", d, scale=10.0)
    back = read_depth_png(tmp_path / "d.png", scale=10.0)
    np.testing.assert_array_equal(np.isnan(back), np.isnan(d))
    np.testing.assert_allclose(back[~np.isnan(d)], np.round(d[~np.isnan(d)] * 10) / 10, atol=1e-12)


def test_intensity_mask_float_roundtrip(tmp_path):
    img = np.arange(256, dtype=np.uint8).reshape(16, 16)
    write_intensity_png(tmp_path / "i.png", img)
    np.testing.assert_array_equal(read_intensity_png(tmp_path / "i.png"), img)
    m = img % 3 == 0
    write_mask_png(tmp_path / "m.png", m)
    np.testing.assert_array_equal(read_mask_png(tmp_path / "m.png"), m)
    f = np.random.default_rng(0).normal(size=(5, 7, 3))
    f[0, 0] = np.nan
    write_float_map(tmp_path / "f.rnbv", f)
    np.testing.assert_array_equal(read_float_map(tmp_path / "f.rnbv"), f.astype(np.float32))
    (tmp_path / "bad.rnbv").write_bytes(b"nope")
    with pytest.raises(ValueError):
        read_float_map(tmp_path / "bad.rnbv")


@pytest.mark.parametrize("suffix,binary", [(".ply", True), (".ply", False), (".obj", False)])
def test_mesh_roundtrip(tmp_path, suffix, binary):
    m = bent_plate()
    save_mesh(tmp_path / f"m{suffix}", m, binary=binary)
    back = load_mesh(tmp_path / f"m{suffix}")
    np.testing.assert_allclose(back.vertices, m.vertices, atol=1e-5)
    np.testing.assert_array_equal(back.triangles, m.triangles)


def test_obj_quads_fanned(tmp_path):
    p = tmp_path / "q.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1/1 2/2 3/3 4/4\n")
    assert load_mesh(p).triangles.tolist() == [[0, 1, 2], [0, 2, 3]]
