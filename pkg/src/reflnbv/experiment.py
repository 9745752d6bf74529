"""Repeated NBV-loop runs over policies and seeds, written as CSV plus a manifest.

The results CSV holds only seed-determined values so reruns are
byte-identical; wall-clock timings go to a separate ``timings.csv``.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import __version__
from .config import ExperimentConfig, config_hash, parse_config
from .imageio import write_depth_png
from .planner import POLICIES, LoopResult, run_nbv_loop

log = logging.getLogger(__name__)

RESULT_COLUMNS = ("run_id", "policy", "seed", "iteration", "chosen", "gain", "completion_pct",
                  "missing", "add_mm", "correct")
SUMMARY_COLUMNS = ("policy", "runs", "mean_completion_pct", "mean_add_mm", "correct_rate_pct")


@dataclass(frozen=True)
class ResultRow:
    run_id: str
    policy: str
    seed: int
    iteration: int
    chosen: int
    gain: float
    completion_pct: float
    missing: int
    add_mm: float
    correct: bool
    wall_ms: float = 0.0

    def cells(self) -> list[str]:
        return [self.run_id, self.policy, str(self.seed), str(self.iteration), str(self.chosen),
                _fmt(self.gain), _fmt(self.completion_pct), str(self.missing), _fmt(self.add_mm),
                str(int(self.correct))]


def _fmt(x: float) -> str:
    return "nan" if not np.isfinite(x) else f"{x:.6f}"


def run_id(policy: str, seed: int) -> str:
    return f"{policy}-s{seed}"


def run_single(config: ExperimentConfig, policy: str, seed: int) -> LoopResult:
    settings = replace(config.loop, policy=policy)
    return run_nbv_loop(config.scene(), config.rig, config.reference, config.candidate_list(),
                        config.pose_hypotheses(seed), config.materials, config.curve,
                        config.sensing, settings, seed=seed, target=config.target)


def result_rows(policy: str, seed: int, result: LoopResult) -> list[ResultRow]:
    rid = run_id(policy, seed)
    return [ResultRow(rid, policy, seed, r.iteration, r.chosen, r.gain, r.completion, r.missing,
                      r.add, r.correct, r.wall_ms) for r in result.records]


def rows_to_csv(rows: Iterable[ResultRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULT_COLUMNS)
    for r in rows:
        w.writerow(r.cells())
    return buf.getvalue()


def final_rows(rows: Sequence[ResultRow]) -> list[ResultRow]:
    """Last iteration of every run."""
    last: dict[str, ResultRow] = {}
    for r in rows:
        if r.run_id not in last or r.iteration > last[r.run_id].iteration:
            last[r.run_id] = r
    return list(last.values())


def summarize(rows: Sequence[ResultRow]) -> list[dict]:
    """Mean final completion, ADD and correct rate per policy."""
    out = []
    finals = final_rows(rows)
    for policy in dict.fromkeys(r.policy for r in finals):
        sel = [r for r in finals if r.policy == policy]
        adds = [r.add_mm for r in sel if np.isfinite(r.add_mm)]
        out.append({
            "policy": policy,
            "runs": len(sel),
            "mean_completion_pct": float(np.mean([r.completion_pct for r in sel])),
            "mean_add_mm": float(np.mean(adds)) if adds else float("nan"),
            "correct_rate_pct": 100.0 * float(np.mean([r.correct for r in sel])),
        })
    return out


@dataclass
class ExperimentResult:
    rows: list[ResultRow]
    summary: list[dict]
    csv_text: str
    out_dir: Path | None
    results: dict[tuple[str, int], LoopResult]


def _run_checked(config: ExperimentConfig, policy: str, seed: int) -> LoopResult:
    try:
        return run_single(config, policy, seed)
    except Exception as e:
        raise RuntimeError(f"run {run_id(policy, seed)} failed: {e}") from e


def run_experiment(config: ExperimentConfig, seeds: Sequence[int] | None = None,
                   policies: Sequence[str] | None = None, out_dir=None,
                   write_depth: bool = True, workers: int = 1) -> ExperimentResult:
    """Run every (policy, seed) pair; write CSV, summary, timings and manifest to ``out_dir``.

    ``policies`` defaults to the configured policy and ``seeds`` to the
    configured seeds. With ``workers > 1`` the runs execute in worker
    processes; results are still collected in (policy, seed) order, so the
    CSV only depends on the configuration and seeds.
    """
    seeds = list(config.seeds if seeds is None else seeds)
    policies = list([config.policy] if policies is None else policies)
    for p in policies:
        if p not in POLICIES:
            raise ValueError(f"unknown policy {p!r}; expected one of {POLICIES}")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    rows: list[ResultRow] = []
    results = {}
    jobs = [(policy, seed) for policy in policies for seed in seeds]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(min(workers, len(jobs))) as pool:
            done = list(pool.map(_run_checked, [config] * len(jobs), *zip(*jobs)))
    else:
        done = (_run_checked(config, policy, seed) for policy, seed in jobs)
    for (policy, seed), res in zip(jobs, done):
        results[(policy, seed)] = res
        rows.extend(result_rows(policy, seed, res))
        log.info("%s: completion %.1f%% after %d views (%s)", run_id(policy, seed),
                 res.records[-1].completion, len(res.trajectory), res.stop_reason)
        if out is not None and write_depth:
            write_depth_png(out / f"fused_{run_id(policy, seed)}.png", res.fused_depth)
    text = rows_to_csv(rows)
    summary = summarize(rows)
    if out is not None:
        (out / "results.csv").write_text(text)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for s in summary:
            w.writerow([s["policy"], s["runs"], _fmt(s["mean_completion_pct"]),
                        _fmt(s["mean_add_mm"]), _fmt(s["correct_rate_pct"])])
        (out / "summary.csv").write_text(buf.getvalue())
        with open(out / "timings.csv", "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["run_id", "iteration", "wall_ms"])
            for r in rows:
                w.writerow([r.run_id, r.iteration, f"{r.wall_ms:.3f}"])
        manifest = {
            "config_hash": config_hash(config.raw),
            "config": config.raw,
            "base_dir": str(config.base_dir.resolve()),
            "seeds": seeds,
            "policies": policies,
            "version": __version__,
            "outputs": ["results.csv", "summary.csv", "timings.csv"],
        }
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return ExperimentResult(rows, summary, text, out, results)


def load_manifest(path) -> tuple[ExperimentConfig, list[int], list[str]]:
    """Configuration, seeds and policies recorded by a previous run."""
    m = json.loads(Path(path).read_text())
    cfg = parse_config(m["config"], m.get("base_dir", Path(path).parent))
    if config_hash(cfg.raw) != m["config_hash"]:
        raise ValueError(f"{path}: config hash does not match the embedded configuration")
    return cfg, list(m["seeds"]), list(m["policies"])
