"""Evaluation harness: run controller x episode x seed grids into a report.

Per-run seeds derive from one master seed through fixed named streams
(see suites.derive_seed), so a report is reproducible end to end and
independent of execution order.
"""

from __future__ import annotations

import dataclasses
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import rewardnet
from .controllers import (
    BackoffController,
    RewardMapController,
    ScriptedExpert,
    ShortestPathController,
)
from .scene import EpisodeConfig, Scene
from .sim import run_episode, save_log
from .suites import derive_seed

REPORT_FORMAT_VERSION = 1
EVAL_SEED_STREAM = 6


@dataclass(frozen=True)
class ControllerSpec:
    """Picklable controller recipe for evaluation workers."""

    kind: str                  # orca | backoff | expert | reward
    name: str
    checkpoint: str | None = None
    stochastic: bool = False

    def build(self):
        if self.kind == "orca":
            return ShortestPathController()
        if self.kind == "backoff":
            return BackoffController()
        if self.kind == "expert":
            return ScriptedExpert()
        if self.kind == "reward":
            params = _load_checkpoint(self.checkpoint)
            return RewardMapController(params, name=self.name,
                                       stochastic=self.stochastic)
        raise ValueError(f"unknown controller kind {self.kind}")


@lru_cache(maxsize=8)
def _load_checkpoint(path: str) -> rewardnet.Params:
    return rewardnet.load_params(path)


@dataclass
class EvalReport:
    master_seed: int
    runs: int
    rows: list[dict] = field(default_factory=list)

    def row(self, episode_id: str, controller: str) -> dict:
        for r in self.rows:
            if r["episode_id"] == episode_id and r["controller"] == controller:
                return r
        raise KeyError((episode_id, controller))

    def aggregate(self) -> dict[str, dict]:
        out: dict[str, dict] = {}
        for r in self.rows:
            agg = out.setdefault(r["controller"], {"successes": 0, "total": 0})
            agg["successes"] += r["successes"]
            agg["total"] += r["runs"]
        for name, agg in out.items():
            agg["success_rate"] = agg["successes"] / agg["total"] if agg["total"] else 0.0
        return out

    def summary_table(self) -> str:
        """Delimiter-separated human-readable summary."""
        lines = ["episode\tcontention\tcontroller\tsuccess\tmedian_robot_s\tmedian_human_s"]
        for r in sorted(self.rows, key=lambda r: (r["episode_id"], r["controller"])):
            lines.append(
                f"{r['episode_id']}\t{r['contention']}\t{r['controller']}\t"
                f"{r['successes']}/{r['runs']}\t"
                f"{r['median_robot_time']:.1f}\t{r['median_human_time']:.1f}"
            )
        for name, agg in sorted(self.aggregate().items()):
            lines.append(f"TOTAL\t-\t{name}\t{agg['successes']}/{agg['total']}"
                         f"\t{agg['success_rate']:.3f}\t-")
        return "\n".join(lines)

    def save(self, path) -> None:
        doc = {
            "format": "crossnav-eval-report",
            "version": REPORT_FORMAT_VERSION,
            "master_seed": self.master_seed,
            "runs": self.runs,
            "rows": sorted(self.rows,
                           key=lambda r: (r["episode_id"], r["controller"])),
            "aggregate": self.aggregate(),
        }
        with open(path, "w") as f:
            json.dump(doc, f, indent=2, sort_keys=True)
            f.write("\n")

    @staticmethod
    def load(path) -> "EvalReport":
        with open(path) as f:
            doc = json.load(f)
        if doc.get("format") != "crossnav-eval-report":
            raise ValueError(f"{path}: not an eval report")
        if doc.get("version") != REPORT_FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported report version")
        report = EvalReport(master_seed=doc["master_seed"], runs=doc["runs"])
        report.rows = doc["rows"]
        return report


def _run_one(scene: Scene, episode: EpisodeConfig, spec: ControllerSpec,
             seed: int, human_mode: str):
    ep = dataclasses.replace(episode, seed=seed)
    controller = spec.build()
    log = run_episode(scene, ep, controller, human_mode=human_mode)
    return log


_WORKER_SCENE: Scene | None = None


def _worker_init(scene_params: dict):
    global _WORKER_SCENE
    from .scene import build_scene
    _WORKER_SCENE = build_scene(**scene_params)


def _worker_task(args):
    episode_dict, spec, seed, human_mode = args
    episode = EpisodeConfig.from_dict(episode_dict)
    log = _run_one(_WORKER_SCENE, episode, spec, seed, human_mode)
    return (log.outcome, log.robot_time, log.human_time,
            [name for _, name in log.events])


def eval_suite(scene: Scene, episodes: list[EpisodeConfig],
               specs: list[ControllerSpec], runs: int = 5,
               master_seed: int = 0, workers: int = 1,
               human_mode: str = "priority", log_dir=None) -> EvalReport:
    """Every (episode, controller, run) combination with derived seeds."""
    for spec in specs:
        if spec.kind == "reward":
            _load_checkpoint(spec.checkpoint)  # fail fast on missing files

    tasks = []
    for ep_idx, episode in enumerate(episodes):
        for spec in specs:
            for run in range(runs):
                seed = derive_seed(master_seed, EVAL_SEED_STREAM, ep_idx, run)
                tasks.append((ep_idx, episode, spec, run, seed))

    results = {}
    if workers > 1:
        scene_params = {
            "door_width": scene.params.door_width,
            "wall_thickness": scene.params.wall_thickness,
            "extent": scene.params.extent,
            "seed": scene.params.seed,
            "inflate_radius": scene.params.inflate_radius,
        }
        with ProcessPoolExecutor(max_workers=workers, initializer=_worker_init,
                                 initargs=(scene_params,)) as pool:
            payload = [(ep.to_dict(), spec, seed, human_mode)
                       for (_, ep, spec, _, seed) in tasks]
            for key, res in zip(tasks, pool.map(_worker_task, payload)):
                results[(key[0], key[2].name, key[3])] = res
    else:
        if log_dir is not None:
            from pathlib import Path
            Path(log_dir).mkdir(parents=True, exist_ok=True)
        for ep_idx, episode, spec, run, seed in tasks:
            log = _run_one(scene, episode, spec, seed, human_mode)
            if log_dir is not None:
                from pathlib import Path
                path = Path(log_dir) / f"{episode.episode_id}_{spec.name}_r{run}.jsonl"
                save_log(log, path)
            results[(ep_idx, spec.name, run)] = (
                log.outcome, log.robot_time, log.human_time,
                [name for _, name in log.events])

    report = EvalReport(master_seed=master_seed, runs=runs)
    for ep_idx, episode in enumerate(episodes):
        for spec in specs:
            outcomes, rts, hts, deadlocks, collisions = [], [], [], 0, 0
            for run in range(runs):
                outcome, rt, ht, events = results[(ep_idx, spec.name, run)]
                outcomes.append(outcome)
                rts.append(rt)
                hts.append(ht)
                deadlocks += int("deadlock" in events)
                collisions += int(outcome == "collision")
            report.rows.append({
                "episode_id": episode.episode_id,
                "contention": bool(episode.contention),
                "controller": spec.name,
                "runs": runs,
                "successes": sum(o == "success" for o in outcomes),
                "outcomes": outcomes,
                "robot_times": [round(float(t), 6) for t in rts],
                "human_times": [round(float(t), 6) for t in hts],
                "median_robot_time": round(float(np.median(rts)), 6),
                "median_human_time": round(float(np.median(hts)), 6),
                "collisions": collisions,
                "deadlocks": deadlocks,
            })
    return report
