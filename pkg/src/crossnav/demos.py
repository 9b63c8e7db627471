"""Demonstration extraction and augmentation from episode logs.

Every 0.1 s sample with ten future steps becomes one training sample: the
feature snapshot at that instant plus the next ten grid cells of the
discretized robot trajectory.  Counter-stop augmentation emphasizes
deliberate waiting; start extrapolation widens state coverage around the
demonstrated routes.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path as FsPath

import numpy as np

from .featurize import HISTORY_WINDOW, Snapshot, Track
from .gridmdp import (
    Action,
    GridPath,
    GridSpec,
    _action_for_delta,
    discretize_trajectory,
    grid_to_world,
    world_to_grid,
)
from .navplan import astar_grid
from .scene import EpisodeConfig, Scene
from .sim import EpisodeLog
from .smedirl import DemoDataset, Demonstration

log = logging.getLogger(__name__)

COUNTER_STOP_DURATION = 3.0  # s stationary in one cell
DATASET_FORMAT_VERSION = 1

_SOURCES = ("expert", "extrapolated", "counter_stop_augmented")


def heading_series(velocities: np.ndarray, min_speed: float = 0.05) -> np.ndarray:
    """Per-sample headings with carry-forward over stationary stretches.

    Leading stationary samples keep heading 0.0: the deployed controller has
    no future knowledge, so training features must not encode any either.
    """
    v = np.asarray(velocities, dtype=float)
    headings = np.zeros(len(v))
    last = 0.0
    for i in range(len(v)):
        if np.hypot(v[i, 0], v[i, 1]) > min_speed:
            last = float(np.arctan2(v[i, 1], v[i, 0]))
        headings[i] = last
    return headings


def snapshot_from_log(scene: Scene, log_: EpisodeLog, episode: EpisodeConfig,
                      i: int, headings: np.ndarray) -> Snapshot:
    lo = max(0, i - int(round(HISTORY_WINDOW / log_.dt)))
    return Snapshot(
        time=float(log_.times[i]),
        scene_image=scene.rgb,
        robot_past=Track(log_.times[lo:i + 1].copy(), log_.robot_pos[lo:i + 1].copy()),
        human_past=Track(log_.times[lo:i + 1].copy(), log_.human_pos[lo:i + 1].copy()),
        human_velocity=log_.human_vel[i].copy(),
        human_heading=float(headings[i]),
        robot_goal=episode.robot_goal.copy(),
        robot_pos=log_.robot_pos[i].copy(),
    )


def _reference_at(log_: EpisodeLog, i: int, spec: GridSpec) -> GridPath:
    """Next ten grid cells of the discretized trajectory after sample i."""
    tail = discretize_trajectory(log_.times[i:], log_.robot_pos[i:], spec)
    return GridPath(cells=tail.cells[1:11], actions=tail.actions[1:10])


def record_demos(logs, episodes, scene: Scene) -> DemoDataset:
    """One demonstration per 0.1 s sample with ten future steps available."""
    demos: list[Demonstration] = []
    skipped_short = 0
    for log_, episode in zip(logs, episodes):
        if log_.outcome != "success":
            raise ValueError(
                f"episode {log_.episode_id}: demonstrations require successful "
                f"episodes, got outcome {log_.outcome!r}"
            )
        n = log_.n_samples
        if n < 11:
            skipped_short += 1
            continue
        headings = heading_series(log_.human_vel)
        for i in range(n - 10):
            reference = _reference_at(log_, i, scene.spec)
            demos.append(Demonstration(
                snapshot=snapshot_from_log(scene, log_, episode, i, headings),
                reference=reference,
                start_cell=reference.cells[0],
                source="expert",
                episode_id=log_.episode_id,
                t=float(log_.times[i]),
            ))
    return DemoDataset(
        demonstrations=demos, spec=scene.spec,
        provenance={"episodes": len(list(episodes)), "skipped_short": skipped_short},
    )


def counter_stop_intervals(log_: EpisodeLog, spec: GridSpec,
                           duration: float = COUNTER_STOP_DURATION) -> list[tuple]:
    """(cell, t_start, t_end) for every cell occupied at least `duration` s."""
    cells = [world_to_grid(p, spec) for p in log_.robot_pos]
    intervals = []
    run_start = 0
    for i in range(1, len(cells) + 1):
        if i == len(cells) or cells[i] != cells[run_start]:
            span = float(log_.times[i - 1] - log_.times[run_start])
            if span >= duration - 1e-9:
                intervals.append((cells[run_start], float(log_.times[run_start]),
                                  float(log_.times[i - 1])))
            run_start = i
    return intervals


def count_counter_stops(log_: EpisodeLog, spec: GridSpec) -> int:
    return len(counter_stop_intervals(log_, spec))


def augment_counter_stops(log_: EpisodeLog, episode: EpisodeConfig,
                          scene: Scene) -> list[Demonstration]:
    """Stop-padded copies of demonstrations whose window reaches a counter-stop.

    The reference is cut at the first counter-stop cell and padded with Stay
    repetitions there, keeping exactly ten cells.  Windows already fully
    inside the stop are unchanged and not duplicated.
    """
    spec = scene.spec
    stops = {cell for cell, _, _ in counter_stop_intervals(log_, spec)}
    if not stops or log_.n_samples < 11:
        return []
    headings = heading_series(log_.human_vel)
    out: list[Demonstration] = []
    for i in range(log_.n_samples - 10):
        ref = _reference_at(log_, i, spec)
        hit = next((j for j, c in enumerate(ref.cells) if c in stops), None)
        if hit is None:
            continue
        cells = list(ref.cells[:hit + 1])
        cells += [ref.cells[hit]] * (10 - len(cells))
        if cells == ref.cells:
            continue
        actions = ref.actions[:hit] + [Action.STAY] * (9 - hit)
        out.append(Demonstration(
            snapshot=snapshot_from_log(scene, log_, episode, i, headings),
            reference=GridPath(cells=cells, actions=actions),
            start_cell=cells[0],
            source="counter_stop_augmented",
            episode_id=log_.episode_id,
            t=float(log_.times[i]),
        ))
    return out


def extrapolate_demo(demo: Demonstration, scene: Scene, k: int = 6,
                     radius_cells: int = 5, rng_seed: int = 0) -> list[Demonstration]:
    """k synthetic demonstrations from nearby navigable starts.

    Each picks a uniformly random navigable cell within radius_cells of the
    original start, plans a shortest grid path from it to the original start
    cell, splices it onto the reference and re-truncates to ten cells.  The
    snapshot's robot position and past are shifted to the new start.
    """
    spec = scene.spec
    rng = np.random.default_rng(rng_seed)
    start = demo.start_cell
    candidates = []
    for dr in range(-radius_cells, radius_cells + 1):
        for dc in range(-radius_cells, radius_cells + 1):
            if dr * dr + dc * dc > radius_cells * radius_cells:
                continue
            cell = (start[0] + dr, start[1] + dc)
            if scene.navigable_cell(cell):
                candidates.append(cell)
    if not candidates:
        log.warning("no navigable extrapolation cell within %d cells of %s",
                    radius_cells, start)
        return []
    # the robot demonstrably occupied the reference cells, so they count as
    # free for prefix planning even when inflation blocks their cell centers
    occupancy = scene.occupancy.copy()
    for cell in demo.reference.cells:
        occupancy[cell] = False
    out: list[Demonstration] = []
    failed = 0
    for _ in range(k):
        cell = candidates[int(rng.integers(len(candidates)))]
        try:
            prefix = astar_grid(occupancy, cell, start)
        except ValueError:
            failed += 1
            continue
        cells = (prefix + list(demo.reference.cells[1:]))[:10]
        if len(cells) < 10:  # degenerate short splice: pad by holding the end
            cells = cells + [cells[-1]] * (10 - len(cells))
        actions = []
        for a, b in zip(cells[:-1], cells[1:]):
            actions.append(_action_for_delta(b[0] - a[0], b[1] - a[1]))
        snap = demo.snapshot
        new_pos = grid_to_world(cell, spec)
        offset = new_pos - np.asarray(snap.robot_pos, dtype=float)
        shifted = snap.robot_past.positions + offset
        shifted[:, 0] = np.clip(shifted[:, 0], spec.x_min, spec.x_max)
        shifted[:, 1] = np.clip(shifted[:, 1], spec.y_min, spec.y_max)
        out.append(Demonstration(
            snapshot=Snapshot(
                time=snap.time,
                scene_image=snap.scene_image,
                robot_past=Track(snap.robot_past.times.copy(), shifted),
                human_past=snap.human_past,
                human_velocity=snap.human_velocity,
                human_heading=snap.human_heading,
                robot_goal=snap.robot_goal,
                robot_pos=new_pos,
            ),
            reference=GridPath(cells=cells, actions=actions),
            start_cell=cells[0],
            source="extrapolated",
            episode_id=demo.episode_id,
            t=demo.t,
        ))
    if failed:
        log.warning("extrapolation produced %d of %d demos for t=%.1f",
                    k - failed, k, demo.t)
    return out


def extrapolate_dataset(dataset: DemoDataset, scene: Scene, k: int = 6,
                        radius_cells: int = 5, seed: int = 0) -> DemoDataset:
    """Original demos plus k extrapolations of each expert demo."""
    demos = list(dataset.demonstrations)
    for idx, demo in enumerate(dataset.demonstrations):
        if demo.source != "expert":
            continue
        demos.extend(extrapolate_demo(demo, scene, k=k,
                                      radius_cells=radius_cells,
                                      rng_seed=int(np.random.SeedSequence(
                                          [seed, idx]).generate_state(1)[0])))
    return DemoDataset(demonstrations=demos, spec=dataset.spec,
                       scene_id=dataset.scene_id,
                       provenance={**dataset.provenance,
                                   "extrapolation_k": k,
                                   "extrapolation_radius": radius_cells})


# -- dataset persistence -------------------------------------------------------

def save_dataset(dataset: DemoDataset, path) -> None:
    """Compressed arrays plus a JSON meta record; the scene image is stored
    once (all demonstrations share one scene)."""
    demos = dataset.demonstrations
    n = len(demos)
    episode_ids = sorted({d.episode_id for d in demos})
    ep_index = {e: i for i, e in enumerate(episode_ids)}
    refs = np.zeros((n, 10, 2), dtype=np.int16)
    actions = np.zeros((n, 9), dtype=np.int8)
    source = np.zeros(n, dtype=np.uint8)
    episode_idx = np.zeros(n, dtype=np.int32)
    t = np.zeros(n)
    human_vel = np.zeros((n, 2))
    human_heading = np.zeros(n)
    robot_goal = np.zeros((n, 2))
    robot_pos = np.zeros((n, 2))
    rp_off = np.zeros(n + 1, dtype=np.int64)
    hp_off = np.zeros(n + 1, dtype=np.int64)
    rp_times, rp_pos, hp_times, hp_pos = [], [], [], []
    scene_image = demos[0].snapshot.scene_image if n else np.zeros((60, 60, 3), np.uint8)
    for i, d in enumerate(demos):
        refs[i] = np.array(d.reference.cells, dtype=np.int16)
        actions[i] = np.array([int(a) for a in d.reference.actions], dtype=np.int8)
        source[i] = _SOURCES.index(d.source)
        episode_idx[i] = ep_index[d.episode_id]
        t[i] = d.t
        s = d.snapshot
        human_vel[i] = s.human_velocity
        human_heading[i] = s.human_heading
        robot_goal[i] = s.robot_goal
        robot_pos[i] = s.robot_pos
        rp_times.append(s.robot_past.times)
        rp_pos.append(s.robot_past.positions)
        hp_times.append(s.human_past.times)
        hp_pos.append(s.human_past.positions)
        rp_off[i + 1] = rp_off[i] + len(s.robot_past)
        hp_off[i + 1] = hp_off[i] + len(s.human_past)
    meta = {
        "version": DATASET_FORMAT_VERSION,
        "scene_id": dataset.scene_id,
        "provenance": dataset.provenance,
        "episode_ids": episode_ids,
        "spec": {"rows": dataset.spec.rows, "cols": dataset.spec.cols,
                 "cell_size": dataset.spec.cell_size,
                 "origin": list(dataset.spec.origin)},
    }
    np.savez_compressed(
        path, meta=json.dumps(meta), scene_image=scene_image,
        refs=refs, actions=actions, source=source, episode_idx=episode_idx, t=t,
        human_vel=human_vel, human_heading=human_heading,
        robot_goal=robot_goal, robot_pos=robot_pos,
        rp_off=rp_off, hp_off=hp_off,
        rp_times=np.concatenate(rp_times) if rp_times else np.zeros(0),
        rp_pos=np.concatenate(rp_pos) if rp_pos else np.zeros((0, 2)),
        hp_times=np.concatenate(hp_times) if hp_times else np.zeros(0),
        hp_pos=np.concatenate(hp_pos) if hp_pos else np.zeros((0, 2)),
    )


def load_dataset(path) -> DemoDataset:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        if meta.get("version") != DATASET_FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported dataset version")
        spec = GridSpec(rows=meta["spec"]["rows"], cols=meta["spec"]["cols"],
                        cell_size=meta["spec"]["cell_size"],
                        origin=tuple(meta["spec"]["origin"]))
        scene_image = z["scene_image"]
        episode_ids = meta["episode_ids"]
        demos = []
        n = len(z["t"])
        for i in range(n):
            cells = [tuple(c) for c in z["refs"][i].tolist()]
            acts = [Action(int(a)) for a in z["actions"][i]]
            r0, r1 = z["rp_off"][i], z["rp_off"][i + 1]
            h0, h1 = z["hp_off"][i], z["hp_off"][i + 1]
            snap = Snapshot(
                time=float(z["t"][i]),
                scene_image=scene_image,
                robot_past=Track(z["rp_times"][r0:r1], z["rp_pos"][r0:r1]),
                human_past=Track(z["hp_times"][h0:h1], z["hp_pos"][h0:h1]),
                human_velocity=z["human_vel"][i],
                human_heading=float(z["human_heading"][i]),
                robot_goal=z["robot_goal"][i],
                robot_pos=z["robot_pos"][i],
            )
            demos.append(Demonstration(
                snapshot=snap,
                reference=GridPath(cells=cells, actions=acts),
                start_cell=cells[0],
                source=_SOURCES[int(z["source"][i])],
                episode_id=episode_ids[int(z["episode_idx"][i])],
                t=float(z["t"][i]),
            ))
        return DemoDataset(demonstrations=demos, spec=spec,
                           scene_id=meta["scene_id"],
                           provenance=meta["provenance"])
