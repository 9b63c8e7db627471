"""Seeded episode-suite generation with behavioral validation.

Training suites hold 7 start/goal configurations (run 15 times total for
demonstration collection: the first config three times, the rest twice).
Test suites hold 13 configurations mixing door contention, contention-free
timing, and backoff-trap geometry (the robot's start sits on the human's
path).  Every generated suite is validated by actually running the rule
based controllers, so the bundled suites reproduce the qualitative
baseline phenomenology by construction.
"""

from __future__ import annotations

import dataclasses
import logging

import numpy as np

from .controllers import (
    ROBOT_DOOR_ZONE_SPEED,
    ScriptedExpert,
    ShortestPathController,
    BackoffController,
    _door_time_window,
    _fine_points,
)
from .navplan import NoPathError, shortest_path
from .scene import EpisodeConfig, Scene
from .sim import run_episode

log = logging.getLogger(__name__)

TRAIN_SIZE = 7
TEST_SIZE = 13
TRAIN_RUNS = 15  # first config x3, remaining six x2

ROBOT_SPEED = 1.3
MIN_OVERLAP = 1.5    # s of door-window overlap for solid contention
MIN_GAP = 1.2        # s between door windows for solid contention-free
CLEAR_DIST = 1.0     # m clearance for "off the path" checks
TRAP_DIST = 0.65     # m: start this close to the human path blocks it


def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def _sample_candidate(scene: Scene, rng: np.random.Generator,
                      mode: str = "normal") -> EpisodeConfig | None:
    half = scene.params.extent / 2.0
    margin = 0.55
    lo, hi = -half + margin, half - margin

    def pick(y_lo, y_hi, x_lo=lo, x_hi=hi):
        p = np.array([rng.uniform(x_lo, x_hi), rng.uniform(y_lo, y_hi)])
        return p if scene.navigable(p) and scene.wall_distance(p) > 0.45 else None

    if mode == "free":
        # robot-first timing: quick central robot transit, long slow
        # human approach from a far corner
        side = 1.0 if rng.uniform() < 0.5 else -1.0
        robot_start = pick(-1.4, -1.0, -0.6, 0.6)
        robot_goal = pick(1.4, 2.45)
        human_start = pick(2.1, 2.45, min(side * 1.6, side * 2.3),
                           max(side * 1.6, side * 2.3))
        human_goal = pick(-2.45, -1.8)
        speed = float(rng.uniform(0.62, 0.75))
    else:
        robot_start = pick(-2.45, -1.0)
        robot_goal = pick(1.0, 2.45)
        human_start = pick(1.0, 2.45)
        human_goal = pick(-2.45, -1.2)
        speed = float(rng.uniform(0.7, 1.2))
    if any(p is None for p in (robot_start, robot_goal, human_start, human_goal)):
        return None
    if np.linalg.norm(human_start - robot_goal) < 0.8:
        return None
    if mode == "trap":
        # drag the human's destination behind the robot's start so the
        # static human path runs through it
        human_goal = robot_start + np.array([rng.uniform(-0.3, 0.3),
                                             rng.uniform(-0.9, -0.5)])
        if not scene.navigable(human_goal) or scene.wall_distance(human_goal) < 0.45:
            return None
    return EpisodeConfig(robot_start=robot_start, robot_goal=robot_goal,
                         human_start=human_start, human_goal=human_goal,
                         human_speed=speed)


def _classify(scene: Scene, ep: EpisodeConfig):
    """(kind, trap) from static geometry; kind in {contention, free, None}."""
    try:
        robot_path = shortest_path(scene, ep.robot_start, ep.robot_goal)
        human_path = shortest_path(scene, ep.human_start, ep.human_goal,
                                   nominal_speed=ep.human_speed)
    except NoPathError:
        return None, False
    rw = _door_time_window(robot_path, ROBOT_SPEED,
                           zone_speed=ROBOT_DOOR_ZONE_SPEED)
    hw = _door_time_window(human_path, ep.human_speed)
    if rw is None or hw is None:
        return None, False
    overlap = min(rw[1], hw[1]) - max(rw[0], hw[0])
    hpts = _fine_points(human_path)
    rpts = _fine_points(robot_path)
    d_start_hpath = float(np.min(np.linalg.norm(hpts - ep.robot_start, axis=1)))
    d_hgoal_rpath = float(np.min(np.linalg.norm(rpts - ep.human_goal, axis=1)))
    trap = d_start_hpath < TRAP_DIST
    if overlap <= -MIN_GAP:
        # robot-first timing: path clearances are moot, nobody meets anybody
        return "free", trap
    if not trap and d_hgoal_rpath < CLEAR_DIST:
        return None, trap  # parked human would sit on the robot's route
    if not trap and d_start_hpath < CLEAR_DIST:
        return None, trap  # ambiguous start clearance: neither clean nor trap
    if overlap >= MIN_OVERLAP:
        return "contention", trap
    return None, trap


def _validate(scene: Scene, ep: EpisodeConfig, kind: str, trap: bool,
              seeds, split: str) -> bool:
    """Run the rule-based controllers and check the expected phenomenology."""
    from .demos import count_counter_stops
    from .sim import human_solo_time

    for seed in seeds:
        run_ep = dataclasses.replace(ep, seed=seed)
        orca_log = run_episode(scene, run_ep, ShortestPathController())
        if kind == "contention" and orca_log.outcome != "deadlock_timeout":
            return False
        if kind == "free" and orca_log.outcome != "success":
            return False
        if kind == "contention":
            backoff_log = run_episode(scene, run_ep, BackoffController())
            if trap and backoff_log.outcome == "success":
                return False
            if not trap and backoff_log.outcome != "success":
                return False
        if split == "train":
            # demonstrations must be clean: success, no deadlock, visible
            # waiting on contention, and minimal disruption to the human
            expert_log = run_episode(scene, run_ep, ScriptedExpert())
            if expert_log.outcome != "success":
                return False
            if any(name == "deadlock" for _, name in expert_log.events):
                return False
            if kind == "contention" and count_counter_stops(expert_log, scene.spec) < 1:
                return False
            solo = human_solo_time(scene, run_ep)
            if expert_log.human_time > 1.1 * solo:
                return False
    return True


def generate_suites(scene: Scene, master_seed: int = 0,
                    validate_seeds: int = 3) -> tuple[list[EpisodeConfig], list[EpisodeConfig]]:
    """(training 7, test 13) episode lists, behaviorally validated."""
    rng = np.random.default_rng(derive_seed(master_seed, 1))
    quotas = {
        ("train", "contention", False): 6,
        ("train", "free", False): 1,
        ("test", "contention", False): 8,
        ("test", "contention", True): 2,
        ("test", "free", False): 3,
    }
    found: dict[tuple, list[EpisodeConfig]] = {k: [] for k in quotas}
    attempts = 0
    max_attempts = 4000
    while any(len(found[k]) < quotas[k] for k in quotas) and attempts < max_attempts:
        attempts += 1
        want_trap = len(found[("test", "contention", True)]) \
            < quotas[("test", "contention", True)]
        want_free = (len(found[("test", "free", False)])
                     < quotas[("test", "free", False)]
                     or len(found[("train", "free", False)])
                     < quotas[("train", "free", False)])
        if want_trap and attempts % 3 == 0:
            mode = "trap"
        elif want_free and attempts % 3 == 1:
            mode = "free"
        else:
            mode = "normal"
        cand = _sample_candidate(scene, rng, mode=mode)
        if cand is None:
            continue
        kind, trap = _classify(scene, cand)
        if kind is None:
            continue
        target = None
        for (split, k_kind, k_trap), quota in quotas.items():
            if k_kind == kind and k_trap == trap and len(found[(split, k_kind, k_trap)]) < quota:
                target = (split, k_kind, k_trap)
                break
        if target is None:
            continue
        seeds = [derive_seed(master_seed, 2, attempts, r) for r in range(validate_seeds)]
        if not _validate(scene, cand, kind, trap, seeds, split=target[0]):
            continue
        cand = dataclasses.replace(
            cand,
            episode_id=f"{target[0]}{sum(len(v) for s, v in found.items() if s[0] == target[0]):02d}",
            seed=derive_seed(master_seed, 3, attempts),
            contention=(kind == "contention"),
        )
        found[target].append(cand)
        log.info("suite %s: accepted %s (%s%s) after %d attempts",
                 target[0], cand.episode_id, kind, " trap" if trap else "", attempts)
    if any(len(found[k]) < quotas[k] for k in quotas):
        raise RuntimeError(f"suite generation did not converge in {attempts} attempts: "
                           f"{ {k: len(v) for k, v in found.items()} }")

    train = found[("train", "contention", False)] + found[("train", "free", False)]
    test = (found[("test", "contention", False)]
            + found[("test", "contention", True)]
            + found[("test", "free", False)])
    # deterministic presentation order: shuffle by id hash for a mixed layout
    order = np.random.default_rng(derive_seed(master_seed, 4)).permutation(len(test))
    test = [test[i] for i in order]
    train = [dataclasses.replace(ep, episode_id=f"train{i:02d}")
             for i, ep in enumerate(train)]
    test = [dataclasses.replace(ep, episode_id=f"test{i:02d}")
            for i, ep in enumerate(test)]
    return train, test


def training_run_plan(train_suite: list[EpisodeConfig],
                      master_seed: int = 0) -> list[EpisodeConfig]:
    """15 demonstration runs over 7 configs: config 0 three times, others twice."""
    if len(train_suite) != TRAIN_SIZE:
        raise ValueError(f"expected {TRAIN_SIZE} training configs")
    plan = []
    for i, ep in enumerate(train_suite):
        repeats = 3 if i == 0 else 2
        for r in range(repeats):
            plan.append(dataclasses.replace(
                ep, episode_id=f"{ep.episode_id}r{r}",
                seed=derive_seed(master_seed, 5, i, r)))
    assert len(plan) == TRAIN_RUNS
    return plan
