"""Robot controllers: ORCA baseline, rule-based backoff, scripted expert,
and the learned reward-map follower.

Controllers emit a preferred velocity every control tick; the simulator
always filters it through ORCA.  All controllers are deterministic given
the episode seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rewardnet
from .featurize import Snapshot, Track
from .gridmdp import GridSpec, grid_to_world, world_to_grid
from .navplan import (
    WorldPath,
    baseline_reference,
    follow_reference,
    reward_reference,
    shortest_path,
)
from .scene import HUMAN_RADIUS, ROBOT_RADIUS, EpisodeConfig, Scene
from .sim import DT_CONTROL, PathFollower, SimState

# refuge constraints: at least 0.5 m of lateral clearance beyond the swept
# corridor of the passing human (corridor half-width = sum of radii)
REFUGE_CORRIDOR_CLEARANCE = 0.5
REFUGE_PATH_DISTANCE = HUMAN_RADIUS + ROBOT_RADIUS + REFUGE_CORRIDOR_CLEARANCE
PASS_BEYOND_DOOR = 1.0      # m past the door plane before resuming
CONTENTION_MARGIN = 1.0     # s of slack when comparing door arrival windows
DOOR_ZONE_HALFWIDTH = 0.6   # m band around the door plane
DOOR_ZONE_HALFSPAN = 0.7    # m lateral extent of the door funnel
EXPERT_DWELL = 1.2          # s the expert keeps waiting after the pass criterion


def _fine_points(path: WorldPath, step: float = 0.05) -> np.ndarray:
    pts = path.waypoints
    if len(pts) == 1:
        return pts.copy()
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    samples = np.arange(0.0, arc[-1] + step, step)
    out = np.empty((len(samples), 2))
    out[:, 0] = np.interp(samples, arc, pts[:, 0])
    out[:, 1] = np.interp(samples, arc, pts[:, 1])
    return out


# an ORCA-driven agent brakes against the jamb constraints inside the door
# funnel; its effective zone speed is well below the open-space speed
ROBOT_DOOR_ZONE_SPEED = 0.55


def _door_time_window(path: WorldPath, speed: float,
                      zone_speed: float | None = None) -> tuple[float, float] | None:
    """Time interval during which the path runs through the door band."""
    pts = _fine_points(path)
    in_zone = (np.abs(pts[:, 1]) <= DOOR_ZONE_HALFWIDTH) \
        & (np.abs(pts[:, 0]) <= DOOR_ZONE_HALFSPAN)
    if not in_zone.any():
        return None
    arc = np.arange(len(pts)) * 0.05
    enter = float(arc[in_zone.argmax()])
    leave = float(arc[len(in_zone) - 1 - in_zone[::-1].argmax()])
    zs = zone_speed if zone_speed is not None else speed
    return enter / speed, enter / speed + (leave - enter) / zs


def human_has_passed(state: SimState, robot_side: float) -> bool:
    """Pass criterion: the human crossed the door plane onto the robot's
    original side, is at least 1 m beyond it and not coming back, or is done."""
    if state.flags.human_done:
        return True
    hy = float(state.human.pos[1])
    hvy = float(state.human.vel[1])
    return (np.sign(hy) == np.sign(robot_side)
            and abs(hy) >= PASS_BEYOND_DOOR
            and hvy * np.sign(robot_side) >= -1e-9)


class ShortestPathController:
    """Nominal baseline: follow the static shortest path, never replan
    around the human."""

    name = "orca"
    reward_map = None

    def reset(self, scene: Scene, episode: EpisodeConfig) -> None:
        self.follower = PathFollower(
            baseline_reference(scene, episode.robot_start, episode.robot_goal)
        )

    def pref_velocity(self, state: SimState) -> np.ndarray:
        return self.follower.pref_velocity(state.robot.pos)


class BackoffController:
    """Baseline with rule-based deadlock resolution: on deadlock, retreat to
    the start, wait for the human to pass, then proceed."""

    name = "backoff"
    reward_map = None

    def reset(self, scene: Scene, episode: EpisodeConfig) -> None:
        self.scene = scene
        self.episode = episode
        self.robot_side = float(np.sign(episode.robot_start[1]))
        self.phase = "normal"
        self.follower = PathFollower(
            baseline_reference(scene, episode.robot_start, episode.robot_goal)
        )

    def pref_velocity(self, state: SimState) -> np.ndarray:
        if self.phase == "normal":
            if state.flags.deadlock:
                self.phase = "retreat"
                self.follower = PathFollower(baseline_reference(
                    self.scene, state.robot.pos, self.episode.robot_start))
            else:
                return self.follower.pref_velocity(state.robot.pos)
        if self.phase == "retreat":
            if np.linalg.norm(state.robot.pos - self.episode.robot_start) < 0.15:
                self.phase = "wait"
            else:
                return self.follower.pref_velocity(state.robot.pos)
        if self.phase == "wait":
            if human_has_passed(state, self.robot_side):
                self.phase = "resume"
                self.follower = PathFollower(baseline_reference(
                    self.scene, state.robot.pos, self.episode.robot_goal))
            else:
                return np.zeros(2)
        return self.follower.pref_velocity(state.robot.pos)


def find_refuge_cell(scene: Scene, human_path: WorldPath, robot_side: float,
                     robot_pos) -> tuple[int, int]:
    """Waiting spot on the robot's side, clear of the human's corridor.

    Among sufficiently clear cells the one nearest the door wins: a good
    yield position sits on the way to the goal, poised to enter the funnel
    the moment the human has passed.  Falls back to the clearance-maximizing
    cell when nothing satisfies the clearance bound.
    """
    pts = _fine_points(human_path)
    door = np.asarray(scene.door_center, dtype=float)
    best = None
    best_score = np.inf
    fallback = None
    fallback_clear = -np.inf
    for r in range(scene.spec.rows):
        for c in range(scene.spec.cols):
            if scene.occupancy[r, c]:
                continue
            center = grid_to_world((r, c), scene.spec)
            if center[1] * robot_side < DOOR_ZONE_HALFWIDTH:
                continue  # wrong side or inside the door funnel
            clear = float(np.min(np.linalg.norm(pts - center, axis=1)))
            if clear > fallback_clear:
                fallback_clear = clear
                fallback = (r, c)
            if clear < REFUGE_PATH_DISTANCE:
                continue
            score = float(np.linalg.norm(center - door))
            if score < best_score:
                best_score = score
                best = (r, c)
    return best if best is not None else fallback


class ScriptedExpert:
    """Demonstration policy: predicts door contention from both agents'
    arrival windows, yields at a refuge cell clear of the human's corridor,
    and proceeds once the human has passed."""

    name = "expert"
    reward_map = None

    def __init__(self, refuge_clearance: float = REFUGE_PATH_DISTANCE):
        self.refuge_clearance = refuge_clearance

    def reset(self, scene: Scene, episode: EpisodeConfig) -> None:
        self.scene = scene
        self.episode = episode
        self.robot_side = float(np.sign(episode.robot_start[1]))
        robot_path = shortest_path(scene, episode.robot_start, episode.robot_goal)
        human_path = shortest_path(scene, episode.human_start, episode.human_goal,
                                   nominal_speed=episode.human_speed)
        rw = _door_time_window(robot_path, speed=1.3,
                               zone_speed=ROBOT_DOOR_ZONE_SPEED)
        hw = _door_time_window(human_path, speed=episode.human_speed)
        m = CONTENTION_MARGIN
        self.contention = (
            rw is not None and hw is not None
            and rw[0] - m <= hw[1] + m and hw[0] - m <= rw[1] + m
        )
        if self.contention:
            refuge = find_refuge_cell(scene, human_path, self.robot_side,
                                      episode.robot_start)
            self.refuge_pos = grid_to_world(refuge, scene.spec)
            self.phase = "to_refuge"
            self.follower = PathFollower(baseline_reference(
                scene, episode.robot_start, self.refuge_pos))
        else:
            self.phase = "direct"
            self.follower = PathFollower(baseline_reference(
                scene, episode.robot_start, episode.robot_goal))
        self.pass_time = None

    def pref_velocity(self, state: SimState) -> np.ndarray:
        if self.phase == "to_refuge":
            if np.linalg.norm(state.robot.pos - self.refuge_pos) < 0.15:
                self.phase = "wait"
            else:
                return self.follower.pref_velocity(state.robot.pos)
        if self.phase == "wait":
            if self.pass_time is None and human_has_passed(state, self.robot_side):
                self.pass_time = state.t
            if self.pass_time is not None and state.t >= self.pass_time + EXPERT_DWELL:
                self.phase = "direct"
                self.follower = PathFollower(baseline_reference(
                    self.scene, state.robot.pos, self.episode.robot_goal))
            else:
                return np.zeros(2)
        return self.follower.pref_velocity(state.robot.pos)


class RewardMapController:
    """Deployed learned policy: replan from the reward net every tick and
    follow the decoded reference."""

    def __init__(self, params: rewardnet.Params, name: str = "smedirl",
                 stochastic: bool = False):
        self.params = params
        self.name = name
        self.stochastic = stochastic
        self.reward_map = None

    def reset(self, scene: Scene, episode: EpisodeConfig) -> None:
        self.scene = scene
        self.episode = episode
        self.hist_t: list[float] = []
        self.hist_robot: list[np.ndarray] = []
        self.hist_human: list[np.ndarray] = []
        self.last_heading = 0.0
        self._rng = np.random.default_rng(episode.seed)

    def observe(self, t: float, robot_pos, robot_vel, human_pos, human_vel) -> None:
        self.hist_t.append(t)
        self.hist_robot.append(np.asarray(robot_pos, dtype=float).copy())
        self.hist_human.append(np.asarray(human_pos, dtype=float).copy())
        speed = float(np.linalg.norm(human_vel))
        if speed > 0.05:
            self.last_heading = float(np.arctan2(human_vel[1], human_vel[0]))

    def pref_velocity(self, state: SimState) -> np.ndarray:
        snapshot = Snapshot(
            time=state.t,
            scene_image=self.scene.rgb,
            robot_past=Track(np.array(self.hist_t), np.array(self.hist_robot)),
            human_past=Track(np.array(self.hist_t), np.array(self.hist_human)),
            human_velocity=state.human.vel.copy(),
            human_heading=self.last_heading,
            robot_goal=self.episode.robot_goal,
            robot_pos=state.robot.pos.copy(),
        )
        path, reward = reward_reference(self.params, snapshot, self.scene.spec,
                                        stochastic=self.stochastic, rng=self._rng)
        self.reward_map = reward
        return follow_reference(path, state.robot.pos, dt=DT_CONTROL)


class TeleopController:
    """Externally commanded preferred velocity (bridge server sessions)."""

    name = "teleop"
    reward_map = None

    def __init__(self):
        self.command = np.zeros(2)

    def reset(self, scene: Scene, episode: EpisodeConfig) -> None:
        self.command = np.zeros(2)

    def set_command(self, vel) -> None:
        self.command = np.asarray(vel, dtype=float)

    def pref_velocity(self, state: SimState) -> np.ndarray:
        return self.command.copy()


def orca_baseline(scene: Scene, episode: EpisodeConfig) -> ShortestPathController:
    ctrl = ShortestPathController()
    ctrl.reset(scene, episode)
    return ctrl


def orca_backoff_baseline(scene: Scene, episode: EpisodeConfig) -> BackoffController:
    ctrl = BackoffController()
    ctrl.reset(scene, episode)
    return ctrl


def scripted_expert(scene: Scene, episode: EpisodeConfig,
                    refuge_clearance: float = REFUGE_PATH_DISTANCE) -> ScriptedExpert:
    ctrl = ScriptedExpert(refuge_clearance=refuge_clearance)
    ctrl.reset(scene, episode)
    return ctrl
