"""Deterministic fixed-step narrow-crossing episode simulator.

Dynamics run at 0.1 s; controllers are invoked every 0.2 s and their
commands held between ticks.  The human follows its static shortest path
with priority: it never yields laterally, stops when the robot blocks the
path ahead, and stops rather than penetrate a wall.  The robot's preferred
velocity comes from the supplied controller and is always filtered through
ORCA against the human and the wall segments.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .navplan import follow_reference, resample_path, shortest_path
from .orca import Body, OrcaConfig, orca_lines, solve_velocity, _perturbation
from .scene import HUMAN_RADIUS, ROBOT_RADIUS, EpisodeConfig, Scene

DT_SIM = 0.1
DT_CONTROL = 0.2
DEFAULT_TIMEOUT = 120.0
SUCCESS_RADIUS = 0.2
ROBOT_MAX_SPEED = 1.3

DEADLOCK_WINDOW = 50      # controller timesteps
DEADLOCK_THRESHOLD = 0.1  # m displacement over the window
COLLISION_TOL = 1e-3

# human priority model: stop when the robot disc blocks the path ahead; the
# clearance must exceed one control tick of worst-case mutual closure
HUMAN_STOP_CLEARANCE = HUMAN_RADIUS + ROBOT_RADIUS + 0.35
HUMAN_STOP_LOOKAHEAD = 1.2  # m of upcoming path

LOG_FORMAT_VERSION = 1

ROBOT_ORCA_CFG = OrcaConfig(time_horizon=4.0, time_horizon_obst=1.0,
                            neighbor_dist=0.5, dt=DT_CONTROL, responsibility=1.0)
RECIPROCAL_ORCA_CFG = OrcaConfig(time_horizon=4.0, time_horizon_obst=1.0,
                                 neighbor_dist=0.5, dt=DT_CONTROL, responsibility=0.5)


@dataclass
class SimFlags:
    deadlock: bool = False
    collision: bool = False
    robot_done: bool = False
    human_done: bool = False


@dataclass
class SimState:
    t: float
    robot: Body
    human: Body
    flags: SimFlags


@dataclass
class EpisodeLog:
    episode_id: str
    controller: str
    seed: int
    dt: float = DT_SIM
    times: np.ndarray | None = None
    robot_pos: np.ndarray | None = None
    robot_vel: np.ndarray | None = None
    human_pos: np.ndarray | None = None
    human_vel: np.ndarray | None = None
    events: list = field(default_factory=list)       # (t, name) pairs
    outcome: str = ""
    robot_time: float = 0.0
    human_time: float = 0.0
    reward_maps: dict = field(default_factory=dict)  # control tick -> float32 map

    @property
    def n_samples(self) -> int:
        return 0 if self.times is None else len(self.times)


def detect_deadlock(robot_positions, human_positions,
                    window: int = DEADLOCK_WINDOW,
                    threshold: float = DEADLOCK_THRESHOLD) -> bool:
    """True iff both agents moved less than the threshold over the window.

    Positions are controller-tick samples; fewer than window+1 samples
    cannot span the window and report False.
    """
    if len(robot_positions) < window + 1 or len(human_positions) < window + 1:
        return False
    rd = float(np.linalg.norm(np.asarray(robot_positions[-1])
                              - np.asarray(robot_positions[-1 - window])))
    hd = float(np.linalg.norm(np.asarray(human_positions[-1])
                              - np.asarray(human_positions[-1 - window])))
    return rd < threshold and hd < threshold


class PathFollower:
    """Waypoint consumer with capture radius and monotone-progress skipping."""

    def __init__(self, path, dt: float = DT_CONTROL, max_speed: float = ROBOT_MAX_SPEED):
        self.path = path
        self.dt = dt
        self.max_speed = max_speed
        self.idx = 0

    def pref_velocity(self, pos) -> np.ndarray:
        pos = np.asarray(pos, dtype=float)
        wps = self.path.waypoints
        n = len(wps)
        while self.idx < n - 1 and np.linalg.norm(wps[self.idx] - pos) < 0.1:
            self.idx += 1
        # skip waypoints the agent has effectively passed
        while self.idx < n - 1 and (np.linalg.norm(wps[self.idx + 1] - pos) + 0.05
                                    < np.linalg.norm(wps[self.idx] - pos)):
            self.idx += 1
        delta = wps[self.idx] - pos
        dist = float(np.linalg.norm(delta))
        if dist < 0.1:
            return np.zeros(2)
        return delta / dist * min(dist / self.dt, self.max_speed)

    def done(self, pos) -> bool:
        return self.idx >= len(self.path.waypoints) - 1 \
            and float(np.linalg.norm(self.path.waypoints[-1] - np.asarray(pos))) < 0.1


class PriorityHuman:
    """Non-yielding path follower; waits whenever the robot blocks the way."""

    def __init__(self, scene: Scene, episode: EpisodeConfig):
        self.scene = scene
        self.speed = episode.human_speed
        static = shortest_path(scene, episode.human_start, episode.human_goal,
                               nominal_speed=self.speed)
        self.path = resample_path(static, spacing=max(self.speed * DT_CONTROL, 0.05))
        self.follower = PathFollower(self.path, dt=DT_CONTROL, max_speed=self.speed)
        self.stopped = False

    def command(self, state: SimState) -> np.ndarray:
        if state.flags.human_done:
            return np.zeros(2)
        robot_pos = state.robot.pos
        wps = self.path.waypoints
        idx = self.follower.idx
        lookahead_n = int(np.ceil(HUMAN_STOP_LOOKAHEAD
                                  / max(self.speed * DT_CONTROL, 0.05)))
        ahead = wps[idx:idx + lookahead_n + 1]
        blocked = bool(len(ahead)) and bool(
            (np.linalg.norm(ahead - robot_pos, axis=1) < HUMAN_STOP_CLEARANCE).any()
        )
        self.stopped = blocked
        if blocked:
            return np.zeros(2)
        return self.follower.pref_velocity(state.human.pos)


class OrcaHuman(PriorityHuman):
    """Variant: the human also avoids the robot reciprocally through ORCA."""

    def command(self, state: SimState) -> np.ndarray:
        if state.flags.human_done:
            return np.zeros(2)
        pref = self.follower.pref_velocity(state.human.pos)
        lines = orca_lines(state.human, [state.robot], self.scene.walls,
                           RECIPROCAL_ORCA_CFG)
        return solve_velocity(lines, pref, self.speed)


def _integrate_with_wall_clamp(scene: Scene, body: Body, dt: float) -> None:
    """Advance one step; slide along or stop at walls instead of penetrating."""
    candidates = [body.vel,
                  np.array([body.vel[0], 0.0]),
                  np.array([0.0, body.vel[1]])]
    for vel in candidates:
        new_pos = body.pos + vel * dt
        if scene.wall_distance(new_pos) >= body.radius - 1e-9:
            body.pos = new_pos
            body.vel = vel
            return
    body.vel = np.zeros(2)


def run_episode(scene: Scene, episode: EpisodeConfig, controller,
                timeout: float = DEFAULT_TIMEOUT,
                success_radius: float = SUCCESS_RADIUS,
                human_mode: str = "priority",
                record_rewards: bool = False) -> EpisodeLog:
    """Run one episode to a terminal outcome; never raises on failures."""
    for name, p in (("robot start", episode.robot_start),
                    ("robot goal", episode.robot_goal),
                    ("human start", episode.human_start),
                    ("human goal", episode.human_goal)):
        if not scene.navigable(p):
            raise ValueError(f"{name} {p} is not navigable")

    robot = Body(pos=episode.robot_start.copy(), vel=np.zeros(2),
                 radius=ROBOT_RADIUS, pref_vel=np.zeros(2),
                 max_speed=ROBOT_MAX_SPEED)
    human = Body(pos=episode.human_start.copy(), vel=np.zeros(2),
                 radius=HUMAN_RADIUS, pref_vel=np.zeros(2),
                 max_speed=episode.human_speed)
    flags = SimFlags()
    state = SimState(t=0.0, robot=robot, human=human, flags=flags)

    human_model = (OrcaHuman if human_mode == "orca" else PriorityHuman)(scene, episode)
    controller.reset(scene, episode)

    log = EpisodeLog(episode_id=episode.episode_id, controller=controller.name,
                     seed=episode.seed)
    times, rpos, rvel, hpos, hvel = [], [], [], [], []
    tick_rpos, tick_hpos = [], []
    deadlock_seen = False
    robot_cmd = np.zeros(2)
    human_cmd = np.zeros(2)
    robot_time = None
    human_time = None

    n_steps = int(round(timeout / DT_SIM))
    tick = 0
    for k in range(n_steps + 1):
        t = round(k * DT_SIM, 6)
        state.t = t

        if robot_time is None and np.linalg.norm(robot.pos - episode.robot_goal) <= success_radius:
            flags.robot_done = True
            robot_time = t
            log.events.append((t, "robot_done"))
        if human_time is None and np.linalg.norm(human.pos - episode.human_goal) <= success_radius:
            flags.human_done = True
            human_time = t
            log.events.append((t, "human_done"))
        if np.linalg.norm(robot.pos - human.pos) < robot.radius + human.radius - COLLISION_TOL:
            flags.collision = True
            log.events.append((t, "collision"))

        times.append(t)
        rpos.append(robot.pos.copy())
        rvel.append(robot.vel.copy())
        hpos.append(human.pos.copy())
        hvel.append(human.vel.copy())
        observe = getattr(controller, "observe", None)
        if observe is not None:  # 0.1 s history feed for feature-based controllers
            observe(t, robot.pos, robot.vel, human.pos, human.vel)

        if flags.collision or (flags.robot_done and flags.human_done) or k == n_steps:
            break

        if k % 2 == 0:  # controller tick
            tick_rpos.append(robot.pos.copy())
            tick_hpos.append(human.pos.copy())
            now_deadlocked = detect_deadlock(tick_rpos, tick_hpos)
            if now_deadlocked and not flags.deadlock:
                log.events.append((t, "deadlock"))
                deadlock_seen = True
            flags.deadlock = now_deadlocked

            human_cmd = human_model.command(state) if not flags.human_done else np.zeros(2)
            if flags.robot_done:
                robot_cmd = np.zeros(2)
            else:
                pref = controller.pref_velocity(state)
                lines = orca_lines(robot, [human], scene.walls, ROBOT_ORCA_CFG)
                pert = _perturbation(episode.seed, tick)
                robot_cmd = solve_velocity(lines, pref + pert, ROBOT_MAX_SPEED)
            if record_rewards and getattr(controller, "reward_map", None) is not None:
                log.reward_maps[tick] = controller.reward_map.astype(np.float32)
            tick += 1

        robot.vel = robot_cmd if not flags.robot_done else np.zeros(2)
        human.vel = human_cmd if not flags.human_done else np.zeros(2)
        _integrate_with_wall_clamp(scene, robot, DT_SIM)
        _integrate_with_wall_clamp(scene, human, DT_SIM)

    log.times = np.array(times)
    log.robot_pos = np.array(rpos)
    log.robot_vel = np.array(rvel)
    log.human_pos = np.array(hpos)
    log.human_vel = np.array(hvel)
    if flags.collision:
        log.outcome = "collision"
    elif robot_time is not None:
        log.outcome = "success"
    elif deadlock_seen:
        log.outcome = "deadlock_timeout"
    else:
        log.outcome = "timeout"
    log.robot_time = robot_time if robot_time is not None else timeout
    log.human_time = human_time if human_time is not None else timeout
    return log


def human_solo_time(scene: Scene, episode: EpisodeConfig,
                    timeout: float = DEFAULT_TIMEOUT) -> float:
    """Completion time of the human walking its path with no robot present."""
    human = Body(pos=episode.human_start.copy(), vel=np.zeros(2),
                 radius=HUMAN_RADIUS, pref_vel=np.zeros(2),
                 max_speed=episode.human_speed)
    model = PriorityHuman(scene, episode)
    # park the phantom robot far outside any interaction range
    phantom = Body(pos=np.array([1e6, 1e6]), vel=np.zeros(2), radius=ROBOT_RADIUS,
                   pref_vel=np.zeros(2), max_speed=ROBOT_MAX_SPEED)
    flags = SimFlags()
    state = SimState(t=0.0, robot=phantom, human=human, flags=flags)
    cmd = np.zeros(2)
    n_steps = int(round(timeout / DT_SIM))
    for k in range(n_steps + 1):
        t = round(k * DT_SIM, 6)
        state.t = t
        if np.linalg.norm(human.pos - episode.human_goal) <= SUCCESS_RADIUS:
            return t
        if k % 2 == 0:
            cmd = model.command(state)
        human.vel = cmd
        _integrate_with_wall_clamp(scene, human, DT_SIM)
    return timeout


# -- episode log persistence ---------------------------------------------------

def save_log(log: EpisodeLog, path) -> None:
    """Line-delimited records: header, one sample per line, events, outcome."""
    with open(path, "w") as f:
        f.write(json.dumps({
            "type": "header", "version": LOG_FORMAT_VERSION,
            "episode_id": log.episode_id, "controller": log.controller,
            "seed": log.seed, "dt": log.dt,
        }) + "\n")
        for i in range(log.n_samples):
            f.write(json.dumps({
                "type": "sample", "t": round(float(log.times[i]), 6),
                "robot": [round(float(v), 6) for v in log.robot_pos[i]],
                "robot_vel": [round(float(v), 6) for v in log.robot_vel[i]],
                "human": [round(float(v), 6) for v in log.human_pos[i]],
                "human_vel": [round(float(v), 6) for v in log.human_vel[i]],
            }) + "\n")
        for t, name in log.events:
            f.write(json.dumps({"type": "event", "t": round(float(t), 6),
                                "name": name}) + "\n")
        f.write(json.dumps({
            "type": "outcome", "outcome": log.outcome,
            "robot_time": round(float(log.robot_time), 6),
            "human_time": round(float(log.human_time), 6),
        }) + "\n")


def load_log(path) -> EpisodeLog:
    header = None
    samples = []
    events = []
    outcome = None
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            kind = rec.get("type")
            if kind == "header":
                if rec.get("version") != LOG_FORMAT_VERSION:
                    raise ValueError(f"{path}: unsupported log version")
                header = rec
            elif kind == "sample":
                samples.append(rec)
            elif kind == "event":
                events.append((rec["t"], rec["name"]))
            elif kind == "outcome":
                outcome = rec
    if header is None or outcome is None or not samples:
        raise ValueError(f"{path}: incomplete episode log")
    log = EpisodeLog(episode_id=header["episode_id"], controller=header["controller"],
                     seed=header["seed"], dt=header["dt"])
    log.times = np.array([s["t"] for s in samples])
    log.robot_pos = np.array([s["robot"] for s in samples])
    log.robot_vel = np.array([s["robot_vel"] for s in samples])
    log.human_pos = np.array([s["human"] for s in samples])
    log.human_vel = np.array([s["human_vel"] for s in samples])
    log.events = events
    log.outcome = outcome["outcome"]
    log.robot_time = outcome["robot_time"]
    log.human_time = outcome["human_time"]
    return log
