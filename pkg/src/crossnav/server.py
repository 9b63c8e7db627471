"""Bridge server for the browser UI: live teleoperation, replay streaming,
and demo recording over versioned JSON messages.

Request/response endpoints are plain HTTP; the state stream and command
channel share one persistent WebSocket per session (frames are
length-delimited by the WebSocket layer).  Message schemas carry "v": 1 and
unknown versions are rejected with an error frame.

The primary pipeline never imports this module; it exists for the UI and
for human demonstration collection.
"""

from __future__ import annotations

import asyncio
import dataclasses
import json
import threading
import time
import uuid
from pathlib import Path

import numpy as np

PROTOCOL_VERSION = 1

from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from fastapi.responses import JSONResponse, PlainTextResponse

from . import rewardnet
from .controllers import TeleopController
from .demos import count_counter_stops, heading_series, record_demos, save_dataset
from .featurize import build_stack
from .gridmdp import world_to_grid
from .orca import Body, orca_lines, solve_velocity, _perturbation
from .scene import EpisodeConfig, Scene
from .sim import (
    DT_CONTROL,
    DT_SIM,
    ROBOT_ORCA_CFG,
    ROBOT_MAX_SPEED,
    EpisodeLog,
    PriorityHuman,
    SimFlags,
    SimState,
    _integrate_with_wall_clamp,
    load_log,
    run_episode,
    save_log,
)

DIRECTIONS = {
    "up": (0.0, 1.0),
    "down": (0.0, -1.0),
    "left": (-1.0, 0.0),
    "right": (1.0, 0.0),
    "stop": (0.0, 0.0),
}


def _scene_geometry(scene: Scene) -> dict:
    return {
        "extent": scene.params.extent,
        "cell_size": scene.spec.cell_size,
        "rows": scene.spec.rows,
        "cols": scene.spec.cols,
        "door_width": scene.door_width,
        "agent_radius": 0.3,
        "walls": [{"x0": r.x0, "y0": r.y0, "x1": r.x1, "y1": r.y1}
                  for r in scene.wall_rects],
    }


class TeleopSession:
    """Wall-clock simulation thread driven by discrete direction commands."""

    def __init__(self, scene: Scene, episode: EpisodeConfig,
                 params: rewardnet.Params | None, realtime: bool = True,
                 time_scale: float = 1.0):
        self.scene = scene
        self.episode = episode
        self.params = params
        self.realtime = realtime
        self.time_scale = time_scale
        self.controller = TeleopController()
        self.lock = threading.Lock()
        self.latest: dict | None = None
        self.log: EpisodeLog | None = None
        self.finished = threading.Event()
        self._stop = threading.Event()
        self.thread = threading.Thread(target=self._run, daemon=True)
        self.thread.start()

    def command(self, direction: str) -> None:
        vx, vy = DIRECTIONS[direction]
        self.controller.set_command(np.array([vx, vy]) * ROBOT_MAX_SPEED)

    def stop(self) -> None:
        self._stop.set()

    def _publish(self, state: SimState, reward) -> None:
        frame = {
            "v": PROTOCOL_VERSION, "type": "state", "t": round(state.t, 3),
            "robot": {"pos": [round(float(x), 4) for x in state.robot.pos],
                      "vel": [round(float(x), 4) for x in state.robot.vel]},
            "human": {"pos": [round(float(x), 4) for x in state.human.pos],
                      "vel": [round(float(x), 4) for x in state.human.vel]},
            "flags": dataclasses.asdict(state.flags),
            "recording": True,
        }
        if reward is not None:
            frame["reward"] = np.round(reward, 3).tolist()
        with self.lock:
            self.latest = frame

    def _run(self) -> None:
        scene, episode = self.scene, self.episode
        robot = Body(pos=episode.robot_start.copy(), vel=np.zeros(2), radius=0.3,
                     pref_vel=np.zeros(2), max_speed=ROBOT_MAX_SPEED)
        human = Body(pos=episode.human_start.copy(), vel=np.zeros(2), radius=0.3,
                     pref_vel=np.zeros(2), max_speed=episode.human_speed)
        flags = SimFlags()
        state = SimState(t=0.0, robot=robot, human=human, flags=flags)
        human_model = PriorityHuman(scene, episode)
        times, rpos, rvel, hpos, hvel = [], [], [], [], []
        events = []
        robot_cmd = human_cmd = np.zeros(2)
        robot_time = human_time = None
        reward = None
        k = 0
        t0 = time.monotonic()
        while not self._stop.is_set():
            t = round(k * DT_SIM, 6)
            state.t = t
            if robot_time is None and np.linalg.norm(robot.pos - episode.robot_goal) <= 0.2:
                flags.robot_done = True
                robot_time = t
                events.append((t, "robot_done"))
            if human_time is None and np.linalg.norm(human.pos - episode.human_goal) <= 0.2:
                flags.human_done = True
                human_time = t
                events.append((t, "human_done"))
            if np.linalg.norm(robot.pos - human.pos) < 0.6 - 1e-3:
                flags.collision = True
                events.append((t, "collision"))
            times.append(t)
            rpos.append(robot.pos.copy())
            rvel.append(robot.vel.copy())
            hpos.append(human.pos.copy())
            hvel.append(human.vel.copy())
            if flags.collision or (flags.robot_done and flags.human_done) \
                    or t >= 120.0:
                break
            if k % 2 == 0:
                human_cmd = human_model.command(state) if not flags.human_done else np.zeros(2)
                if not flags.robot_done:
                    pref = self.controller.pref_velocity(state)
                    lines = orca_lines(robot, [human], scene.walls, ROBOT_ORCA_CFG)
                    pert = _perturbation(episode.seed, k // 2)
                    robot_cmd = solve_velocity(lines, pref + pert, ROBOT_MAX_SPEED)
                else:
                    robot_cmd = np.zeros(2)
                if self.params is not None:
                    reward = self._live_reward(state, times, rpos, hpos, hvel)
            robot.vel = robot_cmd if not flags.robot_done else np.zeros(2)
            human.vel = human_cmd if not flags.human_done else np.zeros(2)
            _integrate_with_wall_clamp(scene, robot, DT_SIM)
            _integrate_with_wall_clamp(scene, human, DT_SIM)
            self._publish(state, reward)
            k += 1
            if self.realtime:
                target = t0 + k * DT_SIM / self.time_scale
                delay = target - time.monotonic()
                if delay > 0:
                    time.sleep(delay)
        log = EpisodeLog(episode_id=self.episode.episode_id, controller="teleop",
                         seed=episode.seed)
        log.times = np.array(times)
        log.robot_pos = np.array(rpos)
        log.robot_vel = np.array(rvel)
        log.human_pos = np.array(hpos)
        log.human_vel = np.array(hvel)
        log.events = events
        if flags.collision:
            log.outcome = "collision"
        elif robot_time is not None:
            log.outcome = "success"
        else:
            log.outcome = "timeout"
        log.robot_time = robot_time if robot_time is not None else 120.0
        log.human_time = human_time if human_time is not None else 120.0
        self.log = log
        self.finished.set()

    def _live_reward(self, state, times, rpos, hpos, hvel):
        from .featurize import Snapshot, Track
        lo = max(0, len(times) - 30)
        heading = heading_series(np.array(hvel[lo:]))[-1] if hvel else 0.0
        snap = Snapshot(
            time=state.t, scene_image=self.scene.rgb,
            robot_past=Track(np.array(times[lo:]), np.array(rpos[lo:])),
            human_past=Track(np.array(times[lo:]), np.array(hpos[lo:])),
            human_velocity=state.human.vel.copy(), human_heading=heading,
            robot_goal=self.episode.robot_goal, robot_pos=state.robot.pos.copy(),
        )
        reward, _ = rewardnet.forward(build_stack(snap, self.scene.spec), self.params)
        return reward


class DemoStore:
    """Saved teleop demonstrations: per-demo logs plus one merged dataset."""

    def __init__(self, scene: Scene, root):
        self.scene = scene
        self.root = Path(root)
        (self.root / "logs").mkdir(parents=True, exist_ok=True)
        self.index_path = self.root / "index.json"
        self.index = json.loads(self.index_path.read_text()) \
            if self.index_path.exists() else {}

    def save(self, log: EpisodeLog, episode: EpisodeConfig) -> dict:
        demo_id = uuid.uuid4().hex[:12]
        save_log(log, self.root / "logs" / f"{demo_id}.jsonl")
        entry = {
            "demo_id": demo_id,
            "episode_id": episode.episode_id,
            "episode": episode.to_dict(),
            "outcome": log.outcome,
            "duration": float(log.times[-1]),
            "counter_stops": count_counter_stops(log, self.scene.spec),
        }
        self.index[demo_id] = entry
        self._flush()
        return entry

    def delete(self, demo_id: str) -> bool:
        if demo_id not in self.index:
            return False
        del self.index[demo_id]
        path = self.root / "logs" / f"{demo_id}.jsonl"
        if path.exists():
            path.unlink()
        self._flush()
        return True

    def listing(self) -> list[dict]:
        return sorted(self.index.values(), key=lambda e: e["demo_id"])

    def _flush(self) -> None:
        self.index_path.write_text(json.dumps(self.index, indent=2, sort_keys=True))
        # rebuild the merged dataset from successful saved demos
        logs, eps = [], []
        for entry in self.index.values():
            if entry["outcome"] != "success":
                continue
            logs.append(load_log(self.root / "logs" / f"{entry['demo_id']}.jsonl"))
            eps.append(EpisodeConfig.from_dict(entry["episode"]))
        if logs:
            save_dataset(record_demos(logs, eps, self.scene),
                         self.root / "dataset.npz")


def build_app(scene: Scene, episodes: list[EpisodeConfig],
              checkpoint: str | None = None,
              demo_dir: str = "teleop_demos",
              realtime: bool = True, time_scale: float = 1.0) -> FastAPI:
    app = FastAPI(title="crossnav bridge", version=str(PROTOCOL_VERSION))
    params = rewardnet.load_params(checkpoint) if checkpoint else None
    store = DemoStore(scene, demo_dir)
    by_id = {ep.episode_id: ep for ep in episodes}
    sessions: dict[str, dict] = {}

    @app.get("/api/v1/info")
    def info():
        return {"v": PROTOCOL_VERSION, "scene": _scene_geometry(scene),
                "episodes": [ep.to_dict() for ep in episodes],
                "reward_overlay": params is not None}

    @app.get("/api/v1/demos")
    def demos():
        return {"v": PROTOCOL_VERSION, "demos": store.listing()}

    @app.delete("/api/v1/demos/{demo_id}")
    def delete_demo(demo_id: str):
        if not store.delete(demo_id):
            return JSONResponse({"v": PROTOCOL_VERSION, "error": "unknown demo"},
                                status_code=404)
        return {"v": PROTOCOL_VERSION, "deleted": demo_id}

    @app.post("/api/v1/sessions")
    async def start_session(body: dict):
        if body.get("v") != PROTOCOL_VERSION:
            return JSONResponse({"v": PROTOCOL_VERSION,
                                 "error": "unsupported protocol version"},
                                status_code=400)
        mode = body.get("mode")
        session_id = uuid.uuid4().hex[:12]
        if mode == "teleop":
            episode = by_id.get(body.get("episode_id"))
            if episode is None:
                return JSONResponse({"v": PROTOCOL_VERSION,
                                     "error": "unknown episode"}, status_code=404)
            session = TeleopSession(scene, episode, params, realtime=realtime,
                                    time_scale=time_scale)
            sessions[session_id] = {"mode": "teleop", "session": session,
                                    "episode": episode}
        elif mode == "replay":
            log_path = body.get("log_path")
            try:
                log = load_log(log_path)
            except (OSError, ValueError) as e:
                return JSONResponse({"v": PROTOCOL_VERSION, "error": str(e)},
                                    status_code=404)
            sessions[session_id] = {"mode": "replay", "log": log}
        else:
            return JSONResponse({"v": PROTOCOL_VERSION, "error": "unknown mode"},
                                status_code=400)
        return {"v": PROTOCOL_VERSION, "session_id": session_id, "mode": mode}

    @app.post("/api/v1/sessions/{session_id}/save")
    def save_session(session_id: str):
        entry = sessions.get(session_id)
        if entry is None or entry["mode"] != "teleop":
            return JSONResponse({"v": PROTOCOL_VERSION,
                                 "error": "unknown teleop session"},
                                status_code=404)
        session: TeleopSession = entry["session"]
        if not session.finished.is_set():
            return JSONResponse({"v": PROTOCOL_VERSION,
                                 "error": "session still running"},
                                status_code=409)
        saved = store.save(session.log, entry["episode"])
        return {"v": PROTOCOL_VERSION, "saved": saved}

    @app.get("/api/v1/sessions/{session_id}/log")
    def session_log(session_id: str):
        entry = sessions.get(session_id)
        if entry is None or entry["mode"] != "teleop" \
                or not entry["session"].finished.is_set():
            return JSONResponse({"v": PROTOCOL_VERSION, "error": "no finished log"},
                                status_code=404)
        log = entry["session"].log
        return {
            "v": PROTOCOL_VERSION,
            "episode_id": log.episode_id,
            "outcome": log.outcome,
            "robot_time": log.robot_time,
            "human_time": log.human_time,
            "counter_stops": count_counter_stops(log, scene.spec),
            "n_samples": log.n_samples,
        }

    @app.websocket("/api/v1/sessions/{session_id}/stream")
    async def stream(ws: WebSocket, session_id: str):
        await ws.accept()
        entry = sessions.get(session_id)
        if entry is None:
            await ws.send_text(json.dumps({"v": PROTOCOL_VERSION, "type": "error",
                                           "error": "unknown session"}))
            await ws.close()
            return
        if entry["mode"] == "teleop":
            await _stream_teleop(ws, entry["session"])
        else:
            await _stream_replay(ws, entry["log"], scene, params, by_id)

    async def _stream_teleop(ws: WebSocket, session: TeleopSession):
        async def receiver():
            while True:
                msg = json.loads(await ws.receive_text())
                if msg.get("v") != PROTOCOL_VERSION:
                    await ws.send_text(json.dumps({
                        "v": PROTOCOL_VERSION, "type": "error",
                        "error": "unsupported protocol version"}))
                    continue
                if msg.get("type") == "command":
                    direction = msg.get("direction")
                    if direction in DIRECTIONS:
                        session.command(direction)
                    else:
                        await ws.send_text(json.dumps({
                            "v": PROTOCOL_VERSION, "type": "error",
                            "error": f"unknown direction {direction!r}"}))

        recv_task = asyncio.create_task(receiver())
        try:
            last_t = None
            while True:
                with session.lock:
                    frame = session.latest
                if frame is not None and frame["t"] != last_t:
                    await ws.send_text(json.dumps(frame))
                    last_t = frame["t"]
                if session.finished.is_set():
                    await ws.send_text(json.dumps({
                        "v": PROTOCOL_VERSION, "type": "finished",
                        "outcome": session.log.outcome,
                        "robot_time": session.log.robot_time,
                        "human_time": session.log.human_time}))
                    break
                await asyncio.sleep(DT_SIM / 2)
        except WebSocketDisconnect:
            session.stop()
        finally:
            recv_task.cancel()

    async def _stream_replay(ws: WebSocket, log: EpisodeLog, scene: Scene,
                             params, by_id):
        episode = by_id.get(log.episode_id)
        if episode is None:
            base = log.episode_id.split("r")[0]
            episode = by_id.get(base)
        headings = heading_series(log.human_vel)
        t_start = time.monotonic()
        try:
            for i in range(log.n_samples):
                target = t_start + float(log.times[i] - log.times[0])
                delay = target - time.monotonic()
                if delay > 0:
                    await asyncio.sleep(delay)
                frame = {
                    "v": PROTOCOL_VERSION, "type": "state",
                    "t": round(float(log.times[i]), 3),
                    "robot": {"pos": [round(float(x), 4) for x in log.robot_pos[i]],
                              "vel": [round(float(x), 4) for x in log.robot_vel[i]]},
                    "human": {"pos": [round(float(x), 4) for x in log.human_pos[i]],
                              "vel": [round(float(x), 4) for x in log.human_vel[i]]},
                    "flags": {"replay": True},
                    "recording": False,
                }
                if params is not None and episode is not None and i % 2 == 0:
                    from .demos import snapshot_from_log
                    snap = snapshot_from_log(scene, log, episode, i, headings)
                    reward, _ = rewardnet.forward(
                        build_stack(snap, scene.spec), params)
                    frame["reward"] = np.round(reward, 3).tolist()
                await ws.send_text(json.dumps(frame))
            await ws.send_text(json.dumps({
                "v": PROTOCOL_VERSION, "type": "finished",
                "outcome": log.outcome, "robot_time": log.robot_time,
                "human_time": log.human_time}))
        except WebSocketDisconnect:
            pass

    return app


def serve(scene: Scene, episodes: list[EpisodeConfig], host: str = "127.0.0.1",
          port: int = 8008, checkpoint: str | None = None,
          demo_dir: str = "teleop_demos") -> None:
    import uvicorn
    app = build_app(scene, episodes, checkpoint=checkpoint, demo_dir=demo_dir)
    uvicorn.run(app, host=host, port=port, log_level="warning")
