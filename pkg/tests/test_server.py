import json
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient

from crossnav.scene import EpisodeConfig, build_scene
from crossnav.server import PROTOCOL_VERSION, build_app


@pytest.fixture(scope="module")
def scene():
    return build_scene()


# short same-room hop for quick teleop tests; the human crosses on its own
TELEOP_EP = EpisodeConfig(
    robot_start=(-1.0, -2.0), robot_goal=(-1.0, -1.0),
    human_start=(2.0, 2.0), human_goal=(2.0, -2.0),
    human_speed=1.0, episode_id="teleop0", seed=11)


@pytest.fixture()
def client(scene, tmp_path):
    app = build_app(scene, [TELEOP_EP], demo_dir=tmp_path / "demos",
                    time_scale=20.0)
    with TestClient(app) as c:
        yield c


def drive_teleop(client, script):
    """Run a scripted teleop session; script = [(sim_t, direction), ...]."""
    resp = client.post("/api/v1/sessions",
                       json={"v": PROTOCOL_VERSION, "mode": "teleop",
                             "episode_id": "teleop0"})
    assert resp.status_code == 200
    session_id = resp.json()["session_id"]
    pending = list(script)
    result = None
    with client.websocket_connect(f"/api/v1/sessions/{session_id}/stream") as ws:
        while True:
            frame = json.loads(ws.receive_text())
            if frame["type"] == "finished":
                result = frame
                break
            if frame["type"] != "state":
                continue
            while pending and frame["t"] >= pending[0][0]:
                _, direction = pending.pop(0)
                ws.send_text(json.dumps({"v": PROTOCOL_VERSION,
                                         "type": "command",
                                         "direction": direction}))
    return session_id, result


class TestInfo:
    def test_schema(self, client):
        doc = client.get("/api/v1/info").json()
        assert doc["v"] == PROTOCOL_VERSION
        assert doc["scene"]["rows"] == 60
        assert doc["scene"]["agent_radius"] == 0.3
        assert doc["episodes"][0]["episode_id"] == "teleop0"

    def test_bad_protocol_version_rejected(self, client):
        resp = client.post("/api/v1/sessions",
                           json={"v": 99, "mode": "teleop",
                                 "episode_id": "teleop0"})
        assert resp.status_code == 400

    def test_unknown_episode(self, client):
        resp = client.post("/api/v1/sessions",
                           json={"v": PROTOCOL_VERSION, "mode": "teleop",
                                 "episode_id": "nope"})
        assert resp.status_code == 404


class TestTeleop:
    # hold still 3.5 s (counter-stop), then drive up to the goal
    SCRIPT = [(0.0, "stop"), (3.6, "up"), (5.2, "stop"), (5.4, "up")]

    def test_session_records_and_saves(self, client, scene):
        session_id, result = drive_teleop(client, self.SCRIPT)
        assert result["outcome"] == "success"

        meta = client.get(f"/api/v1/sessions/{session_id}/log").json()
        assert meta["outcome"] == "success"
        assert meta["counter_stops"] >= 1

        saved = client.post(f"/api/v1/sessions/{session_id}/save").json()["saved"]
        assert saved["outcome"] == "success"
        assert saved["counter_stops"] == meta["counter_stops"]

        listing = client.get("/api/v1/demos").json()["demos"]
        assert any(d["demo_id"] == saved["demo_id"] for d in listing)

    def test_saved_demo_trains_without_adaptation(self, client, scene, tmp_path):
        session_id, result = drive_teleop(client, self.SCRIPT)
        assert result["outcome"] == "success"
        client.post(f"/api/v1/sessions/{session_id}/save")

        from crossnav.demos import load_dataset
        from crossnav.rewardnet import NetConfig
        from crossnav.smedirl import TrainConfig, train
        demo_root = [p for p in tmp_path.glob("demos/dataset.npz")]
        assert demo_root, "merged dataset not written"
        ds = load_dataset(demo_root[0])
        assert len(ds) > 0
        params, stats = train(
            ds, NetConfig(in_channels=8, encoder_widths=(4,), kernel=3, seed=0),
            TrainConfig(epochs=1, batch_size=8, seed=0), log_every=0)
        assert not stats.aborted

    def test_counter_stop_count_matches_library(self, client, scene, tmp_path):
        from crossnav.demos import count_counter_stops
        from crossnav.sim import load_log

        session_id, _ = drive_teleop(client, self.SCRIPT)
        saved = client.post(f"/api/v1/sessions/{session_id}/save").json()["saved"]
        stored = load_log(tmp_path / "demos" / "logs" / f"{saved['demo_id']}.jsonl")
        assert count_counter_stops(stored, scene.spec) == saved["counter_stops"]

    def test_delete_demo(self, client):
        session_id, _ = drive_teleop(client, self.SCRIPT)
        saved = client.post(f"/api/v1/sessions/{session_id}/save").json()["saved"]
        resp = client.delete(f"/api/v1/demos/{saved['demo_id']}")
        assert resp.status_code == 200
        listing = client.get("/api/v1/demos").json()["demos"]
        assert not any(d["demo_id"] == saved["demo_id"] for d in listing)

    def test_bad_command_rejected_session_continues(self, client):
        resp = client.post("/api/v1/sessions",
                           json={"v": PROTOCOL_VERSION, "mode": "teleop",
                                 "episode_id": "teleop0"})
        session_id = resp.json()["session_id"]
        with client.websocket_connect(
                f"/api/v1/sessions/{session_id}/stream") as ws:
            ws.send_text(json.dumps({"v": PROTOCOL_VERSION, "type": "command",
                                     "direction": "diagonal"}))
            saw_error = saw_state = False
            for _ in range(300):
                frame = json.loads(ws.receive_text())
                if frame["type"] == "error":
                    saw_error = True
                if frame["type"] == "state":
                    saw_state = True
                if (saw_error and saw_state) or frame["type"] == "finished":
                    break
            assert saw_error and saw_state


class TestReplay:
    def make_log(self, scene, tmp_path):
        from crossnav.controllers import ShortestPathController
        from crossnav.sim import run_episode, save_log
        ep = EpisodeConfig(robot_start=(-1.0, -2.0), robot_goal=(-1.0, -0.8),
                           human_start=(2.0, 2.0), human_goal=(2.0, 1.0),
                           human_speed=1.0, episode_id="teleop0", seed=2)
        log = run_episode(scene, ep, ShortestPathController())
        path = tmp_path / "replay.jsonl"
        save_log(log, path)
        return path, log

    def test_replay_paces_wall_clock(self, client, scene, tmp_path):
        path, log = self.make_log(scene, tmp_path)
        resp = client.post("/api/v1/sessions",
                           json={"v": PROTOCOL_VERSION, "mode": "replay",
                                 "log_path": str(path)})
        session_id = resp.json()["session_id"]
        arrivals = []
        with client.websocket_connect(
                f"/api/v1/sessions/{session_id}/stream") as ws:
            t0 = time.monotonic()
            while True:
                frame = json.loads(ws.receive_text())
                if frame["type"] == "finished":
                    assert frame["outcome"] == log.outcome
                    break
                arrivals.append((frame["t"], time.monotonic() - t0))
        # 1x wall clock within one frame (0.1 s) plus scheduling slack
        for sim_t, wall_t in arrivals:
            assert abs(wall_t - sim_t) < 0.1 + 0.15

    def test_missing_log_rejected(self, client):
        resp = client.post("/api/v1/sessions",
                           json={"v": PROTOCOL_VERSION, "mode": "replay",
                                 "log_path": "/nonexistent.jsonl"})
        assert resp.status_code == 404
