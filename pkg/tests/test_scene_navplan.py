import numpy as np
import pytest

from crossnav.gridmdp import world_to_grid
from crossnav.navplan import (
    NoPathError,
    WorldPath,
    astar_grid,
    baseline_reference,
    follow_reference,
    resample_path,
    shortest_path,
)
from crossnav.scene import (
    EpisodeConfig,
    SceneBuildError,
    build_scene,
    load_scene,
    load_suite,
    save_scene,
    save_suite,
)

from oracles import bfs_path_length


@pytest.fixture(scope="module")
def scene():
    return build_scene()


class TestScene:
    def test_door_corridor_navigable(self, scene):
        for x in (-0.15, -0.05, 0.05, 0.15):
            assert not scene.occupancy[world_to_grid((x, 0.0), scene.spec)]

    def test_narrow_door_rejected(self):
        with pytest.raises(SceneBuildError):
            build_scene(door_width=0.5)

    def test_deterministic(self):
        a = build_scene(seed=3)
        b = build_scene(seed=3)
        assert np.array_equal(a.rgb, b.rgb)
        assert np.array_equal(a.occupancy, b.occupancy)

    def test_walls_rendered_dark(self, scene):
        wall_cell = world_to_grid((2.0, 0.0), scene.spec)  # dividing wall
        floor_cell = world_to_grid((0.0, 1.5), scene.spec)
        assert scene.rgb[wall_cell].max() < 100
        assert scene.rgb[floor_cell].min() > 150

    def test_wall_distance(self, scene):
        # door center is 0.45 m from both jambs
        assert scene.wall_distance((0.0, 0.0)) == pytest.approx(0.45, abs=1e-6)

    def test_round_trip(self, scene, tmp_path):
        save_scene(scene, tmp_path / "scene.json")
        loaded = load_scene(tmp_path / "scene.json")
        assert np.array_equal(loaded.occupancy, scene.occupancy)
        assert np.array_equal(loaded.rgb, scene.rgb)

    def test_suite_round_trip(self, tmp_path):
        eps = [EpisodeConfig(robot_start=(0.5, -2.0), robot_goal=(0.5, 2.0),
                             human_start=(-0.5, 2.0), human_goal=(-0.5, -2.0),
                             human_speed=0.9, episode_id="a", seed=5,
                             contention=True)]
        save_suite(eps, tmp_path / "suite.json")
        loaded = load_suite(tmp_path / "suite.json")
        assert loaded[0].episode_id == "a"
        assert loaded[0].contention is True
        assert np.allclose(loaded[0].robot_start, (0.5, -2.0))


class TestAstar:
    def test_trivial(self):
        blocked = np.zeros((5, 5), dtype=bool)
        assert astar_grid(blocked, (2, 2), (2, 2)) == [(2, 2)]

    def test_goal_blocked(self):
        blocked = np.zeros((5, 5), dtype=bool)
        blocked[1, 1] = True
        with pytest.raises(NoPathError):
            astar_grid(blocked, (0, 0), (1, 1))

    def test_unreachable(self):
        blocked = np.zeros((5, 5), dtype=bool)
        blocked[:, 2] = True
        with pytest.raises(NoPathError):
            astar_grid(blocked, (0, 0), (0, 4))

    def test_straight_corridor_matches_bfs(self):
        blocked = np.zeros((3, 20), dtype=bool)
        blocked[0, :] = True
        blocked[2, :] = True
        path = astar_grid(blocked, (1, 0), (1, 19))
        oracle = bfs_path_length(blocked, (1, 0), (1, 19))
        assert len(path) - 1 == oracle == 19

    def test_random_grids_match_bfs(self):
        rng = np.random.default_rng(0)
        checked = 0
        while checked < 100:
            rows, cols = rng.integers(4, 14, 2)
            blocked = rng.uniform(size=(rows, cols)) < 0.3
            start = (int(rng.integers(rows)), int(rng.integers(cols)))
            goal = (int(rng.integers(rows)), int(rng.integers(cols)))
            if blocked[start] or blocked[goal]:
                continue
            oracle = bfs_path_length(blocked, start, goal)
            if oracle is None:
                with pytest.raises(NoPathError):
                    astar_grid(blocked, start, goal)
            else:
                path = astar_grid(blocked, start, goal)
                assert len(path) - 1 == oracle
                for a, b in zip(path, path[1:]):
                    assert abs(a[0] - b[0]) + abs(a[1] - b[1]) == 1
                    assert not blocked[b]
            checked += 1

    def test_scene_waypoints_navigable(self, scene):
        path = shortest_path(scene, (-1.0, -2.0), (1.0, 2.0))
        for wp in path.waypoints:
            assert scene.navigable(wp)


class TestFollowReference:
    def test_at_final_waypoint(self):
        path = WorldPath(waypoints=np.array([[1.0, 1.0]]), times=np.array([0.0]))
        v = follow_reference(path, (1.0, 1.02))
        assert np.allclose(v, 0.0)

    def test_far_waypoint_clipped(self):
        path = WorldPath(waypoints=np.array([[1.0, 0.0]]), times=np.array([0.0]))
        v = follow_reference(path, (0.0, 0.0), dt=0.2)
        assert np.linalg.norm(v) == pytest.approx(1.3)

    def test_near_waypoint_proportional(self):
        path = WorldPath(waypoints=np.array([[0.1, 0.0]]), times=np.array([0.0]))
        v = follow_reference(path, (0.0, 0.0), dt=0.2)
        assert np.linalg.norm(v) == pytest.approx(0.5)

    def test_skips_reached_waypoints(self):
        path = WorldPath(waypoints=np.array([[0.0, 0.0], [1.0, 0.0]]),
                         times=np.array([0.0, 0.2]))
        v = follow_reference(path, (0.02, 0.0), dt=0.2)
        assert v[0] > 0  # aims at the second waypoint


class TestRewardReference:
    @pytest.fixture(scope="class")
    def zero_net(self):
        from crossnav.rewardnet import NetConfig, init
        params = init(NetConfig(in_channels=8, encoder_widths=(4, 8),
                                kernel=3, seed=0))
        w, b = params.tensors()[-1]
        w[:] = 0.0
        b[:] = 0.0
        return params

    def make_snapshot(self, scene, pos=(0.0, -1.0)):
        from crossnav.featurize import Snapshot, Track
        return Snapshot(
            time=2.0, scene_image=scene.rgb,
            robot_past=Track(np.array([2.0]), np.array([pos])),
            human_past=Track(np.array([2.0]), np.array([[0.5, 1.0]])),
            human_velocity=np.array([0.0, -1.0]), human_heading=-np.pi / 2,
            robot_goal=np.array([0.0, 2.0]), robot_pos=np.array(pos),
        )

    def test_timestamps_every_200ms(self, scene, zero_net):
        from crossnav.navplan import reward_reference
        snap = self.make_snapshot(scene)
        path, reward = reward_reference(zero_net, snap, scene.spec)
        assert np.all(reward == 0.0)
        assert np.allclose(np.diff(path.times), 0.2)
        assert path.times[0] == pytest.approx(2.0)

    def test_deterministic(self, scene, zero_net):
        from crossnav.navplan import reward_reference
        snap = self.make_snapshot(scene)
        a, _ = reward_reference(zero_net, snap, scene.spec)
        b, _ = reward_reference(zero_net, snap, scene.spec)
        assert np.array_equal(a.waypoints, b.waypoints)

    def test_stochastic_decode_seeded(self, scene, zero_net):
        from crossnav.navplan import reward_reference
        snap = self.make_snapshot(scene)
        a, _ = reward_reference(zero_net, snap, scene.spec, stochastic=True,
                                rng=np.random.default_rng(4))
        b, _ = reward_reference(zero_net, snap, scene.spec, stochastic=True,
                                rng=np.random.default_rng(4))
        assert np.array_equal(a.waypoints, b.waypoints)

    def test_repeated_waypoints_command_zero(self):
        from crossnav.navplan import WorldPath, follow_reference
        path = WorldPath(waypoints=np.tile([0.5, -1.0], (5, 1)),
                         times=np.arange(5) * 0.2)
        assert np.allclose(follow_reference(path, (0.5, -1.0)), 0.0)


class TestResample:
    def test_spacing(self):
        path = WorldPath(waypoints=np.array([[0.0, 0.0], [2.0, 0.0]]),
                         times=np.array([0.0, 2.0]))
        out = resample_path(path, spacing=0.5)
        gaps = np.linalg.norm(np.diff(out.waypoints, axis=0), axis=1)
        assert np.allclose(gaps[:-1], 0.5)
        assert np.allclose(out.waypoints[-1], [2.0, 0.0])

    def test_baseline_reference_timestamps(self, scene):
        path = baseline_reference(scene, (-1.0, -2.0), (1.0, 2.0))
        assert np.allclose(np.diff(path.times), 0.2)
