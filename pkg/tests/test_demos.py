import numpy as np
import pytest

from crossnav.demos import (
    augment_counter_stops,
    count_counter_stops,
    counter_stop_intervals,
    extrapolate_demo,
    extrapolate_dataset,
    heading_series,
    load_dataset,
    record_demos,
    save_dataset,
)
from crossnav.gridmdp import world_to_grid
from crossnav.scene import EpisodeConfig, build_scene
from crossnav.sim import EpisodeLog


@pytest.fixture(scope="module")
def scene():
    return build_scene()


EPISODE = EpisodeConfig(
    robot_start=(-1.0, -2.0), robot_goal=(0.8, 2.0),
    human_start=(0.5, 2.0), human_goal=(1.5, -2.2),
    human_speed=1.0, episode_id="demo-ep", seed=1)


def synth_log(duration, robot_fn, human_fn=None, outcome="success"):
    """Synthetic 0.1 s log from position functions of time."""
    n = int(round(duration / 0.1)) + 1
    times = np.round(np.arange(n) * 0.1, 6)
    rpos = np.array([robot_fn(t) for t in times])
    hpos = np.array([human_fn(t) if human_fn else (0.5, 2.0) for t in times])
    rvel = np.gradient(rpos, 0.1, axis=0)
    hvel = np.gradient(hpos, 0.1, axis=0)
    log = EpisodeLog(episode_id="demo-ep", controller="synthetic", seed=1)
    log.times, log.robot_pos, log.robot_vel = times, rpos, rvel
    log.human_pos, log.human_vel = hpos, hvel
    log.outcome = outcome
    log.robot_time = duration
    log.human_time = duration
    return log


def slow_crawl(t):
    # 0.15 m/s to the right along y = -2; stays inside the footprint for 25 s
    return (-1.0 + 0.15 * t, -2.0)


class TestRecordDemos:
    def test_count_arithmetic(self, scene):
        log = synth_log(20.0, slow_crawl)
        ds = record_demos([log], [EPISODE], scene)
        assert len(ds) == 191  # samples 0..190 have ten future steps

    def test_reference_contract(self, scene):
        log = synth_log(5.0, slow_crawl)
        ds = record_demos([log], [EPISODE], scene)
        for demo in ds.demonstrations:
            assert len(demo.reference.cells) == 10
            assert demo.start_cell == demo.reference.cells[0]
            demo.reference.validate(scene.spec)

    def test_snapshot_window(self, scene):
        log = synth_log(8.0, slow_crawl)
        ds = record_demos([log], [EPISODE], scene)
        late = ds.demonstrations[60]  # t = 6.0 s
        assert late.snapshot.robot_past.times[0] >= late.t - 3.0 - 1e-9
        assert late.snapshot.robot_past.times[-1] == pytest.approx(late.t)

    def test_short_episode_skipped(self, scene):
        log = synth_log(0.5, slow_crawl)
        ds = record_demos([log], [EPISODE], scene)
        assert len(ds) == 0
        assert ds.provenance["skipped_short"] == 1

    def test_failed_episode_rejected(self, scene):
        log = synth_log(5.0, slow_crawl, outcome="timeout")
        with pytest.raises(ValueError):
            record_demos([log], [EPISODE], scene)


class TestCounterStops:
    def stop_profile(self, stop_duration):
        # fast legs so the cell flips immediately at both ends of the stop
        def fn(t):
            if t < 2.0:
                return (-1.0 + 0.5 * t, -2.0)
            if t < 2.0 + stop_duration:
                return (0.0, -2.0)
            return (min(1.0 * (t - 2.0 - stop_duration), 2.0), -2.0)
        return fn

    def test_three_second_stop_detected(self, scene):
        log = synth_log(8.0, self.stop_profile(3.0))
        stops = counter_stop_intervals(log, scene.spec)
        assert any(cell == world_to_grid((0.0, -2.0), scene.spec)
                   for cell, _, _ in stops)

    def test_shorter_stop_ignored(self, scene):
        log = synth_log(8.0, self.stop_profile(2.9))
        assert count_counter_stops(log, scene.spec) == 0

    def test_augmented_references_ten_cells(self, scene):
        log = synth_log(10.0, self.stop_profile(3.5))
        demos = augment_counter_stops(log, EPISODE, scene)
        assert demos  # approach windows exist
        for d in demos:
            assert len(d.reference.cells) == 10
            assert d.source == "counter_stop_augmented"
            d.reference.validate(scene.spec)

    def test_augmented_pads_at_stop_cell(self, scene):
        log = synth_log(10.0, self.stop_profile(3.5))
        demos = augment_counter_stops(log, EPISODE, scene)
        stop_cell = world_to_grid((0.0, -2.0), scene.spec)
        d = demos[0]
        hit = d.reference.cells.index(stop_cell)
        assert all(c == stop_cell for c in d.reference.cells[hit:])


class TestExtrapolate:
    def base_demo(self, scene):
        log = synth_log(6.0, slow_crawl)
        return record_demos([log], [EPISODE], scene).demonstrations[10]

    def test_default_count(self, scene):
        demo = self.base_demo(scene)
        out = extrapolate_demo(demo, scene, k=6, radius_cells=5, rng_seed=0)
        assert len(out) == 6
        for d in out:
            assert d.source == "extrapolated"
            assert len(d.reference.cells) == 10
            d.reference.validate(scene.spec)

    def test_radius_zero_identity(self, scene):
        demo = self.base_demo(scene)
        out = extrapolate_demo(demo, scene, k=2, radius_cells=0, rng_seed=0)
        for d in out:
            assert d.reference.cells == demo.reference.cells

    def test_starts_navigable(self, scene):
        demo = self.base_demo(scene)
        out = extrapolate_demo(demo, scene, k=20, radius_cells=5, rng_seed=3)
        for d in out:
            assert not scene.occupancy[d.start_cell]

    def test_snapshot_follows_new_start(self, scene):
        from crossnav.gridmdp import grid_to_world
        demo = self.base_demo(scene)
        out = extrapolate_demo(demo, scene, k=6, radius_cells=5, rng_seed=1)
        for d in out:
            assert np.allclose(d.snapshot.robot_pos,
                               grid_to_world(d.start_cell, scene.spec))

    def test_dataset_multiplier(self, scene):
        log = synth_log(4.0, slow_crawl)
        ds = record_demos([log], [EPISODE], scene)
        bigger = extrapolate_dataset(ds, scene, k=6, seed=0)
        assert len(bigger) == 7 * len(ds)


class TestHeadingSeries:
    def test_carry_forward(self):
        v = np.array([[0.0, 1.0], [0.0, 0.0], [0.0, 0.0]])
        h = heading_series(v)
        assert h[0] == h[1] == h[2] == pytest.approx(np.pi / 2)

    def test_leading_rest_is_neutral(self):
        # no future knowledge: stationary leading samples stay at 0.0,
        # matching what a live controller can compute
        v = np.array([[0.0, 0.0], [0.0, -1.0]])
        h = heading_series(v)
        assert h[0] == pytest.approx(0.0)
        assert h[1] == pytest.approx(-np.pi / 2)


class TestDatasetPersistence:
    def test_round_trip(self, scene, tmp_path):
        log = synth_log(5.0, slow_crawl)
        ds = record_demos([log], [EPISODE], scene)
        ds.demonstrations.extend(
            extrapolate_demo(ds.demonstrations[0], scene, k=2, rng_seed=0))
        path = tmp_path / "demos.npz"
        save_dataset(ds, path)
        loaded = load_dataset(path)
        assert len(loaded) == len(ds)
        assert loaded.counts_by_source() == ds.counts_by_source()
        for a, b in zip(ds.demonstrations, loaded.demonstrations):
            assert a.reference.cells == b.reference.cells
            assert a.t == b.t
            assert np.allclose(a.snapshot.robot_pos, b.snapshot.robot_pos)
            assert np.allclose(a.snapshot.robot_past.positions,
                               b.snapshot.robot_past.positions)
            assert np.array_equal(a.snapshot.scene_image, b.snapshot.scene_image)
