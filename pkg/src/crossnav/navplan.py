"""Global planning: static shortest paths and the learned-reward reference.

The static planner is 4-connected A* on the clearance-inflated occupancy
grid with a Euclidean heuristic.  The learned reference runs the reward net
on the current snapshot, decodes a greedy rollout over the soft policy and
converts it to timestamped world waypoints for the local controller.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from . import rewardnet
from .featurize import Snapshot, build_stack
from .gridmdp import (
    Action,
    GridCell,
    GridSpec,
    greedy_rollout,
    grid_to_world,
    sample_rollout,
    soft_value_iteration,
    world_to_grid,
)
from .scene import Scene

MAX_SPEED = 1.3          # m/s, robot speed cap
CONTROL_DT = 0.2         # s, replanning period
# baseline reference spacing: one planning step covers 1.33 m of path per
# second of travel, i.e. 1.33 * 0.2 m between consecutive waypoints
BASELINE_STEP_SPEED = 1.33
WAYPOINT_CAPTURE = 0.1   # m, waypoints closer than this count as reached


class NoPathError(ValueError):
    pass


@dataclass
class WorldPath:
    waypoints: np.ndarray  # (n, 2)
    times: np.ndarray      # (n,) strictly increasing

    def __post_init__(self):
        self.waypoints = np.asarray(self.waypoints, dtype=float).reshape(-1, 2)
        self.times = np.asarray(self.times, dtype=float).reshape(-1)
        if len(self.waypoints) != len(self.times) or len(self.waypoints) == 0:
            raise ValueError("need equally many waypoints and times, at least one")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("timestamps must be strictly increasing")

    @property
    def end(self) -> np.ndarray:
        return self.waypoints[-1]


def astar_grid(blocked: np.ndarray, start: GridCell, goal: GridCell) -> list[GridCell]:
    """4-connected A* with Euclidean heuristic; deterministic tie-breaking."""
    rows, cols = blocked.shape
    if blocked[start]:
        raise NoPathError(f"start cell {start} is not navigable")
    if blocked[goal]:
        raise NoPathError(f"goal cell {goal} is not navigable")

    def h(cell):
        return float(np.hypot(cell[0] - goal[0], cell[1] - goal[1]))

    counter = 0
    open_heap = [(h(start), 0, counter, start)]
    g_cost = {start: 0}
    parent: dict[GridCell, GridCell] = {}
    closed = set()
    while open_heap:
        _, g, _, cur = heapq.heappop(open_heap)
        if cur in closed:
            continue
        closed.add(cur)
        if cur == goal:
            path = [cur]
            while cur in parent:
                cur = parent[cur]
                path.append(cur)
            return path[::-1]
        for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            nxt = (cur[0] + dr, cur[1] + dc)
            if not (0 <= nxt[0] < rows and 0 <= nxt[1] < cols):
                continue
            if blocked[nxt] or nxt in closed:
                continue
            ng = g + 1
            if ng < g_cost.get(nxt, np.inf):
                g_cost[nxt] = ng
                parent[nxt] = cur
                counter += 1
                heapq.heappush(open_heap, (ng + h(nxt), ng, counter, nxt))
    raise NoPathError(f"no path from {start} to {goal}")


def _merge_colinear(points: np.ndarray) -> np.ndarray:
    if len(points) <= 2:
        return points
    keep = [points[0]]
    for i in range(1, len(points) - 1):
        a, b, c = keep[-1], points[i], points[i + 1]
        cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        if abs(cross) > 1e-12:
            keep.append(b)
    keep.append(points[-1])
    return np.array(keep)


def _nearest_navigable(blocked: np.ndarray, cell: GridCell,
                       max_radius: int = 5) -> GridCell:
    """Closest free cell by squared distance (deterministic tie order)."""
    if not blocked[cell]:
        return cell
    rows, cols = blocked.shape
    best = None
    best_d = None
    for dr in range(-max_radius, max_radius + 1):
        for dc in range(-max_radius, max_radius + 1):
            r, c = cell[0] + dr, cell[1] + dc
            if not (0 <= r < rows and 0 <= c < cols) or blocked[r, c]:
                continue
            d = dr * dr + dc * dc
            if best_d is None or d < best_d:
                best_d = d
                best = (r, c)
    if best is None:
        raise NoPathError(f"no navigable cell within {max_radius} cells of {cell}")
    return best


def shortest_path(scene: Scene, start, goal, nominal_speed: float = MAX_SPEED) -> WorldPath:
    """Clearance-aware static path as merged cell-center waypoints.

    A start whose cell falls inside the inflated band (legal agent positions
    can overhang blocked cell centers) snaps to the nearest free cell; goals
    are strict.
    """
    start_cell = _nearest_navigable(scene.occupancy, world_to_grid(start, scene.spec))
    goal_cell = world_to_grid(goal, scene.spec)
    cells = astar_grid(scene.occupancy, start_cell, goal_cell)
    pts = np.array([grid_to_world(c, scene.spec) for c in cells])
    pts = _merge_colinear(pts)
    if len(pts) == 1:
        return WorldPath(waypoints=pts, times=np.array([0.0]))
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    times = np.concatenate([[0.0], np.cumsum(seg / nominal_speed)])
    return WorldPath(waypoints=pts, times=times)


def resample_path(path: WorldPath, spacing: float, dt: float = CONTROL_DT,
                  t0: float = 0.0) -> WorldPath:
    """Arc-length resampling at fixed spacing; one waypoint per dt."""
    pts = path.waypoints
    if len(pts) == 1:
        return WorldPath(waypoints=pts.copy(), times=np.array([t0]))
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    total = arc[-1]
    n = max(int(np.ceil(total / spacing)), 1) + 1
    samples = np.minimum(np.arange(n) * spacing, total)
    out = np.empty((n, 2))
    out[:, 0] = np.interp(samples, arc, pts[:, 0])
    out[:, 1] = np.interp(samples, arc, pts[:, 1])
    return WorldPath(waypoints=out, times=t0 + np.arange(n) * dt)


def baseline_reference(scene: Scene, start, goal, t0: float = 0.0) -> WorldPath:
    """Shortest path resampled at the baseline per-step waypoint spacing."""
    return resample_path(shortest_path(scene, start, goal),
                         spacing=BASELINE_STEP_SPEED * CONTROL_DT, t0=t0)


def reward_reference(params: rewardnet.Params, snapshot: Snapshot,
                     spec: GridSpec, stochastic: bool = False,
                     rng: np.random.Generator | None = None,
                     horizon: int = 10) -> tuple[WorldPath, np.ndarray]:
    """Reward-decoded reference path, resampled every 0.2 s at 1.3 m/s.

    Returns (path, reward_map).  Stay steps hold position for one control
    period and therefore emit repeated waypoints.
    """
    start_cell = world_to_grid(snapshot.robot_pos, spec)
    stack = build_stack(snapshot, spec)
    reward, _ = rewardnet.forward(stack, params)
    policy = soft_value_iteration(reward, horizon, spec)
    if stochastic:
        rollout = sample_rollout(policy, start_cell, horizon,
                                 rng or np.random.default_rng(0), spec)
    else:
        rollout = greedy_rollout(policy, start_cell, horizon, spec)

    # walk the rollout in plan time: moves advance at max speed, stays hold
    # for one control period; sample the walk every control period
    pts = [grid_to_world(c, spec) for c in rollout.cells]
    seg_t = []
    for a, p0, p1 in zip(rollout.actions, pts[:-1], pts[1:]):
        if a == Action.STAY:
            seg_t.append(CONTROL_DT)
        else:
            seg_t.append(float(np.linalg.norm(p1 - p0)) / MAX_SPEED)
    cum = np.concatenate([[0.0], np.cumsum(seg_t)])
    total = cum[-1]
    n = max(int(np.ceil(total / CONTROL_DT)), 0) + 1
    sample_t = np.minimum(np.arange(n) * CONTROL_DT, total)
    xs = np.interp(sample_t, cum, [p[0] for p in pts])
    ys = np.interp(sample_t, cum, [p[1] for p in pts])
    path = WorldPath(waypoints=np.stack([xs, ys], axis=1),
                     times=snapshot.time + np.arange(n) * CONTROL_DT)
    return path, reward


def follow_reference(path: WorldPath, pos, dt: float = CONTROL_DT,
                     max_speed: float = MAX_SPEED) -> np.ndarray:
    """Preferred velocity toward the first waypoint at least 0.1 m ahead."""
    pos = np.asarray(pos, dtype=float)
    for wp in path.waypoints:
        delta = wp - pos
        dist = float(np.linalg.norm(delta))
        if dist >= WAYPOINT_CAPTURE:
            return delta / dist * min(dist / dt, max_speed)
    return np.zeros(2)
