"""Parametric two-room scene joined by one door gap, plus episode configs.

The scene is built from axis-aligned wall rectangles: a perimeter ring and a
horizontal dividing wall with a centered door.  The grid is centered on the
door.  Occupancy is the wall set inflated by the robot radius; the rgb
render is the un-inflated geometry (walls dark, floor light).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .gridmdp import GridCell, GridSpec, grid_to_world, world_to_grid
from .orca import Segment

SCENE_FORMAT_VERSION = 1
SUITE_FORMAT_VERSION = 1

ROBOT_RADIUS = 0.3
HUMAN_RADIUS = 0.3


@dataclass(frozen=True)
class Rect:
    """Axis-aligned solid rectangle (x0 <= x1, y0 <= y1)."""

    x0: float
    y0: float
    x1: float
    y1: float

    def distance(self, p) -> float:
        dx = max(self.x0 - p[0], 0.0, p[0] - self.x1)
        dy = max(self.y0 - p[1], 0.0, p[1] - self.y1)
        return float(np.hypot(dx, dy))

    def contains(self, p) -> bool:
        return self.x0 <= p[0] <= self.x1 and self.y0 <= p[1] <= self.y1

    def edges(self) -> list[Segment]:
        return [
            Segment(a=(self.x0, self.y0), b=(self.x1, self.y0)),
            Segment(a=(self.x1, self.y0), b=(self.x1, self.y1)),
            Segment(a=(self.x1, self.y1), b=(self.x0, self.y1)),
            Segment(a=(self.x0, self.y1), b=(self.x0, self.y0)),
        ]


@dataclass
class SceneParams:
    door_width: float = 0.9
    wall_thickness: float = 0.2
    extent: float = 6.0          # footprint side length, m
    inflate_radius: float = ROBOT_RADIUS
    seed: int = 0

    FLOOR_COLOR = (226, 222, 214)
    WALL_COLOR = (46, 42, 40)


@dataclass
class Scene:
    params: SceneParams
    spec: GridSpec
    wall_rects: list[Rect]
    walls: list[Segment]             # rectangle edges, consumed by orca
    door_center: np.ndarray
    door_width: float
    rooms: tuple[Rect, Rect]         # (top, bottom)
    occupancy: np.ndarray            # (rows, cols) bool, True = blocked
    rgb: np.ndarray                  # (rows, cols, 3) uint8

    def wall_distance(self, p) -> float:
        return min(r.distance(p) for r in self.wall_rects)

    def navigable(self, p) -> bool:
        try:
            cell = world_to_grid(p, self.spec)
        except ValueError:
            return False
        return not self.occupancy[cell]

    def navigable_cell(self, cell: GridCell) -> bool:
        return self.spec.in_bounds(cell) and not self.occupancy[cell]


class SceneBuildError(ValueError):
    pass


def build_scene(door_width: float = 0.9, wall_thickness: float = 0.2,
                extent: float = 6.0, seed: int = 0,
                inflate_radius: float = ROBOT_RADIUS) -> Scene:
    """Construct the two-room door scene and its derived rasters."""
    params = SceneParams(door_width=door_width, wall_thickness=wall_thickness,
                         extent=extent, inflate_radius=inflate_radius, seed=seed)
    if door_width <= 2 * inflate_radius:
        raise SceneBuildError(
            f"door width {door_width} m is not navigable for radius "
            f"{inflate_radius} m"
        )
    half = extent / 2.0
    t = wall_thickness
    spec = GridSpec(rows=60, cols=60, cell_size=extent / 60.0, origin=(0.0, 0.0))

    g = door_width / 2.0
    rects = [
        Rect(-half, -half, -half + t, half),       # left perimeter
        Rect(half - t, -half, half, half),         # right perimeter
        Rect(-half, half - t, half, half),         # top perimeter
        Rect(-half, -half, half, -half + t),       # bottom perimeter
        Rect(-half, -t / 2.0, -g, t / 2.0),        # dividing wall, left of door
        Rect(g, -t / 2.0, half, t / 2.0),          # dividing wall, right of door
    ]

    occupancy = np.zeros((spec.rows, spec.cols), dtype=bool)
    rgb = np.empty((spec.rows, spec.cols, 3), dtype=np.uint8)
    rgb[:, :] = params.FLOOR_COLOR
    for r in range(spec.rows):
        for c in range(spec.cols):
            center = grid_to_world((r, c), spec)
            dist = min(rect.distance(center) for rect in rects)
            if dist < inflate_radius - 1e-9:
                occupancy[r, c] = True
            if any(rect.contains(center) for rect in rects):
                rgb[r, c] = params.WALL_COLOR

    rooms = (
        Rect(-half + t, t / 2.0, half - t, half - t),     # top
        Rect(-half + t, -half + t, half - t, -t / 2.0),   # bottom
    )
    scene = Scene(
        params=params, spec=spec, wall_rects=rects,
        walls=[e for rect in rects for e in rect.edges()],
        door_center=np.array([0.0, 0.0]), door_width=door_width,
        rooms=rooms, occupancy=occupancy, rgb=rgb,
    )
    if not _door_connects_rooms(scene):
        raise SceneBuildError("inflated occupancy leaves the rooms disconnected")
    return scene


def _door_connects_rooms(scene: Scene) -> bool:
    from collections import deque

    top = world_to_grid((0.0, 1.5), scene.spec)
    bottom = world_to_grid((0.0, -1.5), scene.spec)
    if scene.occupancy[top] or scene.occupancy[bottom]:
        return False
    seen = {top}
    q = deque([top])
    while q:
        cur = q.popleft()
        if cur == bottom:
            return True
        for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            nxt = (cur[0] + dr, cur[1] + dc)
            if scene.spec.in_bounds(nxt) and not scene.occupancy[nxt] \
                    and nxt not in seen:
                seen.add(nxt)
                q.append(nxt)
    return False


@dataclass
class EpisodeConfig:
    robot_start: np.ndarray
    robot_goal: np.ndarray
    human_start: np.ndarray
    human_goal: np.ndarray
    human_speed: float = 1.0
    episode_id: str = "ep"
    seed: int = 0
    contention: bool | None = None   # suite-generator label, None if unknown

    def __post_init__(self):
        for name in ("robot_start", "robot_goal", "human_start", "human_goal"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))

    def to_dict(self) -> dict:
        return {
            "episode_id": self.episode_id,
            "robot_start": list(self.robot_start),
            "robot_goal": list(self.robot_goal),
            "human_start": list(self.human_start),
            "human_goal": list(self.human_goal),
            "human_speed": self.human_speed,
            "seed": self.seed,
            "contention": self.contention,
        }

    @staticmethod
    def from_dict(d: dict) -> "EpisodeConfig":
        return EpisodeConfig(
            robot_start=d["robot_start"], robot_goal=d["robot_goal"],
            human_start=d["human_start"], human_goal=d["human_goal"],
            human_speed=d["human_speed"], episode_id=d["episode_id"],
            seed=d["seed"], contention=d.get("contention"),
        )


def save_scene(scene: Scene, path) -> None:
    doc = {
        "format": "crossnav-scene",
        "version": SCENE_FORMAT_VERSION,
        "door_width": scene.params.door_width,
        "wall_thickness": scene.params.wall_thickness,
        "extent": scene.params.extent,
        "inflate_radius": scene.params.inflate_radius,
        "seed": scene.params.seed,
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")


def load_scene(path) -> Scene:
    with open(path) as f:
        doc = json.load(f)
    if doc.get("format") != "crossnav-scene":
        raise ValueError(f"{path}: not a scene file")
    if doc.get("version") != SCENE_FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported scene version {doc.get('version')}")
    return build_scene(
        door_width=doc["door_width"], wall_thickness=doc["wall_thickness"],
        extent=doc["extent"], seed=doc["seed"],
        inflate_radius=doc["inflate_radius"],
    )


def save_suite(episodes: list[EpisodeConfig], path, name: str = "suite") -> None:
    doc = {
        "format": "crossnav-suite",
        "version": SUITE_FORMAT_VERSION,
        "name": name,
        "episodes": [ep.to_dict() for ep in episodes],
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")


def load_suite(path) -> list[EpisodeConfig]:
    with open(path) as f:
        doc = json.load(f)
    if doc.get("format") != "crossnav-suite":
        raise ValueError(f"{path}: not an episode-suite file")
    if doc.get("version") != SUITE_FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported suite version {doc.get('version')}")
    return [EpisodeConfig.from_dict(d) for d in doc["episodes"]]
