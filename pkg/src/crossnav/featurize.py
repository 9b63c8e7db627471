"""Rasterizes a simulation snapshot into the 8-channel grid input.

Channel order is fixed: [R, G, B, robot_past, human_past, heading, speed,
goal].  Every channel is a rows x cols field with values in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .gridmdp import GridSpec, world_to_grid

CHANNEL_NAMES = (
    "red", "green", "blue",
    "robot_past", "human_past",
    "human_heading", "human_speed",
    "robot_goal",
)
N_CHANNELS = len(CHANNEL_NAMES)

HISTORY_WINDOW = 3.0   # s of past trajectory kept in the raster
PAST_DECAY = 1.0       # s, exponential intensity decay of past samples
SCALAR_DISK_RADIUS = 3  # cells, footprint of the heading/speed blobs
GOAL_SIGMA = 1.0       # cells
GOAL_TRUNC = 3.0       # sigmas
SPEED_NORM = 1.3       # m/s mapped to 1.0


@dataclass
class Track:
    """Timestamped world positions, oldest first."""

    times: np.ndarray      # (n,)
    positions: np.ndarray  # (n, 2)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float).reshape(-1)
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 2)
        if len(self.times) != len(self.positions):
            raise ValueError("times and positions length mismatch")

    def __len__(self) -> int:
        return len(self.times)

    @staticmethod
    def empty() -> "Track":
        return Track(np.zeros(0), np.zeros((0, 2)))

    def window(self, now: float, span: float) -> "Track":
        keep = (self.times >= now - span) & (self.times <= now)
        return Track(self.times[keep], self.positions[keep])


@dataclass
class Snapshot:
    """Everything the reward network sees about one instant."""

    time: float
    scene_image: np.ndarray      # (rows, cols, 3) uint8
    robot_past: Track
    human_past: Track
    human_velocity: np.ndarray   # (2,) m/s
    human_heading: float         # rad
    robot_goal: np.ndarray       # (2,) world m
    robot_pos: np.ndarray        # (2,) world m


@dataclass
class FeatureStack:
    channels: np.ndarray  # (8, rows, cols) float64 in [0, 1]

    def __post_init__(self):
        if self.channels.shape[0] != N_CHANNELS:
            raise ValueError(f"expected {N_CHANNELS} channels")


def split_rgb(scene_image: np.ndarray) -> np.ndarray:
    """Normalize a rows x cols x 3 image into three [0, 1] channels."""
    img = np.asarray(scene_image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected an RGB image, got shape {img.shape}")
    return np.moveaxis(img.astype(np.float64) / 255.0, 2, 0)


def raster_past(track: Track, now: float, spec: GridSpec) -> np.ndarray:
    """Paint visited cells with exp(-(now - t)/1s) decay, newest wins."""
    ch = np.zeros((spec.rows, spec.cols))
    if len(track) and np.any(track.times > now + 1e-9):
        raise ValueError("history contains samples from the future")
    for t, pos in zip(track.times, track.positions):  # oldest first
        r, c = world_to_grid(pos, spec)
        ch[r, c] = np.exp(-(now - t) / PAST_DECAY)
    return ch


def _disk_offsets(radius: int):
    offs = []
    for dr in range(-radius, radius + 1):
        for dc in range(-radius, radius + 1):
            if dr * dr + dc * dc <= radius * radius:
                offs.append((dr, dc))
    return offs


_DISK = _disk_offsets(SCALAR_DISK_RADIUS)


def raster_agent_scalars(human_pos, heading: float, speed: float,
                         spec: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    """Disk around the human painted with normalized heading and speed."""
    if speed < 0:
        raise ValueError("speed must be nonnegative")
    heading_ch = np.zeros((spec.rows, spec.cols))
    speed_ch = np.zeros((spec.rows, spec.cols))
    hr, hc = world_to_grid(human_pos, spec)
    # wrap into [-pi, pi] so the normalization endpoints are exact
    theta = (heading + np.pi) % (2 * np.pi) - np.pi
    hval = (theta + np.pi) / (2 * np.pi)
    sval = min(speed / SPEED_NORM, 1.0)
    for dr, dc in _DISK:
        r, c = hr + dr, hc + dc
        if 0 <= r < spec.rows and 0 <= c < spec.cols:
            heading_ch[r, c] = hval
            speed_ch[r, c] = sval
    return heading_ch, speed_ch


def raster_goal(goal, spec: GridSpec) -> np.ndarray:
    """Unit-peak Gaussian blob (sigma = 1 cell) truncated at 3 sigma."""
    gr, gc = world_to_grid(goal, spec)
    ch = np.zeros((spec.rows, spec.cols))
    rad = int(np.ceil(GOAL_TRUNC * GOAL_SIGMA))
    for dr in range(-rad, rad + 1):
        for dc in range(-rad, rad + 1):
            d2 = dr * dr + dc * dc
            if d2 > (GOAL_TRUNC * GOAL_SIGMA) ** 2:
                continue
            r, c = gr + dr, gc + dc
            if 0 <= r < spec.rows and 0 <= c < spec.cols:
                ch[r, c] = np.exp(-d2 / (2 * GOAL_SIGMA**2))
    return ch


def build_stack(snapshot: Snapshot, spec: GridSpec) -> FeatureStack:
    """Assemble the 8 channels in fixed order; pure and deterministic."""
    rgb = split_rgb(snapshot.scene_image)
    robot_hist = snapshot.robot_past.window(snapshot.time, HISTORY_WINDOW)
    human_hist = snapshot.human_past.window(snapshot.time, HISTORY_WINDOW)
    robot_ch = raster_past(robot_hist, snapshot.time, spec)
    human_ch = raster_past(human_hist, snapshot.time, spec)
    speed = float(np.linalg.norm(snapshot.human_velocity))
    if len(human_hist):
        heading_ch, speed_ch = raster_agent_scalars(
            human_hist.positions[-1], snapshot.human_heading, speed, spec
        )
    else:
        heading_ch = np.zeros((spec.rows, spec.cols))
        speed_ch = np.zeros((spec.rows, spec.cols))
    goal_ch = raster_goal(snapshot.robot_goal, spec)
    channels = np.stack([
        rgb[0], rgb[1], rgb[2],
        robot_ch, human_ch,
        heading_ch, speed_ch,
        goal_ch,
    ])
    return FeatureStack(channels=channels)
