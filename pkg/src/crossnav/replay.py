"""Render an episode log to image frames with an optional reward overlay.

Reward maps are recomputed from the checkpoint and the logged state (the
pipeline is deterministic), so logs stay lightweight.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from . import rewardnet
from .demos import heading_series, snapshot_from_log
from .featurize import build_stack
from .gridmdp import world_to_grid
from .scene import EpisodeConfig, Scene
from .sim import EpisodeLog

SCALE = 8  # pixels per grid cell


def _to_px(p, scene: Scene):
    spec = scene.spec
    x = (p[0] - spec.x_min) / spec.width * spec.cols * SCALE
    y = (spec.y_max - p[1]) / spec.height * spec.rows * SCALE
    return float(x), float(y)


def _reward_rgba(reward: np.ndarray, alpha: int = 110) -> Image.Image:
    """Diverging overlay: blue = low, red = high, transparent near zero."""
    r = np.asarray(reward, dtype=float)
    scale = max(float(np.abs(r).max()), 1e-9)
    norm = np.clip(r / scale, -1.0, 1.0)
    rgba = np.zeros((*r.shape, 4), dtype=np.uint8)
    pos = norm > 0
    rgba[..., 0] = np.where(pos, 255, 60)
    rgba[..., 2] = np.where(pos, 60, 255)
    rgba[..., 1] = 60
    rgba[..., 3] = (np.abs(norm) * alpha).astype(np.uint8)
    img = Image.fromarray(rgba, "RGBA")
    return img.resize((r.shape[1] * SCALE, r.shape[0] * SCALE), Image.NEAREST)


def render_frame(scene: Scene, log: EpisodeLog, episode: EpisodeConfig,
                 index: int, reward: np.ndarray | None = None,
                 trail: int = 30) -> Image.Image:
    base = Image.fromarray(scene.rgb, "RGB").resize(
        (scene.spec.cols * SCALE, scene.spec.rows * SCALE), Image.NEAREST
    ).convert("RGBA")
    if reward is not None:
        base.alpha_composite(_reward_rgba(reward))
    draw = ImageDraw.Draw(base)

    lo = max(0, index - trail)
    for pts, color in ((log.robot_pos, (40, 90, 220)),
                       (log.human_pos, (220, 120, 40))):
        px = [_to_px(p, scene) for p in pts[lo:index + 1]]
        if len(px) > 1:
            draw.line(px, fill=color + (140,), width=2)

    for goal, color in ((episode.robot_goal, (40, 90, 220)),
                        (episode.human_goal, (220, 120, 40))):
        gx, gy = _to_px(goal, scene)
        s = SCALE
        draw.line([(gx - s, gy - s), (gx + s, gy + s)], fill=color + (255,), width=3)
        draw.line([(gx - s, gy + s), (gx + s, gy - s)], fill=color + (255,), width=3)

    rad_px = 0.3 / scene.spec.cell_size * SCALE
    for pos, vel, color in ((log.robot_pos[index], log.robot_vel[index], (40, 90, 220)),
                            (log.human_pos[index], log.human_vel[index], (220, 120, 40))):
        cx, cy = _to_px(pos, scene)
        draw.ellipse([cx - rad_px, cy - rad_px, cx + rad_px, cy + rad_px],
                     fill=color + (230,), outline=(0, 0, 0, 255))
        speed = float(np.hypot(*vel))
        if speed > 1e-3:
            hx = cx + vel[0] / speed * rad_px * 1.4
            hy = cy - vel[1] / speed * rad_px * 1.4
            draw.line([(cx, cy), (hx, hy)], fill=(0, 0, 0, 255), width=2)

    draw.text((6, 4), f"t={log.times[index]:5.1f}s  {log.controller}",
              fill=(10, 10, 10, 255))
    return base.convert("RGB")


def export_frames(scene: Scene, log: EpisodeLog, episode: EpisodeConfig,
                  out_dir, checkpoint: str | None = None,
                  every: float = 0.5) -> list[Path]:
    """Write PNG frames every `every` seconds of log time."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    params = rewardnet.load_params(checkpoint) if checkpoint else None
    headings = heading_series(log.human_vel)
    stride = max(int(round(every / log.dt)), 1)
    paths = []
    for index in range(0, log.n_samples, stride):
        reward = None
        if params is not None:
            snap = snapshot_from_log(scene, log, episode, index, headings)
            reward, _ = rewardnet.forward(build_stack(snap, scene.spec), params)
        frame = render_frame(scene, log, episode, index, reward=reward)
        path = out / f"frame_{index:05d}.png"
        frame.save(path)
        paths.append(path)
    return paths
