// Canvas drawing of the top-down scene: walls, door gap, agents with
// heading ticks, goals, trails, and the translucent reward heatmap.

import type { SceneGeometry, StateFrame, EpisodeInfo } from "./protocol.js";
import {
  Trail,
  Viewport,
  agentRadiusPx,
  makeViewport,
  rewardColor,
  rewardMaxAbs,
  worldToScreen,
} from "./view.js";

const FLOOR = "#e2ded6";
const WALL = "#2e2a28";
const ROBOT = "#2858dc";
const HUMAN = "#dc7828";

export class SceneRenderer {
  private vp: Viewport;
  readonly robotTrail = new Trail();
  readonly humanTrail = new Trail();
  showReward = true;

  constructor(
    private ctx: CanvasRenderingContext2D,
    private scene: SceneGeometry,
    canvasSize: number,
  ) {
    this.vp = makeViewport(scene, canvasSize);
  }

  reset(): void {
    this.robotTrail.clear();
    this.humanTrail.clear();
  }

  draw(frame: StateFrame | null, episode: EpisodeInfo | null): void {
    const { ctx, vp, scene } = this;
    ctx.fillStyle = FLOOR;
    ctx.fillRect(0, 0, vp.width, vp.height);

    if (frame?.reward && this.showReward) {
      this.drawReward(frame.reward);
    }

    ctx.fillStyle = WALL;
    for (const wall of scene.walls) {
      const [x0, y0] = worldToScreen(vp, scene, wall.x0, wall.y1);
      const [x1, y1] = worldToScreen(vp, scene, wall.x1, wall.y0);
      ctx.fillRect(x0, y0, x1 - x0, y1 - y0);
    }

    if (episode) {
      this.drawGoal(episode.robot_goal, ROBOT);
      this.drawGoal(episode.human_goal, HUMAN);
    }
    this.drawTrail(this.robotTrail, ROBOT);
    this.drawTrail(this.humanTrail, HUMAN);

    if (frame) {
      this.robotTrail.push(frame.t, frame.robot.pos[0], frame.robot.pos[1]);
      this.humanTrail.push(frame.t, frame.human.pos[0], frame.human.pos[1]);
      this.drawAgent(frame.robot.pos, frame.robot.vel, ROBOT);
      this.drawAgent(frame.human.pos, frame.human.vel, HUMAN);
    }
  }

  private drawReward(reward: number[][]): void {
    const { ctx, vp, scene } = this;
    const cellPx = vp.width / scene.cols;
    const maxAbs = rewardMaxAbs(reward);
    for (let r = 0; r < reward.length; r++) {
      for (let c = 0; c < reward[r].length; c++) {
        const [red, green, blue, alpha] = rewardColor(reward[r][c], maxAbs);
        if (alpha < 0.02) continue;
        ctx.fillStyle = `rgba(${red},${green},${blue},${alpha.toFixed(3)})`;
        ctx.fillRect(c * cellPx, r * cellPx, cellPx + 0.5, cellPx + 0.5);
      }
    }
  }

  private drawGoal(goal: [number, number], color: string): void {
    const { ctx, vp, scene } = this;
    const [x, y] = worldToScreen(vp, scene, goal[0], goal[1]);
    const s = 0.12 * vp.pxPerMeter;
    ctx.strokeStyle = color;
    ctx.lineWidth = 3;
    ctx.beginPath();
    ctx.moveTo(x - s, y - s);
    ctx.lineTo(x + s, y + s);
    ctx.moveTo(x - s, y + s);
    ctx.lineTo(x + s, y - s);
    ctx.stroke();
  }

  private drawTrail(trail: Trail, color: string): void {
    const { ctx, vp, scene } = this;
    const pts = trail.get();
    if (pts.length < 2) return;
    ctx.strokeStyle = color + "66";
    ctx.lineWidth = 2;
    ctx.beginPath();
    pts.forEach((p, i) => {
      const [x, y] = worldToScreen(vp, scene, p.x, p.y);
      if (i === 0) ctx.moveTo(x, y);
      else ctx.lineTo(x, y);
    });
    ctx.stroke();
  }

  private drawAgent(
    pos: [number, number],
    vel: [number, number],
    color: string,
  ): void {
    const { ctx, vp, scene } = this;
    const [x, y] = worldToScreen(vp, scene, pos[0], pos[1]);
    const r = agentRadiusPx(vp, scene);
    ctx.fillStyle = color;
    ctx.strokeStyle = "#111";
    ctx.lineWidth = 1.5;
    ctx.beginPath();
    ctx.arc(x, y, r, 0, 2 * Math.PI);
    ctx.fill();
    ctx.stroke();
    const speed = Math.hypot(vel[0], vel[1]);
    if (speed > 1e-3) {
      ctx.strokeStyle = "#111";
      ctx.beginPath();
      ctx.moveTo(x, y);
      ctx.lineTo(x + (vel[0] / speed) * r * 1.4, y - (vel[1] / speed) * r * 1.4);
      ctx.stroke();
    }
  }
}
