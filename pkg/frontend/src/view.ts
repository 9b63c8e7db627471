// World-to-canvas mapping and the pure geometry of the renderer. Kept free
// of DOM types so the math is unit-testable under node.

import type { SceneGeometry } from "./protocol.js";

export interface Viewport {
  pxPerMeter: number;
  width: number;
  height: number;
}

export function makeViewport(scene: SceneGeometry, canvasSize: number): Viewport {
  return {
    pxPerMeter: canvasSize / scene.extent,
    width: canvasSize,
    height: canvasSize,
  };
}

// world frame: x right, y up, origin at the door center (grid center)
export function worldToScreen(
  vp: Viewport,
  scene: SceneGeometry,
  x: number,
  y: number,
): [number, number] {
  const half = scene.extent / 2;
  return [(x + half) * vp.pxPerMeter, (half - y) * vp.pxPerMeter];
}

export function agentRadiusPx(vp: Viewport, scene: SceneGeometry): number {
  // scale contract: the drawn disc radius is the physical radius times the
  // viewport scale factor
  return scene.agent_radius * vp.pxPerMeter;
}

export interface TrailPoint {
  t: number;
  x: number;
  y: number;
}

export class Trail {
  private points: TrailPoint[] = [];

  constructor(private windowSeconds = 3.0) {}

  push(t: number, x: number, y: number): void {
    this.points.push({ t, x, y });
    const cutoff = t - this.windowSeconds;
    while (this.points.length > 0 && this.points[0].t < cutoff) {
      this.points.shift();
    }
  }

  get(): readonly TrailPoint[] {
    return this.points;
  }

  clear(): void {
    this.points = [];
  }
}

// diverging reward colormap: blue (low) through transparent to red (high)
export function rewardColor(
  value: number,
  maxAbs: number,
): [number, number, number, number] {
  const scale = maxAbs > 1e-9 ? maxAbs : 1e-9;
  const norm = Math.max(-1, Math.min(1, value / scale));
  const alpha = Math.abs(norm) * 0.45;
  if (norm >= 0) {
    return [255, 60, 60, alpha];
  }
  return [60, 60, 255, alpha];
}

export function rewardMaxAbs(reward: number[][]): number {
  let m = 0;
  for (const row of reward) {
    for (const v of row) {
      const a = Math.abs(v);
      if (a > m) m = a;
    }
  }
  return m;
}
