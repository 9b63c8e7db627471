// Keyboard teleoperation: arrows / WASD map to the discrete direction set
// of the grid MDP; commands go out every control tick, no key means stop.

import type { Direction } from "./protocol.js";

const KEY_DIRECTIONS: Record<string, Direction> = {
  ArrowUp: "up",
  ArrowDown: "down",
  ArrowLeft: "left",
  ArrowRight: "right",
  w: "up",
  s: "down",
  a: "left",
  d: "right",
  W: "up",
  S: "down",
  A: "left",
  D: "right",
};

export class TeleopInput {
  private held = new Set<Direction>();
  private order: Direction[] = [];

  keyDown(key: string): boolean {
    const dir = KEY_DIRECTIONS[key];
    if (dir === undefined) return false;
    if (!this.held.has(dir)) {
      this.held.add(dir);
      this.order.push(dir);
    }
    return true;
  }

  keyUp(key: string): boolean {
    const dir = KEY_DIRECTIONS[key];
    if (dir === undefined) return false;
    this.held.delete(dir);
    this.order = this.order.filter((d) => d !== dir);
    return true;
  }

  /** Direction to command this tick: most recently pressed wins, none = stop. */
  current(): Direction {
    if (this.order.length === 0) return "stop";
    return this.order[this.order.length - 1];
  }

  clear(): void {
    this.held.clear();
    this.order = [];
  }
}

/** Emits one command per control tick while active (teleop sessions only). */
export class CommandTicker {
  private timer: ReturnType<typeof setInterval> | null = null;

  constructor(
    private input: TeleopInput,
    private send: (d: Direction) => void,
    private tickMs = 200,
  ) {}

  start(): void {
    if (this.timer !== null) return;
    this.timer = setInterval(() => this.send(this.input.current()), this.tickMs);
  }

  stop(): void {
    if (this.timer !== null) {
      clearInterval(this.timer);
      this.timer = null;
    }
    this.send("stop");
  }
}
