// Wire protocol shared with the bridge server. Every message carries a
// schema version; frames with unknown versions are rejected, never guessed.

export const PROTOCOL_VERSION = 1;

export interface WallRect {
  x0: number;
  y0: number;
  x1: number;
  y1: number;
}

export interface SceneGeometry {
  extent: number;
  cell_size: number;
  rows: number;
  cols: number;
  door_width: number;
  agent_radius: number;
  walls: WallRect[];
}

export interface EpisodeInfo {
  episode_id: string;
  robot_start: [number, number];
  robot_goal: [number, number];
  human_start: [number, number];
  human_goal: [number, number];
  human_speed: number;
  seed: number;
  contention: boolean | null;
}

export interface ServerInfo {
  v: number;
  scene: SceneGeometry;
  episodes: EpisodeInfo[];
  reward_overlay: boolean;
}

export interface AgentState {
  pos: [number, number];
  vel: [number, number];
}

export interface StateFrame {
  v: number;
  type: "state";
  t: number;
  robot: AgentState;
  human: AgentState;
  flags: Record<string, boolean>;
  recording: boolean;
  reward?: number[][];
}

export interface FinishedFrame {
  v: number;
  type: "finished";
  outcome: string;
  robot_time: number;
  human_time: number;
}

export interface ErrorFrame {
  v: number;
  type: "error";
  error: string;
}

export type ServerFrame = StateFrame | FinishedFrame | ErrorFrame;

export class ProtocolError extends Error {}

export function parseFrame(text: string): ServerFrame {
  let raw: unknown;
  try {
    raw = JSON.parse(text);
  } catch {
    throw new ProtocolError("frame is not valid JSON");
  }
  if (typeof raw !== "object" || raw === null) {
    throw new ProtocolError("frame is not an object");
  }
  const frame = raw as Record<string, unknown>;
  if (frame.v !== PROTOCOL_VERSION) {
    throw new ProtocolError(`unsupported protocol version ${String(frame.v)}`);
  }
  const type = frame.type;
  if (type === "state") {
    const f = frame as unknown as StateFrame;
    if (
      typeof f.t !== "number" ||
      !Array.isArray(f.robot?.pos) ||
      !Array.isArray(f.human?.pos)
    ) {
      throw new ProtocolError("malformed state frame");
    }
    return f;
  }
  if (type === "finished") {
    return frame as unknown as FinishedFrame;
  }
  if (type === "error") {
    return frame as unknown as ErrorFrame;
  }
  throw new ProtocolError(`unknown frame type ${String(type)}`);
}

export type Direction = "up" | "down" | "left" | "right" | "stop";

export function commandMessage(direction: Direction): string {
  return JSON.stringify({ v: PROTOCOL_VERSION, type: "command", direction });
}

export function sessionRequest(
  mode: "teleop" | "replay",
  opts: { episode_id?: string; log_path?: string },
): string {
  return JSON.stringify({ v: PROTOCOL_VERSION, mode, ...opts });
}
