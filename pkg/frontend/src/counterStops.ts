// Counter-stop counting over an episode log, mirroring the trainer's
// definition: a counter-stop is a grid cell the robot occupies for at
// least three seconds of consecutive samples.

export interface LogSample {
  t: number;
  robot: [number, number];
}

export interface GridLayout {
  extent: number; // footprint side length, m; grid centered on the door
  rows: number;
  cols: number;
}

export const COUNTER_STOP_SECONDS = 3.0;

export function worldToCell(
  layout: GridLayout,
  x: number,
  y: number,
): [number, number] {
  const half = layout.extent / 2;
  if (x < -half || x > half || y < -half || y > half) {
    throw new RangeError(`position (${x}, ${y}) outside the grid footprint`);
  }
  const cell = layout.extent / layout.cols;
  // far edges belong to the last column/row, matching the trainer
  const col = Math.min(Math.floor((x + half) / cell), layout.cols - 1);
  const row = Math.min(Math.floor((half - y) / cell), layout.rows - 1);
  return [row, col];
}

export function countCounterStops(
  layout: GridLayout,
  samples: readonly LogSample[],
): number {
  if (samples.length === 0) return 0;
  let count = 0;
  let runStart = 0;
  let runCell = worldToCell(layout, samples[0].robot[0], samples[0].robot[1]);
  const flush = (endIndex: number) => {
    const span = samples[endIndex].t - samples[runStart].t;
    if (span >= COUNTER_STOP_SECONDS - 1e-9) count += 1;
  };
  for (let i = 1; i < samples.length; i++) {
    const cell = worldToCell(layout, samples[i].robot[0], samples[i].robot[1]);
    if (cell[0] !== runCell[0] || cell[1] !== runCell[1]) {
      flush(i - 1);
      runStart = i;
      runCell = cell;
    }
  }
  flush(samples.length - 1);
  return count;
}

/** Parse the line-delimited episode log format into samples. */
export function parseLogSamples(jsonl: string): LogSample[] {
  const samples: LogSample[] = [];
  for (const line of jsonl.split("\n")) {
    const trimmed = line.trim();
    if (trimmed === "") continue;
    const rec = JSON.parse(trimmed) as { type?: string; t?: number; robot?: [number, number] };
    if (rec.type === "sample" && typeof rec.t === "number" && rec.robot) {
      samples.push({ t: rec.t, robot: rec.robot });
    }
  }
  return samples;
}
