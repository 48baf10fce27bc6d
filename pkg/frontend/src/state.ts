// Sketch state for the 16-step editor: 8 families x 16 steps at a fixed
// 4 steps/beat over one four-beat window. Serialization round-trips through
// the grid JSON schema accepted by POST /render.

export const N_STEPS = 16;
export const N_FAMILIES = 8;
export const STEPS_PER_BEAT = 4;

export interface Cell {
  active: boolean;
  velocity: number; // [0, 1]
  articulation: number; // [0, vocab)
}

export interface SketchState {
  cells: Cell[][]; // [family][step]
  bpm: number;
  steps: number; // denoising step count
  seed: number;
}

export interface GridEvent {
  family: number;
  time: number;
  velocity: number;
  articulation: number;
}

export interface RenderRequest {
  grid: { version: number; bpm: number; events: GridEvent[] };
  steps: number;
  seed: number;
}

export function emptySketch(bpm = 120, steps = 25, seed = 0): SketchState {
  const cells: Cell[][] = [];
  for (let f = 0; f < N_FAMILIES; f++) {
    cells.push(
      Array.from({ length: N_STEPS }, () => ({ active: false, velocity: 0.8, articulation: 0 })),
    );
  }
  return { cells, bpm, steps, seed };
}

export function clampVelocity(v: number): number {
  return Math.min(1, Math.max(0, v));
}

export function sketchDuration(state: SketchState): number {
  return 4 * (60 / state.bpm);
}

// step s of family f becomes an event at s * (60/bpm)/4 seconds
export function sketchToGridRequest(state: SketchState): RenderRequest {
  const stepSeconds = 60 / state.bpm / STEPS_PER_BEAT;
  const events: GridEvent[] = [];
  for (let s = 0; s < N_STEPS; s++) {
    for (let f = 0; f < N_FAMILIES; f++) {
      const cell = state.cells[f][s];
      if (cell.active) {
        events.push({
          family: f,
          time: s * stepSeconds,
          velocity: clampVelocity(cell.velocity),
          articulation: cell.articulation,
        });
      }
    }
  }
  return { grid: { version: 1, bpm: state.bpm, events }, steps: state.steps, seed: state.seed };
}

export function serializeSketch(state: SketchState): string {
  return JSON.stringify({
    version: 1,
    bpm: state.bpm,
    steps: state.steps,
    seed: state.seed,
    cells: state.cells.map((row) =>
      row.map((c) => ({ active: c.active, velocity: c.velocity, articulation: c.articulation })),
    ),
  });
}

export function parseSketch(json: string): SketchState {
  const raw = JSON.parse(json);
  if (raw.version !== 1) throw new Error(`unsupported sketch version ${raw.version}`);
  if (!Array.isArray(raw.cells) || raw.cells.length !== N_FAMILIES) {
    throw new Error("sketch must have 8 family rows");
  }
  const cells: Cell[][] = raw.cells.map((row: Cell[], f: number) => {
    if (!Array.isArray(row) || row.length !== N_STEPS) {
      throw new Error(`family ${f} must have 16 steps`);
    }
    return row.map((c) => ({
      active: Boolean(c.active),
      velocity: clampVelocity(Number(c.velocity)),
      articulation: Math.max(0, Math.trunc(Number(c.articulation))),
    }));
  });
  const bpm = Number(raw.bpm);
  if (!(bpm > 0 && bpm <= 400)) throw new Error("bpm out of range");
  return { cells, bpm, steps: Number(raw.steps), seed: Number(raw.seed) };
}

export function toggleCell(
  state: SketchState,
  family: number,
  step: number,
  velocity: number,
  articulation: number,
): SketchState {
  const next = parseSketch(serializeSketch(state)); // deep copy through the schema
  const cell = next.cells[family][step];
  if (cell.active) {
    next.cells[family][step] = { active: false, velocity: cell.velocity, articulation: cell.articulation };
  } else {
    next.cells[family][step] = { active: true, velocity: clampVelocity(velocity), articulation };
  }
  return next;
}
