import { describe, expect, it } from "vitest";

import {
  emptySketch,
  parseSketch,
  serializeSketch,
  sketchDuration,
  sketchToGridRequest,
  toggleCell,
} from "../src/state.js";

describe("sketchToGridRequest", () => {
  it("empty sketch gives zero events over a four-beat duration", () => {
    const state = emptySketch(120);
    const req = sketchToGridRequest(state);
    expect(req.grid.events).toHaveLength(0);
    expect(sketchDuration(state)).toBeCloseTo(4 * (60 / 120), 12);
  });

  it("bpm 120 step 4 lands at 0.5 s", () => {
    let state = emptySketch(120);
    state = toggleCell(state, 0, 4, 0.9, 1);
    const req = sketchToGridRequest(state);
    expect(req.grid.events).toHaveLength(1);
    expect(req.grid.events[0]).toEqual({ family: 0, time: 0.5, velocity: 0.9, articulation: 1 });
  });

  it("carries steps and seed through", () => {
    const req = sketchToGridRequest(emptySketch(100, 12, 77));
    expect(req.steps).toBe(12);
    expect(req.seed).toBe(77);
    expect(req.grid.bpm).toBe(100);
  });

  it("toggling one cell changes exactly one event", () => {
    let state = emptySketch(120);
    state = toggleCell(state, 2, 0, 0.7, 0);
    const before = sketchToGridRequest(state);
    const after = sketchToGridRequest(toggleCell(state, 5, 8, 0.6, 2));
    const delta = after.grid.events.filter(
      (e) => !before.grid.events.some((b) => JSON.stringify(b) === JSON.stringify(e)),
    );
    expect(delta).toEqual([{ family: 5, time: 1.0, velocity: 0.6, articulation: 2 }]);
    expect(after.grid.events).toHaveLength(before.grid.events.length + 1);
  });
});

describe("serialization", () => {
  it("parse . serialize is the identity", () => {
    let state = emptySketch(133, 6, 42);
    state = toggleCell(state, 0, 0, 0.9, 0);
    state = toggleCell(state, 3, 7, 0.45, 3);
    state = toggleCell(state, 7, 15, 1.0, 1);
    const round = parseSketch(serializeSketch(state));
    expect(round).toEqual(state);
    expect(serializeSketch(round)).toBe(serializeSketch(state));
  });

  it("rejects malformed sketches", () => {
    expect(() => parseSketch("{}")).toThrow();
    expect(() => parseSketch(JSON.stringify({ version: 2 }))).toThrow();
    const bad = JSON.parse(serializeSketch(emptySketch()));
    bad.cells = bad.cells.slice(0, 4);
    expect(() => parseSketch(JSON.stringify(bad))).toThrow(/8 family rows/);
  });

  it("clamps velocities on parse", () => {
    const raw = JSON.parse(serializeSketch(emptySketch()));
    raw.cells[0][0] = { active: true, velocity: 7, articulation: 0 };
    expect(parseSketch(JSON.stringify(raw)).cells[0][0].velocity).toBe(1);
  });

  it("toggle returns a new state and leaves the old one alone", () => {
    const before = emptySketch();
    const after = toggleCell(before, 1, 2, 0.5, 0);
    expect(before.cells[1][2].active).toBe(false);
    expect(after.cells[1][2].active).toBe(true);
  });
});
