// Sketch editor wiring: grid of 8 families x 16 steps, render/baseline A/B
// playback, RTF + checksum display, and the conditioning heatmap. One render
// is in flight at a time; clicks during a render queue behind it.

import {
  ApiError,
  conditioningHeatmapUrl,
  fetchConfig,
  postBaselineRender,
  postRender,
  sha256Hex,
  type RenderResult,
  type ServiceConfig,
} from "./api.js";
import {
  N_FAMILIES,
  N_STEPS,
  emptySketch,
  parseSketch,
  serializeSketch,
  sketchToGridRequest,
  toggleCell,
  type SketchState,
} from "./state.js";

const BASE = "";

let state: SketchState = emptySketch();
let config: ServiceConfig | null = null;
let audioCtx: AudioContext | null = null;
let busy = false;
let queued: (() => Promise<void>) | null = null;
let lastRender: RenderResult | null = null;
let lastBaseline: RenderResult | null = null;

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
};

function showError(message: string): void {
  const banner = $("error-banner");
  banner.textContent = message;
  banner.classList.remove("hidden");
}

function clearError(): void {
  $("error-banner").classList.add("hidden");
}

function familyArticulation(f: number): number {
  const select = document.querySelector<HTMLSelectElement>(`#artic-${f}`);
  return select ? Number(select.value) : 0;
}

function renderGridDom(): void {
  const names = config?.families ?? Array.from({ length: N_FAMILIES }, (_, i) => `family ${i}`);
  const vocab = config?.articulation_vocab ?? 4;
  const table = $("grid");
  table.innerHTML = "";
  for (let f = 0; f < N_FAMILIES; f++) {
    const row = document.createElement("tr");
    const label = document.createElement("td");
    label.className = "family-label";
    const select = document.createElement("select");
    select.id = `artic-${f}`;
    for (let a = 0; a < vocab; a++) {
      const opt = document.createElement("option");
      opt.value = String(a);
      opt.textContent = `art ${a}`;
      select.appendChild(opt);
    }
    label.append(names[f], select);
    row.appendChild(label);
    for (let s = 0; s < N_STEPS; s++) {
      const td = document.createElement("td");
      const cell = state.cells[f][s];
      td.className = "cell" + (cell.active ? " on" : "") + (s % 4 === 0 ? " beat" : "");
      if (cell.active) td.style.opacity = String(0.4 + 0.6 * cell.velocity);
      td.addEventListener("click", () => {
        const velocity = Number($<HTMLInputElement>("velocity").value);
        state = toggleCell(state, f, s, velocity, familyArticulation(f));
        renderGridDom();
      });
      row.appendChild(td);
    }
    table.appendChild(row);
  }
}

async function playWav(wav: ArrayBuffer): Promise<void> {
  audioCtx = audioCtx ?? new AudioContext();
  const buffer = await audioCtx.decodeAudioData(wav.slice(0));
  const source = audioCtx.createBufferSource();
  source.buffer = buffer;
  source.connect(audioCtx.destination);
  source.start();
}

function readControls(): void {
  state.bpm = Number($<HTMLInputElement>("bpm").value);
  state.steps = Number($<HTMLSelectElement>("steps").value);
  state.seed = Number($<HTMLInputElement>("seed").value);
}

async function showResult(kind: "model" | "baseline", result: RenderResult): Promise<void> {
  const local = await sha256Hex(result.wav);
  const match = local === result.checksum ? "ok" : "MISMATCH";
  $(`${kind}-info`).textContent =
    `${result.audioSeconds.toFixed(2)} s audio in ${result.generationSeconds.toFixed(2)} s ` +
    `(RTF ${result.rtf.toFixed(3)}) sha256 ${result.checksum.slice(0, 12)}… [${match}]`;
}

function runExclusive(task: () => Promise<void>): void {
  if (busy) {
    queued = task; // latest request wins the queue slot
    return;
  }
  busy = true;
  task()
    .catch((err) => {
      showError(err instanceof ApiError ? `${err.field ?? "request"}: ${err.message}` : String(err));
    })
    .finally(() => {
      busy = false;
      if (queued) {
        const next = queued;
        queued = null;
        runExclusive(next);
      }
    });
}

async function doRender(): Promise<void> {
  clearError();
  readControls();
  const body = sketchToGridRequest(state);
  const result = await postRender(BASE, body);
  lastRender = result;
  await showResult("model", result);
  $<HTMLImageElement>("heatmap").src = conditioningHeatmapUrl(BASE, body);
  await playWav(result.wav);
}

async function doBaseline(): Promise<void> {
  clearError();
  readControls();
  const result = await postBaselineRender(BASE, sketchToGridRequest(state));
  lastBaseline = result;
  await showResult("baseline", result);
  await playWav(result.wav);
}

function wireTransport(): void {
  $("render").addEventListener("click", () => runExclusive(doRender));
  $("baseline").addEventListener("click", () => runExclusive(doBaseline));
  $("play-model").addEventListener("click", () => {
    if (lastRender) void playWav(lastRender.wav);
  });
  $("play-baseline").addEventListener("click", () => {
    if (lastBaseline) void playWav(lastBaseline.wav);
  });
  $("clear").addEventListener("click", () => {
    state = emptySketch(state.bpm, state.steps, state.seed);
    renderGridDom();
  });
  $("export").addEventListener("click", () => {
    $<HTMLTextAreaElement>("sketch-json").value = serializeSketch(state);
  });
  $("import").addEventListener("click", () => {
    try {
      state = parseSketch($<HTMLTextAreaElement>("sketch-json").value);
      $<HTMLInputElement>("bpm").value = String(state.bpm);
      $<HTMLInputElement>("seed").value = String(state.seed);
      renderGridDom();
      clearError();
    } catch (err) {
      showError(`sketch JSON: ${String(err)}`);
    }
  });
}

async function init(): Promise<void> {
  wireTransport();
  renderGridDom();
  try {
    config = await fetchConfig(BASE);
    const select = $<HTMLSelectElement>("steps");
    select.innerHTML = "";
    for (const n of config.supported_steps) {
      const opt = document.createElement("option");
      opt.value = String(n);
      opt.textContent = `${n} steps`;
      if (n === 25) opt.selected = true;
      select.appendChild(opt);
    }
    renderGridDom();
  } catch (err) {
    showError(`service unreachable: ${String(err)}`);
  }
}

void init();
