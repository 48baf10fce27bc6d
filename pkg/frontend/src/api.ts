// Thin client over the render service endpoints. The UI never synthesizes
// audio locally; every waveform comes back from the documented endpoints.

import type { RenderRequest } from "./state.js";

export interface ServiceConfig {
  families: string[];
  articulation_vocab: number;
  supported_steps: number[];
  model_kind: string;
  codec: { sample_rate: number };
}

export interface RenderResult {
  wav: ArrayBuffer;
  generationSeconds: number;
  audioSeconds: number;
  rtf: number;
  checksum: string; // server-reported sha256 of the WAV bytes
}

export class ApiError extends Error {
  constructor(
    message: string,
    readonly status: number,
    readonly field?: string,
  ) {
    super(message);
  }
}

async function raiseForStatus(resp: Response): Promise<void> {
  if (resp.ok) return;
  let field: string | undefined;
  let message = `${resp.status} ${resp.statusText}`;
  try {
    const body = await resp.json();
    if (body?.detail?.message) {
      field = body.detail.field;
      message = body.detail.message;
    }
  } catch {
    // non-JSON error body; keep the status text
  }
  throw new ApiError(message, resp.status, field);
}

export async function fetchConfig(base: string): Promise<ServiceConfig> {
  const resp = await fetch(`${base}/config`);
  await raiseForStatus(resp);
  return (await resp.json()) as ServiceConfig;
}

async function postForWav(url: string, body: RenderRequest): Promise<RenderResult> {
  const resp = await fetch(url, {
    method: "POST",
    headers: { "content-type": "application/json" },
    body: JSON.stringify(body),
  });
  await raiseForStatus(resp);
  return {
    wav: await resp.arrayBuffer(),
    generationSeconds: Number(resp.headers.get("X-Generation-Seconds") ?? "0"),
    audioSeconds: Number(resp.headers.get("X-Audio-Seconds") ?? "0"),
    rtf: Number(resp.headers.get("X-Rtf") ?? "0"),
    checksum: resp.headers.get("X-Audio-Sha256") ?? "",
  };
}

export function postRender(base: string, body: RenderRequest): Promise<RenderResult> {
  return postForWav(`${base}/render`, body);
}

export function postBaselineRender(base: string, body: RenderRequest): Promise<RenderResult> {
  return postForWav(`${base}/baseline-render`, body);
}

// the diagnostics GET variant takes the grid JSON urlsafe-base64-encoded
export function conditioningHeatmapUrl(base: string, body: RenderRequest): string {
  const json = JSON.stringify(body);
  const b64 = btoa(json).replace(/\+/g, "-").replace(/\//g, "_");
  return `${base}/diagnostics/conditioning?grid=${encodeURIComponent(b64)}`;
}

export async function sha256Hex(data: ArrayBuffer): Promise<string> {
  const digest = await crypto.subtle.digest("SHA-256", data);
  return Array.from(new Uint8Array(digest))
    .map((b) => b.toString(16).padStart(2, "0"))
    .join("");
}
