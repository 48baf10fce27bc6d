"""HTTP render and diagnostics service.

Endpoints:
    POST /render                  grid JSON + {steps, seed, bpm?} -> WAV bytes
    POST /baseline-render         grid JSON -> procedural render WAV
    GET  /config                  model/codec/frontend configuration
    POST /diagnostics/conditioning   grid JSON -> PNG heatmap of h
    GET  /diagnostics/conditioning?grid=<urlsafe-b64 JSON>   browser variant

Model state is immutable; each request samples with its own generator, so the
service path and the batch evaluator share one generation function and one
determinism story. A grid with zero events renders digital silence (windows
without symbolic activity are outside the model's training distribution by
construction).
"""

from __future__ import annotations

import base64
import hashlib
import io
import json
import time
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, Response
from fastapi.staticfiles import StaticFiles

from .audioio import write_wav_bytes
from .cache import Cache
from .codec import n_frames
from .conditioning import codec_frame_times, extract_branch_inputs
from .diffusion import SUPPORTED_STEP_COUNTS
from .grid import (
    FAMILY_NAMES,
    DrumEvent,
    GridValidationError,
    SegmentWindow,
    VoiceBank,
    build_grid,
    metronomic_beats,
    render_procedural,
)
from .metrics import real_time_factor
from .render import generate_audio
from .training import load_checkpoint

GRID_JSON_VERSION = 1


class GridRequestError(ValueError):
    def __init__(self, field: str, message: str):
        super().__init__(message)
        self.field = field


def parse_grid_request(body: dict, articulation_vocab: int):
    """Validate the grid JSON schema and build the four-beat window inputs."""
    if not isinstance(body, dict):
        raise GridRequestError("body", "request body must be a JSON object")
    grid_json = body.get("grid")
    if not isinstance(grid_json, dict):
        raise GridRequestError("grid", "missing grid object")
    bpm = body.get("bpm", grid_json.get("bpm"))
    if not isinstance(bpm, (int, float)) or not 0 < float(bpm) <= 400:
        raise GridRequestError("bpm", "bpm must be a number in (0, 400]")
    bpm = float(bpm)
    events_json = grid_json.get("events", [])
    if not isinstance(events_json, list):
        raise GridRequestError("events", "events must be a list")
    duration = 4 * 60.0 / bpm
    events = []
    for i, ev in enumerate(events_json):
        try:
            events.append(
                DrumEvent(
                    int(ev["family"]),
                    float(ev["time"]),
                    float(ev["velocity"]),
                    int(ev.get("articulation", 0)),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise GridRequestError(f"events[{i}]", f"malformed event: {exc}") from exc
    try:
        grid = build_grid(events, bpm, duration, articulation_vocab)
    except GridValidationError as exc:
        raise GridRequestError("events", str(exc)) from exc
    beats = metronomic_beats(bpm, duration)[:5]
    window = SegmentWindow(0.0, duration, beats)
    return grid, window, bpm


def create_app(checkpoint_path, cache_dir=None, ui_dir=None) -> FastAPI:
    from .cache import load_cache

    ck = load_checkpoint(checkpoint_path)
    if cache_dir is None:
        raise ValueError("cache_dir is required (codec/PCA state lives in the cache)")
    cache: Cache = load_cache(cache_dir)
    if ck["pca_hash"] != cache.basis.content_hash():
        raise ValueError("checkpoint PCA hash does not match the cache basis")
    cfg = cache.codec_config
    fe_cfg = ck["frontend_module"].cfg
    voices = VoiceBank(sample_rate=cfg.sample_rate)
    app = FastAPI(title="drumbench render service")

    def bad_request(field: str, message: str):
        return JSONResponse(status_code=400, content={"detail": {"field": field, "message": message}})

    @app.exception_handler(GridRequestError)
    async def _grid_error(request: Request, exc: GridRequestError):
        return bad_request(exc.field, str(exc))

    @app.get("/config")
    def config():
        return {
            "grid_json_version": GRID_JSON_VERSION,
            "families": list(FAMILY_NAMES),
            "articulation_vocab": fe_cfg.articulation_vocab,
            "supported_steps": list(SUPPORTED_STEP_COUNTS),
            "codec": cfg.to_dict(),
            "frontend": ck["frontend_config"],
            "model": ck["model_config"],
            "model_kind": ck["kind"],
        }

    def render_wav(audio: np.ndarray, seconds: float, steps: int, seed: int) -> Response:
        duration = len(audio) / cfg.sample_rate
        wav = write_wav_bytes(audio, cfg.sample_rate)
        return Response(
            content=wav,
            media_type="audio/wav",
            headers={
                "X-Generation-Seconds": f"{seconds:.6f}",
                "X-Audio-Seconds": f"{duration:.6f}",
                "X-Rtf": f"{real_time_factor(seconds, duration):.6f}",
                "X-Audio-Sha256": hashlib.sha256(wav).hexdigest(),
                "X-Steps": str(steps),
                "X-Seed": str(seed),
            },
        )

    @app.post("/render")
    async def render(request: Request):
        body = await request.json()
        grid, window, bpm = parse_grid_request(body, fe_cfg.articulation_vocab)
        steps = body.get("steps", 25)
        if not isinstance(steps, int) or steps not in SUPPORTED_STEP_COUNTS:
            raise GridRequestError("steps", f"steps must be one of {list(SUPPORTED_STEP_COUNTS)}")
        seed = body.get("seed", 0)
        if not isinstance(seed, int):
            raise GridRequestError("seed", "seed must be an integer")
        t0 = time.perf_counter()
        if not grid.numeric[16:24].any():
            audio = np.zeros(int(round(window.duration * cfg.sample_rate)))
        else:
            audio = generate_audio(
                grid, window, ck["frontend_module"], ck["model_module"], cache.basis, cfg,
                steps, seed,
            )
        return render_wav(audio, time.perf_counter() - t0, steps, seed)

    @app.post("/baseline-render")
    async def baseline_render(request: Request):
        body = await request.json()
        grid, window, _ = parse_grid_request(body, fe_cfg.articulation_vocab)
        t0 = time.perf_counter()
        audio = render_procedural(grid, window, cfg.sample_rate, voices)
        return render_wav(audio, time.perf_counter() - t0, steps=0, seed=0)

    def conditioning_png(body: dict) -> Response:
        grid, window, _ = parse_grid_request(body, fe_cfg.articulation_vocab)
        length = int(round(window.duration * cfg.sample_rate))
        t = n_frames(length, cfg)
        taus = codec_frame_times(t, cfg.frame_rate, start=0.0)
        import torch

        with torch.no_grad():
            h = ck["frontend_module"](extract_branch_inputs(grid, taus, fe_cfg)).numpy()
        # row z-scores over time, channels on the vertical axis
        z = (h - h.mean(axis=0)) / np.maximum(h.std(axis=0), 1e-8)
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(8, 4), dpi=110)
        ax.imshow(z.T, aspect="auto", origin="lower", cmap="magma", interpolation="nearest")
        ax.set_xlabel("codec frame")
        ax.set_ylabel("conditioning channel")
        buf = io.BytesIO()
        fig.tight_layout()
        fig.savefig(buf, format="png")
        plt.close(fig)
        return Response(content=buf.getvalue(), media_type="image/png")

    @app.post("/diagnostics/conditioning")
    async def conditioning_post(request: Request):
        return conditioning_png(await request.json())

    @app.get("/diagnostics/conditioning")
    def conditioning_get(grid: str):
        try:
            body = json.loads(base64.urlsafe_b64decode(grid.encode()))
        except (ValueError, json.JSONDecodeError) as exc:
            raise GridRequestError("grid", f"grid query param must be urlsafe-b64 JSON: {exc}")
        return conditioning_png(body)

    if ui_dir is not None and Path(ui_dir).is_dir():
        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
