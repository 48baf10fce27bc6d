import base64
import hashlib
import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from drumbench.audioio import read_wav_bytes, write_wav_bytes
from drumbench.service import create_app
from drumbench.training import KIND_DIFFUSION, TrainConfig, train


@pytest.fixture(scope="module")
def service_checkpoint(tiny_cache, tmp_path_factory):
    out = tmp_path_factory.mktemp("service")
    ck_path = out / "diffusion.pt"
    train(tiny_cache, TrainConfig(kind=KIND_DIFFUSION, epochs=1, seed=21, max_windows=4), out_path=ck_path)
    return ck_path


@pytest.fixture(scope="module")
def client(tiny_cache, service_checkpoint):
    return TestClient(create_app(service_checkpoint, cache_dir=tiny_cache.root))


def grid_body(events=(), bpm=120.0, steps=25, seed=7):
    return {
        "grid": {"bpm": bpm, "events": [dict(e) for e in events]},
        "steps": steps,
        "seed": seed,
    }


KICK = {"family": 0, "time": 0.5, "velocity": 0.9, "articulation": 1}


class TestWavIo:
    def test_round_trip(self):
        rng = np.random.default_rng(0)
        audio = np.clip(rng.standard_normal(4000) * 0.2, -1, 1)
        back, rate = read_wav_bytes(write_wav_bytes(audio, 16000))
        assert rate == 16000
        assert np.abs(back - audio).max() < 1e-4


class TestRender:
    def test_empty_grid_renders_silence_of_four_beats(self, client):
        r = client.post("/render", json=grid_body(bpm=120))
        assert r.status_code == 200
        audio, rate = read_wav_bytes(r.content)
        assert len(audio) == int(round(4 * 60 / 120 * rate))
        assert not audio.any()

    def test_same_seed_byte_identical(self, client):
        a = client.post("/render", json=grid_body([KICK], seed=42))
        b = client.post("/render", json=grid_body([KICK], seed=42))
        assert a.content == b.content
        assert a.headers["X-Audio-Sha256"] == hashlib.sha256(a.content).hexdigest()

    def test_different_seed_differs(self, client):
        a = client.post("/render", json=grid_body([KICK], seed=1))
        b = client.post("/render", json=grid_body([KICK], seed=2))
        assert a.content != b.content

    def test_rtf_header_consistent(self, client):
        r = client.post("/render", json=grid_body([KICK]))
        gen = float(r.headers["X-Generation-Seconds"])
        dur = float(r.headers["X-Audio-Seconds"])
        rtf = float(r.headers["X-Rtf"])
        assert rtf == pytest.approx(gen / dur, rel=0.10)

    def test_unsupported_steps_400(self, client):
        r = client.post("/render", json=grid_body([KICK], steps=13))
        assert r.status_code == 400
        assert r.json()["detail"]["field"] == "steps"

    def test_float_steps_rejected(self, client):
        r = client.post("/render", json={**grid_body([KICK]), "steps": 25.0})
        assert r.status_code == 400

    def test_invalid_grid_field_message(self, client):
        bad = {"grid": {"bpm": 120, "events": [{"family": 99, "time": 0.1, "velocity": 0.5}]}}
        r = client.post("/render", json=bad)
        assert r.status_code == 400
        assert "family" in r.json()["detail"]["message"]

    def test_missing_grid_400(self, client):
        r = client.post("/render", json={"steps": 25})
        assert r.status_code == 400
        assert r.json()["detail"]["field"] == "grid"


class TestOtherEndpoints:
    def test_config(self, client):
        cfg = client.get("/config").json()
        assert cfg["supported_steps"] == [6, 12, 25, 50]
        assert len(cfg["families"]) == 8
        assert cfg["codec"]["sample_rate"] == 16000

    def test_baseline_render_duration_matches(self, client):
        gen = client.post("/render", json=grid_body([KICK], bpm=100))
        base = client.post("/baseline-render", json=grid_body([KICK], bpm=100))
        assert base.status_code == 200
        a, _ = read_wav_bytes(gen.content)
        b, _ = read_wav_bytes(base.content)
        assert len(a) == len(b)
        assert b.any()  # the kick is audible in the procedural render

    def test_conditioning_diagnostics_post_and_get(self, client):
        body = grid_body([KICK])
        r = client.post("/diagnostics/conditioning", json=body)
        assert r.status_code == 200
        assert r.headers["content-type"] == "image/png"
        assert r.content[:8] == b"\x89PNG\r\n\x1a\n"
        encoded = base64.urlsafe_b64encode(json.dumps(body).encode()).decode()
        g = client.get("/diagnostics/conditioning", params={"grid": encoded})
        assert g.status_code == 200
        assert g.content[:8] == b"\x89PNG\r\n\x1a\n"

    def test_diagnostics_bad_b64_400(self, client):
        r = client.get("/diagnostics/conditioning", params={"grid": "not-base64!!"})
        assert r.status_code == 400


class TestSharedGenerationPath:
    def test_service_render_equals_direct_generation(self, client, tiny_cache, service_checkpoint):
        # the service route and the batch evaluator call one generation function
        from drumbench.grid import DrumEvent, SegmentWindow, build_grid, metronomic_beats
        from drumbench.render import generate_audio
        from drumbench.training import load_checkpoint

        resp = client.post("/render", json=grid_body([KICK], bpm=120, steps=12, seed=99))
        served, rate = read_wav_bytes(resp.content)

        duration = 4 * 60 / 120
        grid = build_grid([DrumEvent(0, 0.5, 0.9, 1)], 120.0, duration, 4)
        window = SegmentWindow(0.0, duration, metronomic_beats(120.0, duration)[:5])
        ck = load_checkpoint(service_checkpoint)
        direct = generate_audio(
            grid, window, ck["frontend_module"], ck["model_module"],
            tiny_cache.basis, tiny_cache.codec_config, 12, 99,
        )
        np.testing.assert_array_equal(served, read_wav_bytes(write_wav_bytes(direct, rate))[0])
