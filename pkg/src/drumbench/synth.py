"""Synthetic corpus generation.

Performances are sampled from per-family sixteenth-step probability templates
at a random tempo, rendered procedurally with per-clip randomized voice banks
and gains so the audio targets are never trivially equal to the default
symbolic-render baseline.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .grid import DrumEvent, SegmentWindow, VoiceBank, build_grid, render_procedural

# hit probability per family for each sixteenth position within a beat,
# by beat parity (downbeat-ish patterns keep windows musically plausible)
_STEP_TEMPLATES = {
    0: {"even": (0.95, 0.05, 0.30, 0.05), "odd": (0.85, 0.05, 0.25, 0.10)},  # kick
    1: {"even": (0.05, 0.02, 0.10, 0.02), "odd": (0.95, 0.02, 0.10, 0.15)},  # snare
    2: {"even": (0.85, 0.40, 0.85, 0.40), "odd": (0.85, 0.40, 0.85, 0.40)},  # closed hat
    3: {"even": (0.02, 0.02, 0.15, 0.02), "odd": (0.02, 0.02, 0.15, 0.02)},  # open hat
    4: {"even": (0.03, 0.02, 0.03, 0.06), "odd": (0.03, 0.02, 0.03, 0.06)},  # low tom
    5: {"even": (0.03, 0.02, 0.03, 0.06), "odd": (0.03, 0.02, 0.03, 0.08)},  # mid tom
    6: {"even": (0.04, 0.01, 0.01, 0.01), "odd": (0.01, 0.01, 0.01, 0.01)},  # crash
    7: {"even": (0.10, 0.02, 0.08, 0.02), "odd": (0.10, 0.02, 0.08, 0.02)},  # ride
}


@dataclass(frozen=True)
class CorpusSpec:
    n_performances: int = 24
    beats_choices: tuple[int, ...] = (8, 12, 16)
    bpm_range: tuple[float, float] = (96.0, 150.0)
    articulation_vocab: int = 4
    gain_range: tuple[float, float] = (0.5, 0.9)
    tail_seconds: float = 0.25
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CorpusSpec":
        d = dict(d)
        for key in ("beats_choices", "bpm_range", "gain_range"):
            d[key] = tuple(d[key])
        return cls(**d)


@dataclass
class Performance:
    source_id: str
    bpm: float
    duration: float
    events: list[DrumEvent]
    audio: np.ndarray


@dataclass
class Corpus:
    spec: CorpusSpec
    sample_rate: int
    performances: list[Performance] = field(default_factory=list)

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps(self.spec.to_dict(), sort_keys=True).encode())
        h.update(str(self.sample_rate).encode())
        for p in self.performances:
            h.update(p.source_id.encode())
            h.update(np.float64(p.bpm).tobytes())
            h.update(json.dumps([list(astuple_event(e)) for e in p.events]).encode())
            h.update(p.audio.tobytes())
        return h.hexdigest()


def astuple_event(e: DrumEvent) -> tuple:
    return (e.family, e.time, e.velocity, e.articulation)


def _sample_events(rng: np.random.Generator, bpm: float, n_beats: int, vocab: int) -> list[DrumEvent]:
    period = 60.0 / bpm
    events = []
    for beat in range(n_beats):
        parity = "even" if beat % 2 == 0 else "odd"
        for family, templates in _STEP_TEMPLATES.items():
            probs = templates[parity]
            for step in range(4):
                if rng.random() < probs[step]:
                    t = (beat + step / 4.0) * period
                    events.append(
                        DrumEvent(
                            family,
                            t,
                            float(rng.uniform(0.4, 1.0)),
                            int(rng.integers(0, vocab)),
                        )
                    )
    return events


def generate_corpus(spec: CorpusSpec, sample_rate: int = 16000) -> Corpus:
    corpus = Corpus(spec, sample_rate)
    base_bank = VoiceBank(sample_rate=sample_rate)
    for idx in range(spec.n_performances):
        rng = np.random.default_rng([spec.seed, idx])
        bpm = float(rng.uniform(*spec.bpm_range))
        n_beats = int(rng.choice(spec.beats_choices))
        duration = n_beats * 60.0 / bpm + spec.tail_seconds
        events = _sample_events(rng, bpm, n_beats, spec.articulation_vocab)
        grid = build_grid(events, bpm, duration, spec.articulation_vocab)
        span = SegmentWindow(0.0, duration, np.linspace(0.0, duration, 5))
        voices = base_bank.randomized(rng)
        gain = float(rng.uniform(*spec.gain_range))
        audio = gain * render_procedural(grid, span, sample_rate, voices)
        corpus.performances.append(Performance(f"p{idx:04d}", bpm, duration, events, audio))
    return corpus


def save_corpus(corpus: Corpus, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = {
        "version": 1,
        "spec": corpus.spec.to_dict(),
        "sample_rate": corpus.sample_rate,
        "content_hash": corpus.content_hash(),
        "performances": [
            {
                "source_id": p.source_id,
                "bpm": p.bpm,
                "duration": p.duration,
                "events": [astuple_event(e) for e in p.events],
            }
            for p in corpus.performances
        ],
    }
    (out / "corpus.json").write_text(json.dumps(meta, indent=1, sort_keys=True))
    np.savez(out / "audio.npz", **{p.source_id: p.audio for p in corpus.performances})


def load_corpus(in_dir) -> Corpus:
    src = Path(in_dir)
    meta = json.loads((src / "corpus.json").read_text())
    corpus = Corpus(CorpusSpec.from_dict(meta["spec"]), meta["sample_rate"])
    with np.load(src / "audio.npz") as audio:
        for p in meta["performances"]:
            corpus.performances.append(
                Performance(
                    p["source_id"],
                    p["bpm"],
                    p["duration"],
                    [DrumEvent(f, t, v, a) for f, t, v, a in p["events"]],
                    audio[p["source_id"]],
                )
            )
    if corpus.content_hash() != meta["content_hash"]:
        raise ValueError("corpus content hash mismatch; files were modified")
    return corpus
