"""Symbolic drum grids on a 250 Hz seconds lattice.

The grid carries, per drum family, three numeric lanes (state velocity, onset
velocity, onset count) plus an integer articulation lane. Windows are cut on
four-beat boundaries, filtered against audio onset evidence at the boundary,
and rendered procedurally for the symbolic baseline.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

GRID_RATE = 250.0
N_FAMILIES = 8

# Row layout of DrumGrid.numeric: 8 state-velocity lanes, then 8 onset-velocity
# lanes, then 8 onset-count lanes.
STATE_ROWS = slice(0, 8)
ONSET_VEL_ROWS = slice(8, 16)
ONSET_COUNT_ROWS = slice(16, 24)

FAMILY_NAMES = (
    "kick",
    "snare",
    "hat_closed",
    "hat_open",
    "tom_low",
    "tom_mid",
    "crash",
    "ride",
)


class GridValidationError(ValueError):
    """Raised when events or grid parameters violate their bounds."""


@dataclass(frozen=True)
class DrumEvent:
    family: int
    time: float
    velocity: float
    articulation: int = 0


@dataclass
class DrumGrid:
    """250 Hz symbolic lanes for one performance or window.

    numeric: (24, T_c) float lanes, see *_ROWS slices for the layout.
    articulation: (8, T_c) integer IDs, held from each onset cell forward.
    """

    numeric: np.ndarray
    articulation: np.ndarray
    bpm: float
    articulation_vocab: int = 4
    rate: float = GRID_RATE

    @property
    def n_cells(self) -> int:
        return self.numeric.shape[1]

    @property
    def duration(self) -> float:
        return self.n_cells / self.rate

    def cell_time(self, cell: int) -> float:
        return cell / self.rate


@dataclass
class SegmentWindow:
    """One four-beat window of a performance."""

    start: float
    end: float
    beat_times: np.ndarray  # 5 ascending values spanning 4 beats
    source_id: str = ""
    frame_mask: np.ndarray | None = None  # filled by the cache builder

    def __post_init__(self):
        self.beat_times = np.asarray(self.beat_times, dtype=np.float64)
        if self.end <= self.start:
            raise GridValidationError("window end must exceed start")
        if self.beat_times.shape != (5,) or np.any(np.diff(self.beat_times) <= 0):
            raise GridValidationError("beat_times must be 5 strictly increasing values")

    @property
    def duration(self) -> float:
        return self.end - self.start


def frame_mask_for_window(window: SegmentWindow, n_frames: int, frame_rate: float) -> np.ndarray:
    """Valid-frame mask: frames whose center time lies inside [start, end)."""
    tau = window.start + (np.arange(n_frames) + 0.5) / frame_rate
    return (tau >= window.start) & (tau < window.end)


def _validate_events(events, vocab: int, duration: float) -> list[DrumEvent]:
    for ev in events:
        if not 0 <= ev.family < N_FAMILIES:
            raise GridValidationError(f"family {ev.family} out of range [0, {N_FAMILIES})")
        if not 0 <= ev.articulation < vocab:
            raise GridValidationError(f"articulation {ev.articulation} out of range [0, {vocab})")
        if not 0.0 <= ev.velocity <= 1.0:
            raise GridValidationError(f"velocity {ev.velocity} outside [0, 1]")
        if not 0.0 <= ev.time <= duration:
            raise GridValidationError(f"event time {ev.time} outside [0, {duration}]")
    # Stable deterministic order; for same-cell collisions the loudest event
    # (ties: the later one here) defines the state/articulation lanes.
    return sorted(events, key=lambda e: (e.time, e.family, e.velocity, e.articulation))


def build_grid(
    events,
    bpm: float,
    duration: float,
    articulation_vocab: int = 4,
) -> DrumGrid:
    """Rasterize events onto the 250 Hz lanes.

    Onset velocity takes the max over same-cell collisions while onset count
    sums; state velocity holds from an onset until the next same-family onset
    or the end of the grid.
    """
    if duration <= 0:
        raise GridValidationError("duration must be positive")
    if bpm <= 0:
        raise GridValidationError("bpm must be positive")
    events = _validate_events(events, articulation_vocab, duration)

    n_cells = max(1, int(round(duration * GRID_RATE)))
    numeric = np.zeros((24, n_cells), dtype=np.float64)
    articulation = np.zeros((N_FAMILIES, n_cells), dtype=np.int64)

    per_family_onsets: list[list[tuple[int, float, int]]] = [[] for _ in range(N_FAMILIES)]
    cell_winner: dict[tuple[int, int], float] = {}
    for ev in events:
        cell = min(int(round(ev.time * GRID_RATE)), n_cells - 1)
        f = ev.family
        numeric[16 + f, cell] += 1.0
        numeric[8 + f, cell] = max(numeric[8 + f, cell], ev.velocity)
        if ev.velocity >= cell_winner.get((f, cell), -1.0):
            cell_winner[(f, cell)] = ev.velocity
            onsets = per_family_onsets[f]
            if onsets and onsets[-1][0] == cell:
                onsets[-1] = (cell, ev.velocity, ev.articulation)
            else:
                onsets.append((cell, ev.velocity, ev.articulation))

    for f in range(N_FAMILIES):
        onsets = per_family_onsets[f]
        for i, (cell, vel, art) in enumerate(onsets):
            until = onsets[i + 1][0] if i + 1 < len(onsets) else n_cells
            numeric[f, cell:until] = vel
            articulation[f, cell:] = art  # later onsets overwrite their suffix

    return DrumGrid(numeric, articulation, bpm=bpm, articulation_vocab=articulation_vocab)


def metronomic_beats(bpm: float, duration: float) -> np.ndarray:
    """Beat i at i*60/bpm, for all beats that start inside the duration."""
    period = 60.0 / bpm
    n = int(np.floor(duration / period + 1e-9))
    return np.arange(n + 1) * period


def window_cells(grid: DrumGrid, window: SegmentWindow) -> tuple[int, int]:
    c0 = int(round(window.start * grid.rate))
    c1 = int(round(window.end * grid.rate))
    return max(c0, 0), min(max(c1, c0 + 1), grid.n_cells)


def segment_windows(grid: DrumGrid, beat_times, source_id: str = "") -> list[SegmentWindow]:
    """Non-overlapping four-beat windows; windows without onsets are dropped."""
    beat_times = np.asarray(beat_times, dtype=np.float64)
    if beat_times.ndim != 1 or np.any(np.diff(beat_times) <= 0):
        raise GridValidationError("beat_times must be ascending")
    windows = []
    for i in range((len(beat_times) - 1) // 4):
        beats = beat_times[4 * i : 4 * i + 5]
        w = SegmentWindow(float(beats[0]), float(beats[4]), beats, source_id=source_id)
        c0, c1 = window_cells(grid, w)
        if np.sum(grid.numeric[ONSET_COUNT_ROWS, c0:c1]) > 0:
            windows.append(w)
    return windows


def onset_envelope(audio: np.ndarray, sample_rate: float, win: float = 0.010, hop: float = 0.005):
    """Half-wave-rectified frame-energy difference.

    Returns (envelope, frame_center_times). The first frame is compared
    against zero energy so an onset at the very first sample registers.
    """
    audio = np.asarray(audio, dtype=np.float64)
    win_n = max(1, int(round(win * sample_rate)))
    hop_n = max(1, int(round(hop * sample_rate)))
    n_frames = max(1, 1 + (len(audio) - 1) // hop_n) if len(audio) else 1
    energies = np.zeros(n_frames)
    for t in range(n_frames):
        seg = audio[t * hop_n : t * hop_n + win_n]
        energies[t] = float(np.dot(seg, seg))
    flux = np.maximum(np.diff(energies, prepend=0.0), 0.0)
    times = (np.arange(n_frames) * hop_n + win_n / 2) / sample_rate
    return flux, times


def boundary_onset_filter(
    window: SegmentWindow,
    grid: DrumGrid,
    audio: np.ndarray,
    sample_rate: float,
    boundary: float = 0.060,
) -> bool:
    """Keep/drop decision for boundary-start mismatches.

    If a symbolic onset falls within `boundary` seconds of the window start,
    audio-onset evidence (envelope mass above a tenth of the clip peak) must
    also appear within that span; otherwise the window is kept regardless.
    `audio` covers [start, end).
    """
    c0, c1 = window_cells(grid, window)
    c_boundary = min(c0 + int(round(boundary * grid.rate)), c1)
    if np.sum(grid.numeric[ONSET_COUNT_ROWS, c0:c_boundary]) == 0:
        return True
    flux, times = onset_envelope(audio, sample_rate)
    peak = flux.max() if len(flux) else 0.0
    threshold = max(1e-12, 0.1 * peak)
    early = flux[times < boundary]
    return bool(len(early) and early.max() > threshold)


# ---------------------------------------------------------------------------
# Procedural renderer
# ---------------------------------------------------------------------------

# Each family mixes one tuned sine and one colored-noise carrier, both locked
# to absolute time, so every event of a family scales the same carrier by a
# nonnegative envelope: clip RMS is then exactly monotone in any single
# event's velocity within a family (see VoiceBank).


@dataclass(frozen=True)
class Voice:
    sine_freq: float
    sine_amp: float
    noise_amp: float
    noise_smooth: float  # one-pole lowpass coefficient in [0, 1); 0 = white
    decay: float  # base decay time constant, seconds
    artic_decay: tuple[float, ...] = (1.0, 0.55, 1.7, 0.3)


DEFAULT_VOICES = (
    Voice(55.0, 0.95, 0.25, 0.92, 0.30),
    Voice(185.0, 0.45, 0.65, 0.35, 0.18),
    Voice(900.0, 0.04, 0.55, 0.0, 0.05),
    Voice(820.0, 0.05, 0.50, 0.0, 0.28),
    Voice(110.0, 0.85, 0.20, 0.80, 0.26),
    Voice(165.0, 0.80, 0.20, 0.70, 0.22),
    Voice(400.0, 0.10, 0.60, 0.0, 0.85),
    Voice(620.0, 0.25, 0.40, 0.10, 0.55),
)

_CARRIER_SECONDS = 6.0


class VoiceBank:
    """Frozen per-family carriers plus articulation-dependent envelopes."""

    def __init__(self, voices=DEFAULT_VOICES, sample_rate: float = 16000.0, seed: int = 701):
        self.voices = tuple(voices)
        self.sample_rate = float(sample_rate)
        self.seed = seed
        n = int(_CARRIER_SECONDS * sample_rate)
        rng = np.random.default_rng(seed)
        t = np.arange(n) / sample_rate
        self._carriers = np.empty((N_FAMILIES, n))
        for f, v in enumerate(self.voices):
            noise = rng.standard_normal(n)
            if v.noise_smooth > 0:
                # one-pole lowpass colors the noise; scipy.lfilter equivalent
                from scipy.signal import lfilter

                noise = lfilter([1 - v.noise_smooth], [1, -v.noise_smooth], noise)
            noise /= max(np.std(noise), 1e-12)
            self._carriers[f] = v.sine_amp * np.sin(2 * np.pi * v.sine_freq * t) + v.noise_amp * noise

    def carrier(self, family: int, start_sample: int, n: int) -> np.ndarray:
        idx = (start_sample + np.arange(n)) % self._carriers.shape[1]
        return self._carriers[family, idx]

    def envelope(self, family: int, articulation: int, velocity: float, n: int) -> np.ndarray:
        v = self.voices[family]
        scale = v.artic_decay[articulation % len(v.artic_decay)]
        t = np.arange(n) / self.sample_rate
        env = velocity * np.exp(-t / (v.decay * scale))
        attack = min(n, max(1, int(0.001 * self.sample_rate)))
        env[:attack] *= np.linspace(0.0, 1.0, attack, endpoint=False) + 1.0 / attack
        return env

    def randomized(self, rng: np.random.Generator) -> "VoiceBank":
        """Perturbed copy used for per-clip timbre variation in synthesis."""
        voices = []
        for v in self.voices:
            voices.append(
                replace(
                    v,
                    sine_freq=v.sine_freq * rng.uniform(0.85, 1.2),
                    sine_amp=v.sine_amp * rng.uniform(0.75, 1.1),
                    noise_amp=v.noise_amp * rng.uniform(0.75, 1.1),
                    noise_smooth=min(0.98, max(0.0, v.noise_smooth + rng.uniform(-0.08, 0.08))),
                    decay=v.decay * rng.uniform(0.7, 1.4),
                )
            )
        return VoiceBank(voices, self.sample_rate, seed=int(rng.integers(0, 2**31 - 1)))


def render_procedural(
    grid: DrumGrid,
    window: SegmentWindow,
    sample_rate: float = 16000.0,
    voices: VoiceBank | None = None,
) -> np.ndarray:
    """Deterministic waveform for the window from the onset/articulation lanes."""
    if voices is None or voices.sample_rate != sample_rate:
        voices = VoiceBank(sample_rate=sample_rate)
    n_out = int(round(window.duration * sample_rate))
    out = np.zeros(n_out)
    c0, c1 = window_cells(grid, window)
    start_sample = int(round(window.start * sample_rate))
    for f in range(N_FAMILIES):
        env = np.zeros(n_out)
        cells = np.nonzero(grid.numeric[8 + f, c0:c1] > 0)[0] + c0
        for cell in cells:
            t_rel = cell / grid.rate - window.start
            i0 = int(round(t_rel * sample_rate))
            if i0 >= n_out:
                continue
            vel = grid.numeric[8 + f, cell]
            art = int(grid.articulation[f, cell])
            seg = voices.envelope(f, art, vel, n_out - i0)
            env[i0:] += seg
        if np.any(env):
            out += env * voices.carrier(f, start_sample, n_out)
    return out


def nn_feature_vector(grid: DrumGrid, window: SegmentWindow) -> np.ndarray:
    """513-entry retrieval feature.

    Step-major layout over 16 sixteenth steps: onset counts (8), onset
    velocities (8), state velocities (8), scaled articulation IDs (8), then
    one BPM entry scaled by 1/240. Articulation is (id+1)/vocab while the
    family is ringing at the step start, else 0.
    """
    vec = np.zeros(16 * 32 + 1)
    step = window.duration / 16.0
    vocab = grid.articulation_vocab
    for s in range(16):
        t0 = window.start + s * step
        t1 = window.start + (s + 1) * step
        c0 = max(0, int(round(t0 * grid.rate)))
        c1 = min(grid.n_cells, max(c0 + 1, int(round(t1 * grid.rate))))
        if c0 >= grid.n_cells:
            continue
        base = 32 * s
        counts = grid.numeric[ONSET_COUNT_ROWS, c0:c1]
        ovel = grid.numeric[ONSET_VEL_ROWS, c0:c1]
        svel = grid.numeric[STATE_ROWS, c0:c1]
        vec[base : base + 8] = counts.sum(axis=1)
        vec[base + 8 : base + 16] = ovel.max(axis=1)
        vec[base + 16 : base + 24] = svel.mean(axis=1)
        ringing = grid.numeric[STATE_ROWS, c0] > 0
        vec[base + 24 : base + 32] = ringing * (grid.articulation[:, c0] + 1.0) / vocab
    vec[-1] = grid.bpm / 240.0
    return vec
