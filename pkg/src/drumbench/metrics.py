"""Paired acoustic metric suite, FAD-infinity machinery, and runtime factor.

All paired metrics operate on mask-aligned clip pairs and are symmetric in
their arguments. Conventions (mel config, band edges, MRSTFT resolutions, the
built-in embedding) are fixed here so goldens are reproducible; they are desk
conventions, not attempts to match any external toolkit bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np
from scipy.linalg import sqrtm

MEL_BANDS = 64
MEL_WINDOW = 1024
MEL_HOP = 256
LOG_FLOOR = 1e-5
RMS_FLOOR_DB = -80.0
FLUX_BAND_EDGES = {"low": (0.0, 150.0), "mid": (150.0, 2000.0), "high": (2000.0, np.inf)}
MRSTFT_WINDOWS = (256, 512, 1024)


@dataclass
class ClipPair:
    """Mask-aligned generated/reference pair; lengths equal after alignment."""

    generated: np.ndarray
    reference: np.ndarray
    sample_rate: float

    def __post_init__(self):
        self.generated = np.asarray(self.generated, dtype=np.float64)
        self.reference = np.asarray(self.reference, dtype=np.float64)
        if self.generated.shape != self.reference.shape:
            raise ValueError("pair lengths differ; align with make_pair first")


def make_pair(
    generated: np.ndarray,
    reference: np.ndarray,
    sample_rate: float,
    frame_mask: np.ndarray | None = None,
    hop: int | None = None,
) -> ClipPair:
    """Restrict both clips to the valid-frame span and equalize lengths."""
    reference = np.asarray(reference, dtype=np.float64)
    generated = np.asarray(generated, dtype=np.float64)
    n = len(reference)
    if frame_mask is not None and hop is not None:
        n = min(n, int(np.sum(frame_mask)) * hop)
    ref = reference[:n]
    gen = np.zeros(n)
    gen[: min(n, len(generated))] = generated[:n]
    return ClipPair(gen, ref, sample_rate)


def stft_magnitude(audio: np.ndarray, window: int, hop: int) -> np.ndarray:
    """(frames, bins) magnitude spectrogram, Hann window, zero-padded tail."""
    audio = np.asarray(audio, dtype=np.float64)
    if len(audio) < window:
        audio = np.pad(audio, (0, window - len(audio)))
    n_frames = 1 + (len(audio) - window) // hop
    idx = np.arange(window)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = audio[idx] * np.hanning(window)
    return np.abs(np.fft.rfft(frames, axis=1))


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def mel_filterbank(sample_rate: float, n_fft: int, n_mels: int) -> np.ndarray:
    """(n_mels, bins) triangular filters on the HTK mel scale, peak 1."""
    bins = n_fft // 2 + 1
    freqs = np.arange(bins) * sample_rate / n_fft
    anchors = _mel_to_hz(np.linspace(0.0, _hz_to_mel(sample_rate / 2), n_mels + 2))
    fb = np.zeros((n_mels, bins))
    for i in range(n_mels):
        lo, mid, hi = anchors[i : i + 3]
        up = (freqs - lo) / max(mid - lo, 1e-9)
        down = (hi - freqs) / max(hi - mid, 1e-9)
        fb[i] = np.clip(np.minimum(up, down), 0.0, None)
    return fb


def _log_mel_db(audio: np.ndarray, sample_rate: float) -> np.ndarray:
    mags = stft_magnitude(audio, MEL_WINDOW, MEL_HOP)
    fb = mel_filterbank(sample_rate, MEL_WINDOW, MEL_BANDS)
    return 20.0 * np.log10(np.maximum(mags @ fb.T, LOG_FLOOR))


def mel_mae(pair: ClipPair) -> float:
    """Mean absolute log-mel magnitude difference in dB over the masked span."""
    return float(
        np.mean(np.abs(_log_mel_db(pair.generated, pair.sample_rate) - _log_mel_db(pair.reference, pair.sample_rate)))
    )


def _flux_envelope(audio: np.ndarray, sample_rate: float, band: str) -> np.ndarray:
    mags = stft_magnitude(audio, MEL_WINDOW, MEL_HOP)
    if band != "broad":
        lo, hi = FLUX_BAND_EDGES[band]
        freqs = np.arange(mags.shape[1]) * sample_rate / MEL_WINDOW
        mags = mags[:, (freqs >= lo) & (freqs < hi)]
    diff = np.diff(mags, axis=0, prepend=np.zeros((1, mags.shape[1])))
    return np.maximum(diff, 0.0).sum(axis=1)


def onset_flux_cosine(pair: ClipPair, band: str = "broad") -> float:
    """Cosine similarity of rectified spectral-flux envelopes, in [0, 1].

    Both-zero envelopes score 1.0 by convention; exactly one zero scores 0.0.
    """
    a = _flux_envelope(pair.generated, pair.sample_rate, band)
    b = _flux_envelope(pair.reference, pair.sample_rate, band)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 and nb == 0.0:
        return 1.0
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def _rms_db(audio: np.ndarray) -> float:
    rms = float(np.sqrt(np.mean(audio**2))) if len(audio) else 0.0
    return 20.0 * np.log10(max(rms, 10.0 ** (RMS_FLOOR_DB / 20.0)))


def _crest_db(audio: np.ndarray) -> float:
    peak = float(np.abs(audio).max()) if len(audio) else 0.0
    if peak == 0.0:
        return 0.0
    rms = float(np.sqrt(np.mean(audio**2)))
    return 20.0 * np.log10(peak / max(rms, 1e-12))


def level_metrics(pair: ClipPair) -> dict:
    """Raw and peak-normalized RMS MAE (dB, -80 dB floor) plus crest MAE."""
    out = {"rms_mae_db_raw": abs(_rms_db(pair.generated) - _rms_db(pair.reference))}
    norm = lambda a: a / np.abs(a).max() if np.abs(a).max() > 0 else a
    out["rms_mae_db_peaknorm"] = abs(_rms_db(norm(pair.generated)) - _rms_db(norm(pair.reference)))
    out["crest_mae_db"] = abs(_crest_db(pair.generated) - _crest_db(pair.reference))
    return out


def _centroid_hz(audio: np.ndarray, sample_rate: float) -> float:
    mags = stft_magnitude(audio, MEL_WINDOW, MEL_HOP)
    freqs = np.arange(mags.shape[1]) * sample_rate / MEL_WINDOW
    total = mags.sum()
    if total == 0.0:
        return 0.0
    return float((mags * freqs).sum() / total)


def _band_ratios(audio: np.ndarray, sample_rate: float) -> np.ndarray:
    mags = stft_magnitude(audio, MEL_WINDOW, MEL_HOP)
    freqs = np.arange(mags.shape[1]) * sample_rate / MEL_WINDOW
    energy = mags**2
    ratios = np.zeros(3)
    total = energy.sum()
    if total == 0.0:
        return ratios
    for i, (lo, hi) in enumerate(FLUX_BAND_EDGES.values()):
        ratios[i] = energy[:, (freqs >= lo) & (freqs < hi)].sum() / total
    return ratios


def spectral_metrics(pair: ClipPair) -> dict:
    """Centroid MAE (Hz), 3-band balance L1, MRSTFT log-mag L1, waveform L1."""
    out = {
        "centroid_mae_hz": abs(
            _centroid_hz(pair.generated, pair.sample_rate) - _centroid_hz(pair.reference, pair.sample_rate)
        ),
        "band_balance": float(
            np.abs(
                _band_ratios(pair.generated, pair.sample_rate) - _band_ratios(pair.reference, pair.sample_rate)
            ).sum()
        ),
        "waveform_l1": float(np.mean(np.abs(pair.generated - pair.reference))),
    }
    terms = []
    for window in MRSTFT_WINDOWS:
        hop = window // 4
        lg = np.log(np.maximum(stft_magnitude(pair.generated, window, hop), LOG_FLOOR))
        lr = np.log(np.maximum(stft_magnitude(pair.reference, window, hop), LOG_FLOOR))
        terms.append(np.mean(np.abs(lg - lr)))
    out["mrstft_l1"] = float(np.mean(terms))
    return out


PAIRED_METRICS = (
    "mel_mae_db",
    "flux_cos",
    "flux_low",
    "flux_mid",
    "flux_high",
    "band_balance",
    "centroid_mae_hz",
    "rms_mae_db_raw",
    "rms_mae_db_peaknorm",
    "crest_mae_db",
    "mrstft_l1",
    "waveform_l1",
)

# direction of improvement per paired metric (True = higher is better)
HIGHER_IS_BETTER = {m: m.startswith("flux") for m in PAIRED_METRICS}


def compute_pair_metrics(pair: ClipPair) -> dict:
    """All paired per-clip metrics as one flat dict (see PAIRED_METRICS)."""
    out = {"mel_mae_db": mel_mae(pair)}
    out["flux_cos"] = onset_flux_cosine(pair, "broad")
    for band in ("low", "mid", "high"):
        out[f"flux_{band}"] = onset_flux_cosine(pair, band)
    out.update(level_metrics(pair))
    out.update(spectral_metrics(pair))
    return out


def real_time_factor(generation_time: float, audio_duration: float) -> float:
    if audio_duration <= 0:
        raise ValueError("audio duration must be positive")
    return generation_time / audio_duration


# ---------------------------------------------------------------------------
# FAD-infinity
# ---------------------------------------------------------------------------


class MelStatsEmbedder:
    """Deterministic built-in embedding: per-band log-mel means and stds.

    Stands behind the same interface an external embedding model would use, so
    the FAD machinery is pluggable.
    """

    name = "mel-stats"

    @property
    def dim(self) -> int:
        return 2 * MEL_BANDS

    def embed(self, audio: np.ndarray, sample_rate: float) -> np.ndarray:
        logmel = _log_mel_db(np.asarray(audio, dtype=np.float64), sample_rate)
        return np.concatenate([logmel.mean(axis=0), logmel.std(axis=0)])


def _gaussian_moments(embeddings: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mu = embeddings.mean(axis=0)
    if len(embeddings) < 2:
        return mu, np.zeros((embeddings.shape[1], embeddings.shape[1]))
    return mu, np.cov(embeddings, rowvar=False)


def frechet_audio_distance(gen_embeddings: np.ndarray, ref_embeddings: np.ndarray) -> float:
    """Fréchet distance between Gaussian fits of the two embedding sets."""
    mu1, cov1 = _gaussian_moments(np.asarray(gen_embeddings, dtype=np.float64))
    mu2, cov2 = _gaussian_moments(np.asarray(ref_embeddings, dtype=np.float64))
    diff = float(np.sum((mu1 - mu2) ** 2))
    for ridge in (0.0, 1e-10, 1e-8, 1e-6):
        c1 = cov1 + ridge * np.eye(len(mu1))
        c2 = cov2 + ridge * np.eye(len(mu2))
        root = sqrtm(c1 @ c2)
        if np.iscomplexobj(root):
            if np.abs(root.imag).max() > 1e-6 * max(np.abs(root.real).max(), 1.0):
                continue  # numerically unstable; retry with ridge
            root = root.real
        if np.isfinite(root).all():
            value = diff + float(np.trace(c1) + np.trace(c2) - 2.0 * np.trace(root))
            return max(value, 0.0)
    raise FloatingPointError("matrix square root failed even with ridge regularization")


def fad_infinity(
    gen_embeddings: np.ndarray,
    ref_embeddings: np.ndarray,
    runs: int = 8,
    seed: int = 0,
    n_sizes: int = 5,
) -> tuple[float, float]:
    """Extrapolate FAD to infinite sample size via least squares on 1/n.

    Per run, FAD is computed at a ladder of subsample sizes (log-spaced from
    25% to 100% of the smaller set) and fit against 1/n; fad_inf is the mean
    intercept over runs and r2 the coefficient of determination of the pooled
    fit (zero-residual fits score 1.0 by convention).
    """
    gen = np.asarray(gen_embeddings, dtype=np.float64)
    ref = np.asarray(ref_embeddings, dtype=np.float64)
    n = min(len(gen), len(ref))
    if n < 4:
        raise ValueError("need at least 4 embeddings per set")
    sizes = np.unique(np.round(np.geomspace(max(2, n // 4), n, n_sizes)).astype(int))
    intercepts = []
    points_x, points_y = [], []
    for run in range(runs):
        rng = np.random.default_rng(seed + run)
        xs, ys = [], []
        for size in sizes:
            gi = rng.choice(len(gen), size=size, replace=False)
            ri = rng.choice(len(ref), size=size, replace=False)
            xs.append(1.0 / size)
            ys.append(frechet_audio_distance(gen[gi], ref[ri]))
        slope, intercept = np.polyfit(xs, ys, 1)
        intercepts.append(intercept)
        points_x.extend(xs)
        points_y.extend(ys)
    x = np.asarray(points_x)
    y = np.asarray(points_y)
    slope, intercept = np.polyfit(x, y, 1)
    ss_res = float(np.sum((y - (slope * x + intercept)) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_res < 1e-20:
        r2 = 1.0
    elif ss_tot <= 0.0:
        r2 = 0.0
    else:
        r2 = 1.0 - ss_res / ss_tot
    return float(np.mean(intercepts)), float(r2)


# ---------------------------------------------------------------------------
# Aggregate rows
# ---------------------------------------------------------------------------


@dataclass
class MetricRow:
    """One system's aggregate over the shared test clips."""

    system: str
    kind: str
    clips: int
    fad_inf: float
    fad_r2: float
    mel_mae_db: float
    flux_cos: float
    flux_low: float
    flux_mid: float
    flux_high: float
    band_balance: float
    centroid_mae_hz: float
    rms_mae_db_raw: float
    rms_mae_db_peaknorm: float
    crest_mae_db: float
    mrstft_l1: float
    waveform_l1: float
    rtf: float

    HEADER = (
        "system,type,clips,fad_inf,fad_r2,mel_mae_db,flux_cos,flux_low,flux_mid,"
        "flux_high,band_balance,centroid_mae_hz,rms_mae_db_raw,rms_mae_db_peaknorm,"
        "crest_mae_db,mrstft_l1,waveform_l1,rtf"
    )

    def validate(self, expected_clips: int) -> None:
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, float) and not np.isfinite(v):
                raise ValueError(f"{self.system}: metric {f.name} is not finite")
        for name in ("flux_cos", "flux_low", "flux_mid", "flux_high"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{self.system}: {name} outside [0, 1]")
        if self.clips != expected_clips:
            raise ValueError(f"{self.system}: clip count {self.clips} != {expected_clips}")

    def as_csv(self) -> str:
        def fmt(v):
            return f"{v:.6f}" if isinstance(v, float) else str(v)

        return ",".join(fmt(getattr(self, f.name)) for f in fields(self))


def aggregate_row(
    system: str,
    kind: str,
    per_clip: list[dict],
    fad_inf: float,
    fad_r2: float,
    rtf: float,
) -> MetricRow:
    means = {m: float(np.mean([c[m] for c in per_clip])) for m in PAIRED_METRICS}
    return MetricRow(system=system, kind=kind, clips=len(per_clip), fad_inf=fad_inf, fad_r2=fad_r2, rtf=rtf, **means)
