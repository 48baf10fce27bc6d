"""Cache construction: windowing, encoding, quantization, PCA, features.

The cache is a directory of npz blocks plus a JSON manifest with content
hashes. All window arrays are stored window-local: grid slices start at the
window's first 250 Hz cell, audio covers [start, end), and frame times are
relative to the window start. The PCA basis is fit on training-split frames
only; the manifest records a fit hash derived from exactly those windows.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import pca
from .codec import CodebookStack, CodecConfig, build_codebook_stack, encode, rvq_quantize
from .grid import (
    DrumGrid,
    SegmentWindow,
    boundary_onset_filter,
    build_grid,
    frame_mask_for_window,
    metronomic_beats,
    nn_feature_vector,
    segment_windows,
    window_cells,
)
from .synth import Corpus

CACHE_VERSION = 1
GRID_SCHEMA_VERSION = 1
SPLITS = ("train", "val", "test")
DEFAULT_SPLIT_FRACTIONS = (0.78, 0.10, 0.12)


class CacheError(RuntimeError):
    pass


@dataclass
class WindowRecord:
    window_id: str
    source_id: str
    split: str
    start: float
    end: float
    bpm: float
    beat_times: np.ndarray  # (5,) window-local seconds
    grid_numeric: np.ndarray  # (24, T_c) window-local slice
    grid_articulation: np.ndarray  # (8, T_c)
    audio: np.ndarray  # reference samples over [start, end)
    code_indices: np.ndarray  # (T, K_rvq)
    summed_latent: np.ndarray  # (T, D)
    z_norm: np.ndarray  # (T, K)
    frame_mask: np.ndarray  # (T,)
    feature: np.ndarray  # (513,)
    articulation_vocab: int = 4

    ARRAY_FIELDS = (
        "beat_times",
        "grid_numeric",
        "grid_articulation",
        "audio",
        "code_indices",
        "summed_latent",
        "z_norm",
        "frame_mask",
        "feature",
    )

    @property
    def duration(self) -> float:
        return self.end - self.start

    def local_grid(self) -> DrumGrid:
        return DrumGrid(
            self.grid_numeric, self.grid_articulation, bpm=self.bpm,
            articulation_vocab=self.articulation_vocab,
        )

    def local_window(self) -> SegmentWindow:
        return SegmentWindow(0.0, self.duration, self.beat_times, source_id=self.source_id)


@dataclass
class Cache:
    root: Path | None
    manifest: dict
    codec_config: CodecConfig
    stack: CodebookStack
    basis: pca.PcaBasis
    records: dict[str, list[WindowRecord]] = field(default_factory=dict)

    @property
    def sample_rate(self) -> int:
        return self.codec_config.sample_rate

    def split(self, name: str) -> list[WindowRecord]:
        return self.records[name]


def _assign_splits(source_ids: list[str], fractions, seed: int) -> dict[str, str]:
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise CacheError("split fractions must sum to 1")
    rng = np.random.default_rng(seed)
    order = list(rng.permutation(sorted(source_ids)))
    n = len(order)
    n_train = max(1, int(round(fractions[0] * n)))
    n_val = max(1, int(round(fractions[1] * n)))
    n_train = min(n_train, n - 2)
    assignment = {}
    for i, sid in enumerate(order):
        if i < n_train:
            assignment[sid] = "train"
        elif i < n_train + n_val:
            assignment[sid] = "val"
        else:
            assignment[sid] = "test"
    return assignment


def _slice_window(perf_grid, perf_audio, window, sample_rate):
    c0, c1 = window_cells(perf_grid, window)
    s0 = int(round(window.start * sample_rate))
    s1 = int(round(window.end * sample_rate))
    return {
        "grid_numeric": perf_grid.numeric[:, c0:c1].copy(),
        "grid_articulation": perf_grid.articulation[:, c0:c1].copy(),
        "audio": perf_audio[s0:s1].copy(),
        "beat_times": window.beat_times - window.start,
    }


def _fit_train_pca(records: list[WindowRecord], n_components: int) -> pca.PcaBasis:
    """Hard gate: only training-split frames may reach the PCA fit."""
    offenders = [r.window_id for r in records if r.split != "train"]
    if offenders:
        raise CacheError(f"PCA fit attempted with non-train windows: {offenders[:3]}")
    frames = np.concatenate([r.summed_latent for r in records], axis=0)
    return pca.fit(frames, n_components)


def pca_fit_hash(records: list[WindowRecord]) -> str:
    h = hashlib.sha256()
    for r in sorted(records, key=lambda r: r.window_id):
        h.update(r.window_id.encode())
        h.update(r.summed_latent.tobytes())
    return h.hexdigest()


def build_cache(
    corpus: Corpus,
    codec_cfg: CodecConfig,
    n_components: int = 16,
    split_fractions=DEFAULT_SPLIT_FRACTIONS,
    seed: int = 0,
    out_dir=None,
) -> Cache:
    sr = corpus.sample_rate
    if sr != codec_cfg.sample_rate:
        raise CacheError("corpus and codec sample rates differ")
    assignment = _assign_splits([p.source_id for p in corpus.performances], split_fractions, seed)

    # pass 1: window, filter, slice
    pending = []  # (split, source_id, window_index, slices, bpm)
    for perf in corpus.performances:
        grid = build_grid(perf.events, perf.bpm, perf.duration, corpus.spec.articulation_vocab)
        beats = metronomic_beats(perf.bpm, perf.duration)
        for w_idx, window in enumerate(segment_windows(grid, beats, source_id=perf.source_id)):
            s0 = int(round(window.start * sr))
            s1 = int(round(window.end * sr))
            if not boundary_onset_filter(window, grid, perf.audio[s0:s1], sr):
                continue
            sliced = _slice_window(grid, perf.audio, window, sr)
            pending.append((assignment[perf.source_id], perf.source_id, w_idx, window, sliced, perf.bpm))

    if not any(split == "train" for split, *_ in pending):
        raise CacheError("no training windows survived filtering")

    # pass 2: freeze the codec stack on training frames only
    train_u = np.concatenate(
        [encode(item[4]["audio"], codec_cfg) for item in pending if item[0] == "train"], axis=0
    )
    stack = build_codebook_stack(train_u, codec_cfg)

    # pass 3: encode + quantize everything with the frozen stack
    records: dict[str, list[WindowRecord]] = {s: [] for s in SPLITS}
    for split, source_id, w_idx, window, sliced, bpm in pending:
        u = encode(sliced["audio"], codec_cfg)
        q, y = rvq_quantize(u, stack)
        local_window = SegmentWindow(0.0, window.duration, sliced["beat_times"], source_id=source_id)
        mask = frame_mask_for_window(local_window, len(u), codec_cfg.frame_rate)
        record = WindowRecord(
            window_id=f"{source_id}:w{w_idx:03d}",
            source_id=source_id,
            split=split,
            start=window.start,
            end=window.end,
            bpm=bpm,
            beat_times=sliced["beat_times"],
            grid_numeric=sliced["grid_numeric"],
            grid_articulation=sliced["grid_articulation"],
            audio=sliced["audio"],
            code_indices=q,
            summed_latent=y,
            z_norm=np.zeros((len(u), n_components)),  # filled after the PCA fit
            frame_mask=mask,
            feature=np.zeros(513),
            articulation_vocab=corpus.spec.articulation_vocab,
        )
        records[split].append(record)

    # pass 4: PCA on train frames only, then freeze and apply everywhere
    basis = _fit_train_pca(records["train"], n_components)
    for split in SPLITS:
        for r in records[split]:
            r.z_norm = pca.standardize(basis, pca.project(basis, r.summed_latent))
            r.feature = nn_feature_vector(r.local_grid(), r.local_window())

    manifest = {
        "version": CACHE_VERSION,
        "grid_schema_version": GRID_SCHEMA_VERSION,
        "codec": codec_cfg.to_dict(),
        "codec_hash": codec_cfg.content_hash(),
        "stack_hash": stack.content_hash(),
        "pca_hash": basis.content_hash(),
        "pca_components": n_components,
        "pca_fit_hash": pca_fit_hash(records["train"]),
        "corpus_hash": corpus.content_hash(),
        "split_seed": seed,
        "split_fractions": list(split_fractions),
        "splits": {
            s: [
                {
                    "window_id": r.window_id,
                    "source_id": r.source_id,
                    "start": r.start,
                    "end": r.end,
                    "bpm": r.bpm,
                    "articulation_vocab": r.articulation_vocab,
                }
                for r in records[s]
            ]
            for s in SPLITS
        },
    }

    cache = Cache(Path(out_dir) if out_dir else None, manifest, codec_cfg, stack, basis, records)
    if out_dir is not None:
        _write_cache(cache, Path(out_dir))
    return cache


def _records_npz_payload(recs: list[WindowRecord]) -> dict:
    payload = {}
    for i, r in enumerate(recs):
        for name in WindowRecord.ARRAY_FIELDS:
            payload[f"w{i:05d}_{name}"] = getattr(r, name)
    return payload


def _write_cache(cache: Cache, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    np.savez(out / "stack.npz", projections=cache.stack.projections, codes=cache.stack.codes)
    pca.save_basis(out / "pca.npz", cache.basis)
    for split in SPLITS:
        np.savez(out / f"records_{split}.npz", **_records_npz_payload(cache.records[split]))
    files = {}
    for name in ["stack.npz", "pca.npz"] + [f"records_{s}.npz" for s in SPLITS]:
        files[name] = hashlib.sha256((out / name).read_bytes()).hexdigest()
    cache.manifest["files"] = files
    (out / "manifest.json").write_text(json.dumps(cache.manifest, indent=1, sort_keys=True))


def load_cache(root) -> Cache:
    root = Path(root)
    manifest = json.loads((root / "manifest.json").read_text())
    if manifest["version"] != CACHE_VERSION:
        raise CacheError(f"unsupported cache version {manifest['version']}")
    for name, expected in manifest["files"].items():
        actual = hashlib.sha256((root / name).read_bytes()).hexdigest()
        if actual != expected:
            raise CacheError(f"cache file {name} hash mismatch")
    codec_cfg = CodecConfig.from_dict(manifest["codec"])
    with np.load(root / "stack.npz") as d:
        stack = CodebookStack(d["projections"], d["codes"])
    basis = pca.load_basis(root / "pca.npz")
    if stack.content_hash() != manifest["stack_hash"] or basis.content_hash() != manifest["pca_hash"]:
        raise CacheError("stack or basis content hash mismatch")

    records: dict[str, list[WindowRecord]] = {}
    for split in SPLITS:
        metas = manifest["splits"][split]
        records[split] = []
        with np.load(root / f"records_{split}.npz") as blob:
            for i, meta in enumerate(metas):
                arrays = {
                    name: blob[f"w{i:05d}_{name}"] for name in WindowRecord.ARRAY_FIELDS
                }
                records[split].append(
                    WindowRecord(
                        window_id=meta["window_id"],
                        source_id=meta["source_id"],
                        split=split,
                        start=meta["start"],
                        end=meta["end"],
                        bpm=meta["bpm"],
                        articulation_vocab=meta["articulation_vocab"],
                        **arrays,
                    )
                )
    return Cache(root, manifest, codec_cfg, stack, basis, records)
