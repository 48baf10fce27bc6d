"""Batch evaluation over the test split.

One MetricRow per available system (ceilings, symbolic render, source-code
decode, retrieval, regressor, diffusion step sweep, diffusion+CE step sweep),
a per-clip long-format CSV, and best-vs-rest contrasts. Generation is bitwise
deterministic given the evaluation seed; wall-clock timings are stored
alongside so a verification re-run can reuse the stored run's timings (RTF is
a property of the stored run, not of the verification pass).
"""

from __future__ import annotations

import json
import logging
import time
from pathlib import Path

import numpy as np

from .baselines import RetrievalIndex, ceiling_rows
from .cache import Cache, WindowRecord
from .codec import codes_to_latent, decode
from .grid import VoiceBank, render_procedural
from .metrics import (
    MelStatsEmbedder,
    MetricRow,
    aggregate_row,
    compute_pair_metrics,
    fad_infinity,
    make_pair,
    real_time_factor,
)
from .stats import best_vs_rest, contrasts_to_csv
from .training import KIND_DIFFUSION, KIND_DIFFUSION_CE, KIND_REGRESSOR, load_checkpoint

logger = logging.getLogger(__name__)

PLAIN_STEPS = (6, 12, 25, 50)
CE_STEPS = (6, 12, 25)
FAD_SEED = 77


def _generation_seed(eval_seed: int, steps: int, window_index: int) -> int:
    return eval_seed * 1_000_003 + steps * 9_973 + window_index


def build_retrieval_index(cache: Cache) -> RetrievalIndex:
    train = cache.split("train")
    return RetrievalIndex(
        np.stack([r.feature for r in train]),
        [r.window_id for r in train],
        [r.code_indices for r in train],
    )


class _SystemRunner:
    """Name, row kind, and a waveform generator for one comparison system."""

    def __init__(self, name: str, kind: str, fn):
        self.name = name
        self.kind = kind
        self.fn = fn  # (record, window_index) -> waveform

    def generate(self, record: WindowRecord, window_index: int) -> tuple[np.ndarray, float]:
        t0 = time.perf_counter()
        wave = self.fn(record, window_index)
        return wave, time.perf_counter() - t0


def _build_runners(cache: Cache, checkpoints: dict, eval_seed: int) -> list[_SystemRunner]:
    from .render import generate_audio, generate_regression_audio

    cfg = cache.codec_config
    voices = VoiceBank(sample_rate=cfg.sample_rate)

    def ceiling(which):
        def fn(record, _):
            return ceiling_rows(
                record.summed_latent, record.code_indices, cache.stack, cache.basis, cfg,
                len(record.audio),
            )[which]

        return fn

    runners = [
        _SystemRunner("target_codec_recon", "ceiling", ceiling("target_codec_recon")),
        _SystemRunner("target_pca_recon", "ceiling", ceiling("target_pca_recon")),
        _SystemRunner(
            "symbolic_render",
            "baseline",
            lambda r, _: render_procedural(r.local_grid(), r.local_window(), cfg.sample_rate, voices),
        ),
        _SystemRunner("source_code_decode", "sanity", ceiling("source_code_decode")),
    ]

    index = build_retrieval_index(cache)

    def retrieve(record, _):
        item = index.query(record.feature)
        return decode(codes_to_latent(index.codes_for(item), cache.stack), cfg, len(record.audio))

    runners.append(_SystemRunner("nn_retrieval", "retrieval", retrieve))

    if KIND_REGRESSOR in checkpoints:

        def regress(record, _, _ck=checkpoints[KIND_REGRESSOR]):
            return generate_regression_audio(
                record.local_grid(), record.local_window(), _ck["frontend_module"],
                _ck["model_module"], cache.basis, cfg, len(record.audio),
            )

        runners.append(_SystemRunner("pca_regressor", "direct", regress))
    else:
        logger.warning("regressor checkpoint missing; row omitted")

    for kind, steps_list, prefix, row_kind in (
        (KIND_DIFFUSION, PLAIN_STEPS, "diffusion", "diffusion"),
        (KIND_DIFFUSION_CE, CE_STEPS, "diffusion_ce", "diffusion+CE"),
    ):
        if kind not in checkpoints:
            logger.warning("%s checkpoint missing; rows omitted", kind)
            continue
        ck = checkpoints[kind]
        for steps in steps_list:
            def diffuse(record, window_index, _ck=ck, _steps=steps):
                return generate_audio(
                    record.local_grid(), record.local_window(), _ck["frontend_module"],
                    _ck["model_module"], cache.basis, cfg, _steps,
                    _generation_seed(eval_seed, _steps, window_index), len(record.audio),
                )

            runners.append(_SystemRunner(f"{prefix}_{steps}", row_kind, diffuse))
    return runners


def run_evaluation(
    cache: Cache,
    checkpoint_paths: dict[str, str],
    out_dir,
    eval_seed: int = 1234,
    reuse_timings_from=None,
) -> dict:
    """Evaluate every available system on the test split and write the CSVs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    checkpoints = {}
    for kind, path in checkpoint_paths.items():
        if path and Path(path).exists():
            checkpoints[kind] = load_checkpoint(path)
        else:
            logger.warning("checkpoint for %s not found at %r", kind, path)

    records = sorted(cache.split("test"), key=lambda r: r.window_id)
    if not records:
        raise ValueError("test split is empty")
    cfg = cache.codec_config
    hop = cfg.hop
    embedder = MelStatsEmbedder()
    runners = _build_runners(cache, checkpoints, eval_seed)

    stored_timings = None
    if reuse_timings_from is not None:
        stored_timings = json.loads(Path(reuse_timings_from).read_text())["generation_seconds"]

    ref_embeddings = []
    masked_refs = []
    for r in records:
        pair_ref = make_pair(r.audio, r.audio, cfg.sample_rate, r.frame_mask, hop)
        masked_refs.append(pair_ref.reference)
        ref_embeddings.append(embedder.embed(pair_ref.reference, cfg.sample_rate))
    ref_embeddings = np.stack(ref_embeddings)

    rows: list[MetricRow] = []
    per_clip_csv = ["window_id,system,metric,value"]
    per_metric: dict[str, dict[str, np.ndarray]] = {}
    timings: dict[str, dict[str, float]] = {}

    for runner in runners:
        clip_metrics = []
        gen_embeddings = []
        timings[runner.name] = {}
        rtfs = []
        for idx, record in enumerate(records):
            wave, seconds = runner.generate(record, idx)
            if stored_timings is not None:
                seconds = stored_timings[runner.name][record.window_id]
            timings[runner.name][record.window_id] = seconds
            pair = make_pair(wave, record.audio, cfg.sample_rate, record.frame_mask, hop)
            m = compute_pair_metrics(pair)
            clip_metrics.append(m)
            gen_embeddings.append(embedder.embed(pair.generated, cfg.sample_rate))
            rtfs.append(real_time_factor(seconds, len(pair.reference) / cfg.sample_rate))
            for metric in sorted(m):
                per_clip_csv.append(f"{record.window_id},{runner.name},{metric},{m[metric]:.9f}")
        fad_inf, fad_r2 = fad_infinity(np.stack(gen_embeddings), ref_embeddings, runs=8, seed=FAD_SEED)
        row = aggregate_row(
            runner.name, runner.kind, clip_metrics, fad_inf, fad_r2, float(np.mean(rtfs))
        )
        row.validate(expected_clips=len(records))
        rows.append(row)
        for metric in clip_metrics[0]:
            per_metric.setdefault(metric, {})[runner.name] = np.array(
                [c[metric] for c in clip_metrics]
            )

    contrasts = best_vs_rest(per_metric, seed=eval_seed) if per_metric else []

    metrics_csv = MetricRow.HEADER + "\n" + "\n".join(r.as_csv() for r in rows) + "\n"
    (out / "metrics.csv").write_text(metrics_csv)
    (out / "per_clip.csv").write_text("\n".join(per_clip_csv) + "\n")
    (out / "contrasts.csv").write_text(contrasts_to_csv(contrasts))
    (out / "timings.json").write_text(
        json.dumps({"eval_seed": eval_seed, "generation_seconds": timings}, indent=1, sort_keys=True)
    )
    return {
        "rows": rows,
        "contrasts": contrasts,
        "out_dir": str(out),
        "systems": [r.system for r in rows],
    }


def export_tables(eval_dir, out_path=None) -> str:
    """Markdown rendering of the aggregate metrics CSV."""
    lines = (Path(eval_dir) / "metrics.csv").read_text().strip().split("\n")
    header = lines[0].split(",")
    table = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    for line in lines[1:]:
        table.append("| " + " | ".join(line.split(",")) + " |")
    text = "\n".join(table) + "\n"
    if out_path is not None:
        Path(out_path).write_text(text)
    return text
