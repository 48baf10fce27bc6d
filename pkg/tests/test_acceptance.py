"""Acceptance suite: one test per criterion, each printing a pass line.

Run with `pytest -v tests/test_acceptance.py` for the per-criterion report;
every tolerance is pinned here. The desk-scale analogs mirror the structure of
the full-scale diagnostics (subspace rank, explained variance, ceiling-row
equalities) rather than their absolute values.
"""

import dataclasses
import json
import math
import time
from pathlib import Path

import numpy as np
import pytest
import torch

from drumbench import pca
from drumbench.baselines import ceiling_rows
from drumbench.cache import build_cache
from drumbench.codec import (
    CodebookStack,
    CodecConfig,
    codes_to_latent,
    projection_stack_rank,
    random_orthogonal_stack,
    rvq_quantize,
)
from drumbench.conditioning import FrontendConfig, SecondsFrontend
from drumbench.diffusion import (
    Denoiser,
    DenoiserConfig,
    cosine_schedule,
    masked_mse,
    q_sample,
    reverse_step,
)
from drumbench.evaluate import run_evaluation
from drumbench.metrics import fad_infinity, frechet_audio_distance, make_pair, mel_mae
from drumbench.render import generate_audio
from drumbench.rvq_ce import AuxLossConfig, LatentMap, combined_loss, residual_at_stage, stage_logits
from drumbench.stats import bootstrap_ci, holm_adjust, sign_flip_exact, sign_flip_test
from drumbench.synth import CorpusSpec, generate_corpus
from drumbench.training import (
    KIND_DIFFUSION,
    KIND_DIFFUSION_CE,
    KIND_REGRESSOR,
    TrainConfig,
    _collate,
    _WindowTensors,
    load_checkpoint,
    train,
)

DESK = CodecConfig()


def report(name: str, started: float, budget: float):
    elapsed = time.perf_counter() - started
    print(f"\nACCEPTANCE {name}: PASS ({elapsed:.1f}s < {budget:.0f}s budget)")
    assert elapsed < budget, f"{name} exceeded its runtime budget"


@pytest.fixture(scope="module")
def accept_cache(tmp_path_factory):
    spec = CorpusSpec(n_performances=16, beats_choices=(8, 12, 16), bpm_range=(96.0, 150.0), seed=7)
    corpus = generate_corpus(spec, DESK.sample_rate)
    return build_cache(corpus, DESK, 16, (0.7, 0.15, 0.15), seed=2,
                       out_dir=tmp_path_factory.mktemp("accept") / "cache")


@pytest.fixture(scope="module")
def wide_test_cache():
    # test-split-heavy cache for the 50-window ceiling criterion
    spec = CorpusSpec(n_performances=30, beats_choices=(8, 12, 16), bpm_range=(96.0, 150.0), seed=9)
    corpus = generate_corpus(spec, DESK.sample_rate)
    return build_cache(corpus, DESK, 16, (0.2, 0.1, 0.7), seed=4)


@pytest.fixture(scope="module")
def accept_checkpoints(accept_cache, tmp_path_factory):
    out = tmp_path_factory.mktemp("accept_ckpt")
    paths = {}
    for kind, epochs in ((KIND_DIFFUSION, 2), (KIND_DIFFUSION_CE, 1), (KIND_REGRESSOR, 1)):
        path = out / f"{kind}.pt"
        train(accept_cache, TrainConfig(kind=kind, epochs=epochs, seed=31), out_path=path)
        paths[kind] = str(path)
    return paths


def test_pca_rank_analog(accept_cache):
    t0 = time.perf_counter()
    # synthetic orthogonal-subspace stack at the desk shape
    stack = CodebookStack(
        random_orthogonal_stack(DESK),
        np.random.default_rng(0).standard_normal((DESK.n_codebooks, DESK.codebook_size, DESK.proj_rank)),
    )
    rank, tol = projection_stack_rank(stack)
    assert rank == 16
    expected_tol = 1.0 * max(DESK.latent_dim, 16) * float(np.finfo(np.float32).eps)
    assert tol == pytest.approx(expected_tol, rel=1e-3)  # s_max == 1 for orthonormal stacks
    # the pipeline-fitted stack shows the same effective rank
    fitted_rank, _ = projection_stack_rank(accept_cache.stack)
    assert fitted_rank == 16
    # K=16 captures all training-frame variance of summed latents
    assert accept_cache.basis.n_components == 16
    assert accept_cache.basis.explained_variance >= 1 - 1e-6
    report("pca-rank-analog", t0, 10.0)


def test_pca_round_trip(accept_cache):
    t0 = time.perf_counter()
    heldout = np.concatenate(
        [r.summed_latent for r in accept_cache.split("val") + accept_cache.split("test")]
    )
    rep = pca.diagnostics(accept_cache.basis, heldout)
    assert rep["mse"] <= 1e-10 * rep["frame_variance"]
    report("pca-round-trip", t0, 10.0)


def test_ceiling_equalities(wide_test_cache):
    t0 = time.perf_counter()
    records = wide_test_cache.split("test")[:50]
    assert len(records) == 50, "criterion is stated over 50 test windows"
    cfg = wide_test_cache.codec_config
    rows_per_metric = {"target_codec_recon": [], "target_pca_recon": [], "source_code_decode": []}
    for r in records:
        waves = ceiling_rows(r.summed_latent, r.code_indices, wide_test_cache.stack,
                             wide_test_cache.basis, cfg, len(r.audio))
        np.testing.assert_array_equal(waves["source_code_decode"], waves["target_codec_recon"])
        assert np.abs(waves["target_pca_recon"] - waves["target_codec_recon"]).max() < 1e-5
        for name, wave in waves.items():
            pair = make_pair(wave, r.audio, cfg.sample_rate, r.frame_mask, cfg.hop)
            rows_per_metric[name].append(mel_mae(pair))
    a, b, c = (np.asarray(rows_per_metric[k]) for k in
               ("target_codec_recon", "target_pca_recon", "source_code_decode"))
    np.testing.assert_array_equal(a, c)  # identical rows, bitwise
    np.testing.assert_allclose(a, b, atol=1e-9)  # identical at reporting precision
    report("ceiling-equalities", t0, 60.0)


def test_diffusion_correctness():
    t0 = time.perf_counter()
    # (a) forward-marginal variance over 10^4 draws
    sched = cosine_schedule(25)
    rng = np.random.default_rng(3)
    for n in (1, 13, 25):
        x_n = q_sample(np.zeros((10_000, 1)), n, rng.standard_normal((10_000, 1)), sched)
        assert np.var(x_n) == pytest.approx(1 - sched.alpha_bar[n], rel=0.03)

    # (b) oracle-denoiser reverse chain recovers x0 within 0.15 RMS at N=25
    g = torch.Generator().manual_seed(5)
    x0 = torch.rand(1, 64, 16, generator=g) * 10 - 5
    x = torch.randn(1, 64, 16, generator=g)
    for n in range(25, 0, -1):
        ab = sched.alpha_bar[n]
        eps_implied = (x - math.sqrt(ab) * x0) / math.sqrt(1 - ab)
        x = reverse_step(x, n, eps_implied, sched, g)
    assert torch.sqrt(torch.mean((x - x0) ** 2)).item() <= 0.15

    # (c) joint frontend+denoiser gradients vs central finite differences
    fe_cfg = FrontendConfig(conv_channels=6, lstm_hidden=5, stem_stride=1, branch_dim=8,
                            radii=(0, 1), seed=13)
    frontend = SecondsFrontend(fe_cfg).double().eval()
    dn_cfg = DenoiserConfig(target_dim=3, width=16, layers=1, heads=2, dropout=0.0,
                            cond_dim=fe_cfg.conditioning_dim, seed=13)
    model = Denoiser(dn_cfg).double().eval()
    gg = torch.Generator().manual_seed(2)
    with torch.no_grad():  # move off the zero-initialized residual point
        for p in model.parameters():
            p.copy_(0.2 * torch.randn(p.shape, generator=gg, dtype=torch.float64))
    branch_inputs = [torch.randn(4, fe_cfg.in_channels, 2 * r + 1, generator=gg).double()
                     for r in fe_cfg.radii]
    x_n = torch.randn(1, 4, 3, generator=gg).double()
    eps = torch.randn(1, 4, 3, generator=gg).double()
    tau = (torch.arange(4).double() * 0.0116 + 0.006).unsqueeze(0)
    valid = torch.ones(1, 4, dtype=torch.bool)
    t_frac = torch.tensor([0.5]).double()

    def loss_fn():
        h = frontend(branch_inputs).unsqueeze(0)
        return masked_mse(eps, model(x_n, t_frac, h, tau, valid), valid)

    loss = loss_fn()
    loss.backward()
    fd_rng = np.random.default_rng(0)
    checked = 0
    for module in (frontend, model):
        for p in module.parameters():
            flat, gflat = p.detach().view(-1), p.grad.view(-1)
            for idx in fd_rng.choice(len(flat), size=min(2, len(flat)), replace=False):
                step = 1e-6
                with torch.no_grad():
                    orig = flat[idx].item()
                    flat[idx] = orig + step
                    plus = loss_fn().item()
                    flat[idx] = orig - step
                    minus = loss_fn().item()
                    flat[idx] = orig
                fd = (plus - minus) / (2 * step)
                grad = gflat[idx].item()
                assert abs(fd - grad) <= 1e-3 * max(abs(fd), abs(grad), 1e-8)
                checked += 1
    assert checked > 40
    report("diffusion-correctness", t0, 120.0)


def test_rvq_ce_correctness(accept_cache):
    t0 = time.perf_counter()
    stack = accept_cache.stack
    entries = torch.as_tensor(stack.entries)
    g = torch.Generator().manual_seed(8)
    y_hat = torch.randn(3, 7, stack.latent_dim, generator=g, dtype=torch.float64) * 2
    q = torch.randint(0, stack.entries.shape[1], (3, 7, stack.n_codebooks), generator=g)

    # logit ordering equals brute-force distance sort on every (frame, codebook)
    for b in range(3):
        for k in range(1, stack.n_codebooks + 1):
            r = residual_at_stage(y_hat[b], q[b], entries, k)
            logits = stage_logits(r, entries[k - 1]).numpy()
            for j in range(7):
                dists = np.linalg.norm(r[j].numpy() - stack.entries[k - 1], axis=1)
                np.testing.assert_array_equal(np.argsort(-logits[j]), np.argsort(dists))

    # residual telescoping identity holds exactly
    for k in range(1, stack.n_codebooks):
        lhs = residual_at_stage(y_hat[0], q[0], entries, k + 1)
        rhs = residual_at_stage(y_hat[0], q[0], entries, k) - entries[k - 1][q[0, :, k - 1]]
        np.testing.assert_array_equal(lhs.numpy(), rhs.numpy())

    # lambda_ce = 0 reduces the objective to the plain eps loss bitwise
    lm = LatentMap.from_numpy(accept_cache.basis, stack)
    model = Denoiser(DenoiserConfig(target_dim=16, width=32, layers=1, heads=2, dropout=0.0, seed=3)).eval()
    rec = accept_cache.split("train")[0]
    x0 = torch.as_tensor(rec.z_norm, dtype=torch.float32).unsqueeze(0)
    h = torch.randn(1, x0.shape[1], 256, generator=g)
    tau = torch.as_tensor(np.arange(x0.shape[1]) * 0.0116, dtype=torch.float32).unsqueeze(0)
    valid = torch.as_tensor(rec.frame_mask).unsqueeze(0)
    qq = torch.as_tensor(rec.code_indices).unsqueeze(0)
    sched = cosine_schedule(50)
    from drumbench.diffusion import eps_loss

    plain = eps_loss(model, x0, h, tau, valid, sched, torch.Generator().manual_seed(17))
    combined, _ = combined_loss(model, x0, h, tau, valid, qq, sched, lm,
                                AuxLossConfig(weight=0.0), torch.Generator().manual_seed(17))
    assert plain.item() == combined.item()
    report("rvq-ce-correctness", t0, 30.0)


@pytest.fixture(scope="module")
def overfit_run(accept_cache, tmp_path_factory):
    # the 8 shortest cached windows keep the 2000-step budget comfortable
    t0 = time.perf_counter()
    train_sorted = sorted(accept_cache.split("train"), key=lambda r: len(r.z_norm))[:8]
    smoke_cache = dataclasses.replace(
        accept_cache, records={"train": train_sorted, "val": train_sorted, "test": []}
    )
    fe_cfg = FrontendConfig(seed=41, articulation_vocab=train_sorted[0].articulation_vocab)
    windows = [_WindowTensors(r, fe_cfg, DESK.frame_rate) for r in train_sorted]
    sched = cosine_schedule(50)

    from drumbench.diffusion import eps_loss

    def eval_eps_loss(frontend, model, draws=16):
        gen = torch.Generator().manual_seed(99)
        losses = []
        with torch.no_grad():
            for _ in range(draws):
                for i in range(0, len(windows), 4):
                    h, x0, tau, valid, _ = _collate(windows[i : i + 4], frontend)
                    losses.append(float(eps_loss(model, x0, h, tau, valid, sched, gen)))
        return float(np.mean(losses))

    init_frontend = SecondsFrontend(fe_cfg).eval()
    init_model = Denoiser(DenoiserConfig(target_dim=16, seed=41)).eval()
    initial = eval_eps_loss(init_frontend, init_model)

    path = tmp_path_factory.mktemp("overfit") / "diffusion.pt"
    # hot overfit rate; production training keeps the 1e-4 default
    cfg = TrainConfig(kind=KIND_DIFFUSION, epochs=1000, max_steps=2000, seed=41, val_interval=200,
                      learning_rate=1e-3)
    train(smoke_cache, cfg, out_path=path)
    ck = load_checkpoint(path)
    final = eval_eps_loss(ck["frontend_module"], ck["model_module"])
    return {
        "initial": initial,
        "final": final,
        "checkpoint": ck,
        "records": train_sorted,
        "elapsed": time.perf_counter() - t0,
        "started": t0,
    }


def test_overfit_smoke(accept_cache, overfit_run):
    t0 = overfit_run["started"]
    assert overfit_run["final"] < 0.25 * overfit_run["initial"], (
        f"eps-loss {overfit_run['final']:.3f} vs initial {overfit_run['initial']:.3f}"
    )
    ck = overfit_run["checkpoint"]
    cfg = accept_cache.codec_config
    sample_mels, ceiling_mels = [], []
    for i, r in enumerate(overfit_run["records"]):
        gen = generate_audio(r.local_grid(), r.local_window(), ck["frontend_module"],
                             ck["model_module"], accept_cache.basis, cfg, 25, 4000 + i, len(r.audio))
        from drumbench.codec import decode

        ceiling = decode(
            pca.reconstruct(accept_cache.basis, pca.project(accept_cache.basis, r.summed_latent)),
            cfg, len(r.audio),
        )
        sample_mels.append(mel_mae(make_pair(gen, r.audio, cfg.sample_rate, r.frame_mask, cfg.hop)))
        ceiling_mels.append(mel_mae(make_pair(ceiling, r.audio, cfg.sample_rate, r.frame_mask, cfg.hop)))
    gap = float(np.mean(sample_mels) - np.mean(ceiling_mels))
    assert gap <= 3.0, f"sample mel {np.mean(sample_mels):.2f} vs ceiling {np.mean(ceiling_mels):.2f}"
    report("overfit-smoke", t0, 900.0)


def test_stats_oracles():
    t0 = time.perf_counter()
    rng = np.random.default_rng(12)
    for _ in range(5):
        d = rng.standard_normal(rng.integers(2, 11))
        assert abs(sign_flip_test(d, samples=2000, seed=3) - sign_flip_exact(d)) <= 3 / np.sqrt(2000)
    np.testing.assert_allclose(holm_adjust([0.01, 0.04]), [0.02, 0.04])
    np.testing.assert_allclose(holm_adjust([0.03, 0.03, 0.03]), [0.09, 0.09, 0.09])
    lo, hi = bootstrap_ci(np.full(25, -1.75), seed=4)
    assert lo == hi == -1.75
    report("stats-oracles", t0, 60.0)


def test_fad_machinery():
    t0 = time.perf_counter()
    rng = np.random.default_rng(21)
    emb = rng.standard_normal((48, 12))
    assert frechet_audio_distance(emb, emb) <= 1e-6
    d = 1.2
    a = rng.standard_normal((20_000, 1))
    b = rng.standard_normal((20_000, 1)) + d
    assert frechet_audio_distance(a, b) == pytest.approx(d**2, rel=0.05)
    fad_inf, r2 = fad_infinity(rng.standard_normal((48, 12)), rng.standard_normal((48, 12)) + 0.4,
                               runs=8, seed=5)
    assert np.isfinite(fad_inf) and np.isfinite(r2)
    report("fad-machinery", t0, 60.0)


def test_end_to_end_determinism(accept_cache, accept_checkpoints, tmp_path):
    t0 = time.perf_counter()
    total_windows = sum(len(accept_cache.split(s)) for s in ("train", "val", "test"))
    assert 40 <= total_windows <= 70  # the "50-window desk cache"
    first = run_evaluation(accept_cache, accept_checkpoints, tmp_path / "run1", eval_seed=77)
    second = run_evaluation(
        accept_cache, accept_checkpoints, tmp_path / "run2", eval_seed=77,
        reuse_timings_from=Path(first["out_dir"]) / "timings.json",
    )
    for name in ("metrics.csv", "per_clip.csv", "contrasts.csv"):
        a = (Path(first["out_dir"]) / name).read_bytes()
        b = (Path(second["out_dir"]) / name).read_bytes()
        assert a == b, f"{name} differs between evaluation runs"
    for row in first["rows"]:
        if row.system.startswith("diffusion"):
            assert row.rtf < 1.0, f"{row.system} RTF {row.rtf:.3f}"
    report("end-to-end-determinism", t0, 600.0)
