"""Training loops for the diffusion denoiser and the direct regressor.

Both models train jointly with their own seconds frontend under AdamW with a
seeded, deterministically shuffled data order. Validation runs every
val_interval epochs (and on the last) with a fixed generator seed so epochs
are compared on identical (n, eps) draws; the best-validation checkpoint is
retained.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass

import numpy as np
import torch

from .baselines import Regressor, RegressorConfig, huber_loss
from .cache import Cache, WindowRecord
from .conditioning import FrontendConfig, SecondsFrontend, codec_frame_times, extract_branch_inputs
from .diffusion import Denoiser, DenoiserConfig, cosine_schedule
from .rvq_ce import AuxLossConfig, LatentMap, combined_loss

CHECKPOINT_VERSION = 1
VAL_GENERATOR_SEED = 91

KIND_DIFFUSION = "diffusion"
KIND_DIFFUSION_CE = "diffusion_ce"
KIND_REGRESSOR = "regressor"


@dataclass(frozen=True)
class TrainConfig:
    kind: str = KIND_DIFFUSION
    epochs: int = 30
    batch_size: int = 4
    learning_rate: float = 1e-4
    weight_decay: float = 1e-4
    lambda_ce: float = 0.10  # used by diffusion_ce only
    schedule_steps: int = 50
    seed: int = 1234
    max_windows: int | None = None  # cap the train split (overfit smokes)
    max_steps: int | None = None  # stop mid-epoch after this many optimizer steps
    val_interval: int = 1  # validate every k-th epoch (and always on the last)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.val_interval < 1:
            raise ValueError("val_interval must be >= 1")
        if self.kind not in (KIND_DIFFUSION, KIND_DIFFUSION_CE, KIND_REGRESSOR):
            raise ValueError(f"unknown training kind {self.kind}")

    def to_dict(self) -> dict:
        return asdict(self)


class _WindowTensors:
    """Precomputed per-window tensors; branch inputs are parameter-free."""

    def __init__(self, record: WindowRecord, fe_cfg: FrontendConfig, frame_rate: float):
        t = len(record.z_norm)
        tau = codec_frame_times(t, frame_rate, start=0.0)
        self.branch_inputs = extract_branch_inputs(record.local_grid(), tau, fe_cfg)
        self.tau = torch.as_tensor(tau, dtype=torch.float32)
        self.x0 = torch.as_tensor(record.z_norm, dtype=torch.float32)
        self.valid = torch.as_tensor(record.frame_mask, dtype=torch.bool)
        self.q = torch.as_tensor(record.code_indices, dtype=torch.long)
        self.n_frames = t


def _collate(windows: list[_WindowTensors], frontend: SecondsFrontend):
    """Run the frontend over concatenated frames, then pad to a batch."""
    joined = [torch.cat([w.branch_inputs[i] for w in windows]) for i in range(len(frontend.cfg.radii))]
    h_all = frontend(joined)
    t_max = max(w.n_frames for w in windows)
    b = len(windows)
    h = h_all.new_zeros((b, t_max, h_all.shape[-1]))
    x0 = h_all.new_zeros((b, t_max, windows[0].x0.shape[-1]))
    tau = h_all.new_zeros((b, t_max))
    valid = torch.zeros((b, t_max), dtype=torch.bool)
    q = torch.zeros((b, t_max, windows[0].q.shape[-1]), dtype=torch.long)
    offset = 0
    for i, w in enumerate(windows):
        t = w.n_frames
        h[i, :t] = h_all[offset : offset + t]
        x0[i, :t] = w.x0
        tau[i, :t] = w.tau
        valid[i, :t] = w.valid
        q[i, :t] = w.q
        offset += t
    return h, x0, tau, valid, q


def _epoch_batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for i in range(0, n, batch_size):
        yield order[i : i + batch_size]


def train(cache: Cache, cfg: TrainConfig, out_path=None, log_path=None) -> dict:
    """Train one model and return the checkpoint payload (also saved if asked)."""
    torch.manual_seed(cfg.seed)
    frame_rate = cache.codec_config.frame_rate
    k = cache.basis.n_components

    fe_cfg = FrontendConfig(seed=cfg.seed, articulation_vocab=cache.split("train")[0].articulation_vocab)
    frontend = SecondsFrontend(fe_cfg)
    if cfg.kind == KIND_REGRESSOR:
        model_cfg = RegressorConfig(target_dim=k, seed=cfg.seed)
        model = Regressor(model_cfg)
    else:
        model_cfg = DenoiserConfig(target_dim=k, seed=cfg.seed)
        model = Denoiser(model_cfg)
    schedule = cosine_schedule(cfg.schedule_steps)
    aux = AuxLossConfig(weight=cfg.lambda_ce if cfg.kind == KIND_DIFFUSION_CE else 0.0,
                        enabled=cfg.kind == KIND_DIFFUSION_CE)
    latent_map = LatentMap.from_numpy(cache.basis, cache.stack)

    train_records = cache.split("train")
    if cfg.max_windows is not None:
        train_records = train_records[: cfg.max_windows]
    val_records = cache.split("val") or train_records
    train_windows = [_WindowTensors(r, fe_cfg, frame_rate) for r in train_records]
    val_windows = [_WindowTensors(r, fe_cfg, frame_rate) for r in val_records]

    params = list(model.parameters()) + list(frontend.parameters())
    optimizer = torch.optim.AdamW(params, lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    loss_generator = torch.Generator().manual_seed(cfg.seed)

    def batch_loss(windows: list[_WindowTensors], generator) -> tuple[torch.Tensor, dict]:
        h, x0, tau, valid, q = _collate(windows, frontend)
        if cfg.kind == KIND_REGRESSOR:
            pred = model(h, tau, valid)
            loss = huber_loss(pred, x0, valid, beta=model_cfg.huber_beta)
            return loss, {"eps": float(loss.detach()), "ce": 0.0}
        return combined_loss(model, x0, h, tau, valid, q, schedule, latent_map, aux, generator)

    history = []
    best = {"val_loss": math.inf, "epoch": -1, "state": None}
    steps_done = 0
    t_start = time.perf_counter()
    for epoch in range(cfg.epochs):
        model.train()
        frontend.train()
        epoch_rng = np.random.default_rng([cfg.seed, epoch])
        train_losses = []
        for batch_idx in _epoch_batches(len(train_windows), cfg.batch_size, epoch_rng):
            optimizer.zero_grad()
            loss, parts = batch_loss([train_windows[i] for i in batch_idx], loss_generator)
            if not torch.isfinite(loss):
                raise RuntimeError(
                    f"non-finite loss at epoch {epoch} step {steps_done}: parts={parts}"
                )
            loss.backward()
            optimizer.step()
            train_losses.append(float(loss.detach()))
            steps_done += 1
            if cfg.max_steps is not None and steps_done >= cfg.max_steps:
                break

        out_of_steps = cfg.max_steps is not None and steps_done >= cfg.max_steps
        last_epoch = epoch == cfg.epochs - 1 or out_of_steps
        entry = {"epoch": epoch, "train_loss": float(np.mean(train_losses)), "val_loss": None}
        if (epoch + 1) % cfg.val_interval == 0 or last_epoch:
            model.eval()
            frontend.eval()
            val_generator = torch.Generator().manual_seed(VAL_GENERATOR_SEED)
            with torch.no_grad():
                val_losses = []
                for i in range(0, len(val_windows), cfg.batch_size):
                    loss, _ = batch_loss(val_windows[i : i + cfg.batch_size], val_generator)
                    val_losses.append(float(loss))
            entry["val_loss"] = float(np.mean(val_losses))
            if entry["val_loss"] < best["val_loss"]:
                best = {
                    "val_loss": entry["val_loss"],
                    "epoch": epoch,
                    "state": {
                        "model": {k_: v.detach().clone() for k_, v in model.state_dict().items()},
                        "frontend": {k_: v.detach().clone() for k_, v in frontend.state_dict().items()},
                    },
                }
        history.append(entry)
        if out_of_steps:
            break

    payload = {
        "version": CHECKPOINT_VERSION,
        "kind": cfg.kind,
        "train_config": cfg.to_dict(),
        "frontend_config": fe_cfg.to_dict(),
        "model_config": model_cfg.to_dict(),
        "state": best["state"],
        "best_epoch": best["epoch"],
        "best_val_loss": best["val_loss"],
        "history": history,
        "schedule_steps": cfg.schedule_steps,
        "pca_hash": cache.basis.content_hash(),
        "codec_hash": cache.codec_config.content_hash(),
        "stack_hash": cache.stack.content_hash(),
        "wall_seconds": time.perf_counter() - t_start,
    }
    if out_path is not None:
        torch.save(payload, out_path)
    if log_path is not None:
        with open(log_path, "w") as f:
            json.dump({"history": history, "best_epoch": best["epoch"]}, f, indent=1)
    return payload


def load_checkpoint(path) -> dict:
    payload = torch.load(path, weights_only=False, map_location="cpu")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('version')}")
    fe_cfg = FrontendConfig.from_dict(payload["frontend_config"])
    frontend = SecondsFrontend(fe_cfg)
    frontend.load_state_dict(payload["state"]["frontend"])
    frontend.eval()
    if payload["kind"] == KIND_REGRESSOR:
        model = Regressor(RegressorConfig.from_dict(payload["model_config"]))
    else:
        model = Denoiser(DenoiserConfig.from_dict(payload["model_config"]))
    model.load_state_dict(payload["state"]["model"])
    model.eval()
    payload["frontend_module"] = frontend
    payload["model_module"] = model
    return payload
