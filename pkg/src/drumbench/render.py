"""Shared generation path: conditioning -> trajectory -> latents -> waveform.

The batch evaluator and the HTTP service both call generate_audio, so a given
(grid, steps, seed) produces identical bytes through either surface.
"""

from __future__ import annotations

import numpy as np
import torch

from .baselines import Regressor, regressor_predict
from .codec import CodecConfig, decode, n_frames
from .conditioning import SecondsFrontend, build_conditioning
from .diffusion import Denoiser, sample
from .grid import DrumGrid, SegmentWindow
from .pca import PcaBasis, destandardize, reconstruct


def trajectory_to_audio(
    z_norm: np.ndarray, basis: PcaBasis, codec_cfg: CodecConfig, length: int
) -> np.ndarray:
    """De-standardize, invert PCA, and decode to a waveform of `length` samples."""
    y_hat = reconstruct(basis, destandardize(basis, np.asarray(z_norm, dtype=np.float64)))
    return decode(y_hat, codec_cfg, length)


def conditioning_for_window(
    grid: DrumGrid,
    window: SegmentWindow,
    codec_cfg: CodecConfig,
    frontend: SecondsFrontend,
    length: int,
):
    t = n_frames(length, codec_cfg)
    return build_conditioning(grid, window, codec_cfg.frame_rate, t, frontend)


def generate_audio(
    grid: DrumGrid,
    window: SegmentWindow,
    frontend: SecondsFrontend,
    model: Denoiser,
    basis: PcaBasis,
    codec_cfg: CodecConfig,
    steps: int,
    seed: int,
    length: int | None = None,
) -> np.ndarray:
    """One diffusion sample for one window, as audio."""
    length = int(round(window.duration * codec_cfg.sample_rate)) if length is None else length
    cond = conditioning_for_window(grid, window, codec_cfg, frontend, length)
    generator = torch.Generator().manual_seed(seed)
    tau_t = torch.as_tensor(cond.frame_times, dtype=cond.h.dtype)
    z_norm = sample(model, cond.h, tau_t, steps, generator).numpy()
    return trajectory_to_audio(z_norm, basis, codec_cfg, length)


def generate_regression_audio(
    grid: DrumGrid,
    window: SegmentWindow,
    frontend: SecondsFrontend,
    model: Regressor,
    basis: PcaBasis,
    codec_cfg: CodecConfig,
    length: int | None = None,
) -> np.ndarray:
    """Deterministic regressor prediction for one window, as audio."""
    length = int(round(window.duration * codec_cfg.sample_rate)) if length is None else length
    cond = conditioning_for_window(grid, window, codec_cfg, frontend, length)
    tau_t = torch.as_tensor(cond.frame_times, dtype=cond.h.dtype)
    z_norm = regressor_predict(model, cond.h, tau_t).numpy()
    return trajectory_to_audio(z_norm, basis, codec_cfg, length)
