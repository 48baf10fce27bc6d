"""Seconds-aligned symbolic frontend.

For each codec frame time tau_j, token-centered windows are sampled from the
250 Hz grid at four radii and encoded by per-radius branch encoders (conv stem,
residual dilated blocks, biLSTM center state, layer norm, L2 norm). The four
64-dim branch features concatenate into the 256-channel conditioning row h_j.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .grid import DrumGrid, SegmentWindow


@dataclass(frozen=True)
class FrontendConfig:
    radii: tuple[int, ...] = (0, 22, 41, 55)
    branch_dim: int = 64
    grid_rate: float = 250.0
    conv_channels: int = 32
    n_dilated_blocks: int = 2
    lstm_hidden: int = 32
    stem_stride: int = 8  # applied to non-degenerate windows only
    articulation_vocab: int = 4
    seed: int = 1234

    def __post_init__(self):
        if self.radii[0] != 0 or any(a >= b for a, b in zip(self.radii, self.radii[1:])):
            raise ValueError("radii must be ascending and start at 0")

    @property
    def conditioning_dim(self) -> int:
        return self.branch_dim * len(self.radii)

    @property
    def in_channels(self) -> int:
        return 24 + 8 * self.articulation_vocab

    def to_dict(self) -> dict:
        return {
            "radii": list(self.radii),
            "branch_dim": self.branch_dim,
            "grid_rate": self.grid_rate,
            "conv_channels": self.conv_channels,
            "n_dilated_blocks": self.n_dilated_blocks,
            "lstm_hidden": self.lstm_hidden,
            "stem_stride": self.stem_stride,
            "articulation_vocab": self.articulation_vocab,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FrontendConfig":
        d = dict(d)
        d["radii"] = tuple(d["radii"])
        return cls(**d)


def codec_frame_times(n_frames: int, frame_rate: float, start: float = 0.0) -> np.ndarray:
    """Center-of-frame times: tau_j = start + (j - 1 + 0.5)/frame_rate."""
    if n_frames < 1:
        raise ValueError("need at least one frame")
    return start + (np.arange(n_frames) + 0.5) / frame_rate


def sample_windows(grid: DrumGrid, taus: np.ndarray, radius: int, vocab: int) -> np.ndarray:
    """Local window matrices for every tau at once, shape (T, C, 2*radius+1).

    Velocity lanes are linearly interpolated on the seconds grid, onset counts
    and articulation are nearest-sampled; articulation IDs expand to one-hot
    channels gated by family activity. Out-of-range positions are zero.
    """
    taus = np.asarray(taus, dtype=np.float64)
    offsets = np.arange(-radius, radius + 1) / grid.rate
    pos = taus[:, None] + offsets[None, :]  # (T, L) seconds
    x = pos * grid.rate  # continuous cell coordinate
    t_len, win_len = x.shape
    n_cells = grid.n_cells
    out = np.zeros((t_len, 24 + 8 * vocab, win_len))

    i0 = np.floor(x).astype(np.int64)
    frac = x - i0
    i1 = i0 + 1
    valid0 = (i0 >= 0) & (i0 < n_cells)
    valid1 = (i1 >= 0) & (i1 < n_cells)
    c0 = np.clip(i0, 0, n_cells - 1)
    c1 = np.clip(i1, 0, n_cells - 1)
    for lane in range(16):  # state + onset velocities: linear
        v = grid.numeric[lane]
        out[:, lane] = (1 - frac) * v[c0] * valid0 + frac * v[c1] * valid1

    ir = np.rint(x).astype(np.int64)
    validr = (ir >= 0) & (ir < n_cells)
    cr = np.clip(ir, 0, n_cells - 1)
    for lane in range(16, 24):  # onset counts: nearest
        out[:, lane] = grid.numeric[lane][cr] * validr

    ringing = (grid.numeric[0:8][:, cr] > 0) & validr[None]  # (8, T, L)
    art = grid.articulation[:, cr]  # (8, T, L)
    for f in range(8):
        rows = 24 + f * vocab + art[f]
        hot = ringing[f]
        tt, ll = np.nonzero(hot)
        out[tt, rows[tt, ll], ll] = 1.0
    return out


def sample_window(grid: DrumGrid, tau: float, radius: int, vocab: int | None = None) -> np.ndarray:
    """Single-tau variant, shape (C, 2*radius+1)."""
    vocab = grid.articulation_vocab if vocab is None else vocab
    return sample_windows(grid, np.array([tau]), radius, vocab)[0]


class BranchEncoder(nn.Module):
    """One radius branch: conv stem, residual dilated blocks, biLSTM center state."""

    def __init__(self, cfg: FrontendConfig, window_len: int):
        super().__init__()
        ch = cfg.conv_channels
        stride = cfg.stem_stride if window_len > 1 else 1
        # kernel covers stride+1 cells so no grid cell falls between the taps
        kernel = stride + 1 if stride > 1 else 3
        self.stem = nn.Conv1d(cfg.in_channels, ch, kernel_size=kernel, stride=stride, padding=stride // 2 or 1)
        self.blocks = nn.ModuleList(
            nn.Conv1d(ch, ch, kernel_size=3, padding=2**i, dilation=2**i)
            for i in range(cfg.n_dilated_blocks)
        )
        self.lstm = nn.LSTM(ch, cfg.lstm_hidden, batch_first=True, bidirectional=True)
        self.norm = nn.LayerNorm(2 * cfg.lstm_hidden)
        self.proj = nn.Linear(2 * cfg.lstm_hidden, cfg.branch_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """(B, C, L) window matrices -> (B, branch_dim) unit-norm features."""
        h = torch.relu(self.stem(x))
        for block in self.blocks:
            h = h + torch.relu(block(h))
        seq, _ = self.lstm(h.transpose(1, 2))
        center = seq[:, seq.shape[1] // 2]
        feat = self.proj(self.norm(center))
        return feat / feat.norm(dim=-1, keepdim=True).clamp_min(1e-12)


class SecondsFrontend(nn.Module):
    """Per-radius branch encoders producing the concatenated conditioning rows."""

    def __init__(self, cfg: FrontendConfig):
        super().__init__()
        self.cfg = cfg
        with torch.random.fork_rng():
            torch.manual_seed(cfg.seed)
            self.branches = nn.ModuleList(
                BranchEncoder(cfg, 2 * r + 1) for r in cfg.radii
            )

    def forward(self, branch_inputs: list[torch.Tensor]) -> torch.Tensor:
        """List of (T, C, 2r+1) tensors (one per radius) -> (T, 256)."""
        return torch.cat([b(x) for b, x in zip(self.branches, branch_inputs)], dim=-1)


@dataclass
class ConditioningSequence:
    h: torch.Tensor  # (T, conditioning_dim)
    frame_times: np.ndarray  # (T,) seconds

    def __post_init__(self):
        if np.any(np.diff(self.frame_times) <= 0):
            raise ValueError("frame times must be strictly increasing")


def extract_branch_inputs(
    grid: DrumGrid,
    taus: np.ndarray,
    cfg: FrontendConfig,
    dtype=torch.float32,
) -> list[torch.Tensor]:
    """Precomputable sampling stage; no trainable parameters involved."""
    return [
        torch.as_tensor(sample_windows(grid, taus, r, cfg.articulation_vocab), dtype=dtype)
        for r in cfg.radii
    ]


def build_conditioning(
    grid: DrumGrid,
    window: SegmentWindow,
    frame_rate: float,
    n_frames: int,
    frontend: SecondsFrontend,
) -> ConditioningSequence:
    """Conditioning rows for every codec frame of the window."""
    taus = codec_frame_times(n_frames, frame_rate, start=window.start)
    inputs = extract_branch_inputs(grid, taus, frontend.cfg)
    with torch.no_grad():
        h = frontend(inputs)
    return ConditioningSequence(h, taus)
