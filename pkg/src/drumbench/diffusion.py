"""Cosine-schedule DDPM over normalized PCA trajectories.

The denoiser is a Transformer over frames: noised coordinates are projected to
model width, seconds-based positional encoding is added to both the trajectory
stream and the projected conditioning, the schedule position n/N modulates
every block, and each block cross-attends into the conditioning sequence.
Conditioning on the schedule *fraction* keeps one checkpoint consistent across
all supported step counts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

SUPPORTED_STEP_COUNTS = (6, 12, 25, 50)
X0_CLIP = 6.0


@dataclass(frozen=True)
class NoiseSchedule:
    n_steps: int
    alpha_bar: np.ndarray  # (N+1,), alpha_bar[0] == 1

    def __post_init__(self):
        ab = self.alpha_bar
        if ab.shape != (self.n_steps + 1,):
            raise ValueError("alpha_bar must have N+1 entries")
        if ab[0] != 1.0 or np.any(np.diff(ab) >= 0) or np.any(ab <= 0) or np.any(ab > 1):
            raise ValueError("alpha_bar must start at 1 and decrease strictly within (0, 1]")

    @property
    def alphas(self) -> np.ndarray:
        return self.alpha_bar[1:] / self.alpha_bar[:-1]

    @property
    def betas(self) -> np.ndarray:
        return 1.0 - self.alphas


def cosine_schedule(n_steps: int, offset: float = 0.008, floor: float = 1e-5) -> NoiseSchedule:
    """alpha_bar_n = f(n/N)/f(0), f(t) = cos((t+s)/(1+s) * pi/2)^2, s = 0.008."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    t = np.arange(n_steps + 1) / n_steps
    f = np.cos((t + offset) / (1 + offset) * np.pi / 2) ** 2
    alpha_bar = np.clip(f / f[0], floor, None)
    alpha_bar[0] = 1.0
    return NoiseSchedule(n_steps, alpha_bar)


def q_sample(x0, n, eps, schedule: NoiseSchedule):
    """x_n = sqrt(ab_n) x0 + sqrt(1 - ab_n) eps; n is an int or per-example array."""
    n_arr = np.atleast_1d(np.asarray(n))
    if np.any(n_arr < 1) or np.any(n_arr > schedule.n_steps):
        raise ValueError(f"n must lie in [1, {schedule.n_steps}]")
    ab = schedule.alpha_bar[np.asarray(n)]
    if isinstance(x0, torch.Tensor):
        ab = torch.as_tensor(ab, dtype=x0.dtype)
        while ab.dim() < x0.dim():
            ab = ab.unsqueeze(-1)
        return torch.sqrt(ab) * x0 + torch.sqrt(1 - ab) * eps
    ab = np.asarray(ab)
    while ab.ndim < np.ndim(x0):
        ab = ab[..., None]
    return np.sqrt(ab) * x0 + np.sqrt(1 - ab) * eps


def seconds_positional_encoding(
    tau: torch.Tensor, width: int, f_min: float = 0.25, f_max: float = 60.0
) -> torch.Tensor:
    """Sinusoidal encoding on a geometric frequency ladder in physical seconds."""
    half = width // 2
    freqs = f_min * (f_max / f_min) ** (torch.arange(half, dtype=tau.dtype) / max(half - 1, 1))
    angles = 2 * math.pi * tau.unsqueeze(-1) * freqs
    return torch.cat([torch.sin(angles), torch.cos(angles)], dim=-1)


@dataclass(frozen=True)
class DenoiserConfig:
    target_dim: int = 16
    width: int = 128
    layers: int = 3
    heads: int = 4
    dropout: float = 0.1
    cond_dim: int = 256
    seed: int = 1234

    def __post_init__(self):
        if self.width % self.heads:
            raise ValueError("width must be divisible by heads")

    def to_dict(self) -> dict:
        return self.__dict__.copy()

    @classmethod
    def from_dict(cls, d: dict) -> "DenoiserConfig":
        return cls(**d)


def _zero_init(*layers: nn.Linear) -> None:
    # residual branches start at zero (DiT-style), so the stack begins as the
    # identity and the output head begins at eps_hat == 0
    for layer in layers:
        nn.init.zeros_(layer.weight)
        if layer.bias is not None:
            nn.init.zeros_(layer.bias)


class _Block(nn.Module):
    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        w = cfg.width
        self.t_mlp = nn.Sequential(nn.SiLU(), nn.Linear(w, w))
        self.norm1 = nn.LayerNorm(w)
        self.self_attn = nn.MultiheadAttention(w, cfg.heads, dropout=cfg.dropout, batch_first=True)
        self.norm2 = nn.LayerNorm(w)
        self.cross_attn = nn.MultiheadAttention(w, cfg.heads, dropout=cfg.dropout, batch_first=True)
        self.norm3 = nn.LayerNorm(w)
        self.ff = nn.Sequential(
            nn.Linear(w, 4 * w), nn.GELU(), nn.Dropout(cfg.dropout), nn.Linear(4 * w, w)
        )
        _zero_init(self.self_attn.out_proj, self.cross_attn.out_proj, self.ff[-1])

    def forward(self, x, cond, t_emb, pad_mask):
        x = x + self.t_mlp(t_emb).unsqueeze(1)
        q = self.norm1(x)
        attn, _ = self.self_attn(q, q, q, key_padding_mask=pad_mask, need_weights=False)
        x = x + attn
        attn, _ = self.cross_attn(
            self.norm2(x), cond, cond, key_padding_mask=pad_mask, need_weights=False
        )
        x = x + attn
        return x + self.ff(self.norm3(x))


class Denoiser(nn.Module):
    """eps_theta(x_n, n/N, h) over (B, T, K) trajectories."""

    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        self.cfg = cfg
        with torch.random.fork_rng():
            torch.manual_seed(cfg.seed)
            w = cfg.width
            self.in_proj = nn.Linear(cfg.target_dim, w)
            self.cond_proj = nn.Linear(cfg.cond_dim, w)
            self.t_embed = nn.Sequential(nn.Linear(w, w), nn.SiLU(), nn.Linear(w, w))
            self.blocks = nn.ModuleList(_Block(cfg) for _ in range(cfg.layers))
            self.out_norm = nn.LayerNorm(w)
            self.out_proj = nn.Linear(w, cfg.target_dim)
            _zero_init(self.out_proj)

    def _fraction_embedding(self, t_frac: torch.Tensor) -> torch.Tensor:
        half = self.cfg.width // 2
        freqs = torch.exp(
            torch.arange(half, dtype=t_frac.dtype) * (-math.log(1000.0) / max(half - 1, 1))
        )
        ang = t_frac.unsqueeze(-1) * freqs * 1000.0
        return self.t_embed(torch.cat([torch.sin(ang), torch.cos(ang)], dim=-1))

    def forward(
        self,
        x: torch.Tensor,  # (B, T, K)
        t_frac: torch.Tensor,  # (B,) schedule position n/N in (0, 1]
        h: torch.Tensor,  # (B, T, cond_dim)
        tau: torch.Tensor,  # (B, T) frame times, seconds
        valid: torch.Tensor | None = None,  # (B, T) bool
    ) -> torch.Tensor:
        pe = seconds_positional_encoding(tau, self.cfg.width)
        stream = self.in_proj(x) + pe
        cond = self.cond_proj(h) + pe
        t_emb = self._fraction_embedding(t_frac)
        pad_mask = None if valid is None else ~valid
        for block in self.blocks:
            stream = block(stream, cond, t_emb, pad_mask)
        return self.out_proj(self.out_norm(stream))


def eps_objective(
    model: Denoiser,
    x0: torch.Tensor,
    h: torch.Tensor,
    tau: torch.Tensor,
    valid: torch.Tensor,
    schedule: NoiseSchedule,
    generator: torch.Generator,
):
    """Sample (n, eps), run the denoiser, and return per-element pieces.

    Shared by the plain loss and the auxiliary combined loss so both consume
    the RNG identically.
    """
    if not bool(valid.any()):
        raise ValueError("batch has an empty valid mask")
    b = x0.shape[0]
    n = torch.randint(1, schedule.n_steps + 1, (b,), generator=generator)
    eps = torch.randn(x0.shape, generator=generator, dtype=x0.dtype)
    x_n = q_sample(x0, n.numpy(), eps, schedule)
    t_frac = n.to(x0.dtype) / schedule.n_steps
    eps_hat = model(x_n, t_frac, h, tau, valid)
    return n, eps, x_n, eps_hat


def masked_mse(eps: torch.Tensor, eps_hat: torch.Tensor, valid: torch.Tensor) -> torch.Tensor:
    """Mean squared error over valid frames only."""
    diff = (eps - eps_hat) ** 2 * valid.unsqueeze(-1)
    return diff.sum() / (valid.sum() * eps.shape[-1])


def eps_loss(
    model: Denoiser,
    x0: torch.Tensor,
    h: torch.Tensor,
    tau: torch.Tensor,
    valid: torch.Tensor,
    schedule: NoiseSchedule,
    generator: torch.Generator,
) -> torch.Tensor:
    _, eps, _, eps_hat = eps_objective(model, x0, h, tau, valid, schedule, generator)
    return masked_mse(eps, eps_hat, valid)


def reverse_step(
    x_n: torch.Tensor,
    n: int,
    eps_hat: torch.Tensor,
    schedule: NoiseSchedule,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """One DDPM posterior update with x0 clipping; deterministic at n == 1."""
    if not 1 <= n <= schedule.n_steps:
        raise ValueError(f"n must lie in [1, {schedule.n_steps}]")
    ab_n = float(schedule.alpha_bar[n])
    ab_prev = float(schedule.alpha_bar[n - 1])
    alpha_n = ab_n / ab_prev
    beta_n = 1.0 - alpha_n
    x0_hat = (x_n - math.sqrt(1 - ab_n) * eps_hat) / math.sqrt(ab_n)
    x0_hat = x0_hat.clamp(-X0_CLIP, X0_CLIP)
    mean = (
        math.sqrt(ab_prev) * beta_n * x0_hat + math.sqrt(alpha_n) * (1 - ab_prev) * x_n
    ) / (1 - ab_n)
    if n == 1:
        return mean
    var = (1 - ab_prev) / (1 - ab_n) * beta_n
    noise = torch.randn(x_n.shape, generator=generator, dtype=x_n.dtype)
    return mean + math.sqrt(var) * noise


def sample(
    model: Denoiser,
    h: torch.Tensor,  # (T, cond_dim)
    tau: torch.Tensor,  # (T,)
    n_steps: int,
    generator: torch.Generator,
    valid: torch.Tensor | None = None,
) -> torch.Tensor:
    """Reverse loop from Gaussian noise; guidance scale is fixed at 1.0."""
    if n_steps not in SUPPORTED_STEP_COUNTS:
        raise ValueError(f"n_steps must be one of {SUPPORTED_STEP_COUNTS}")
    schedule = cosine_schedule(n_steps)
    t = h.shape[0]
    k = model.cfg.target_dim
    was_training = model.training
    model.eval()
    x = torch.randn((1, t, k), generator=generator, dtype=h.dtype)
    hb, taub = h.unsqueeze(0), tau.unsqueeze(0)
    validb = None if valid is None else valid.unsqueeze(0)
    with torch.no_grad():
        for n in range(n_steps, 0, -1):
            t_frac = torch.full((1,), n / n_steps, dtype=h.dtype)
            eps_hat = model(x, t_frac, hb, taub, validb)
            x = reverse_step(x, n, eps_hat, schedule, generator)
    if was_training:
        model.train()
    return x[0]
