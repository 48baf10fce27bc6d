"""Comparison systems: direct regressor, symbolic retrieval, ceiling rows.

The regressor shares the conditioning frontend family and the PCA target with
the diffusion model but predicts trajectories deterministically under a Huber
objective; retrieval matches flattened sixteenth-grid features by normalized
dot product against the training split only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .codec import CodebookStack, CodecConfig, codes_to_latent, decode
from .diffusion import _zero_init, seconds_positional_encoding
from .pca import PcaBasis, project, reconstruct


def huber(err, beta: float = 0.25):
    """Smooth-L1: 0.5*e^2/beta inside the knee, |e| - 0.5*beta outside."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    e = torch.as_tensor(err)
    abs_e = e.abs()
    return torch.where(abs_e < beta, 0.5 * e**2 / beta, abs_e - 0.5 * beta)


def huber_loss(pred: torch.Tensor, target: torch.Tensor, valid: torch.Tensor, beta: float = 0.25) -> torch.Tensor:
    """Masked mean Huber over valid frames."""
    per = huber(pred - target, beta) * valid.unsqueeze(-1)
    return per.sum() / (valid.sum() * pred.shape[-1])


@dataclass(frozen=True)
class RegressorConfig:
    target_dim: int = 16
    width: int = 160
    layers: int = 3
    heads: int = 4
    dropout: float = 0.1
    cond_dim: int = 256
    huber_beta: float = 0.25
    seed: int = 1234

    def __post_init__(self):
        if self.huber_beta <= 0:
            raise ValueError("huber_beta must be positive")
        if self.width % self.heads:
            raise ValueError("width must be divisible by heads")

    def to_dict(self) -> dict:
        return self.__dict__.copy()

    @classmethod
    def from_dict(cls, d: dict) -> "RegressorConfig":
        return cls(**d)


class _RegressorBlock(nn.Module):
    def __init__(self, cfg: RegressorConfig):
        super().__init__()
        w = cfg.width
        self.norm1 = nn.LayerNorm(w)
        self.attn = nn.MultiheadAttention(w, cfg.heads, dropout=cfg.dropout, batch_first=True)
        self.norm2 = nn.LayerNorm(w)
        self.ff = nn.Sequential(
            nn.Linear(w, 4 * w), nn.GELU(), nn.Dropout(cfg.dropout), nn.Linear(4 * w, w)
        )
        _zero_init(self.attn.out_proj, self.ff[-1])

    def forward(self, x, pad_mask):
        q = self.norm1(x)
        attn, _ = self.attn(q, q, q, key_padding_mask=pad_mask, need_weights=False)
        x = x + attn
        return x + self.ff(self.norm2(x))


class Regressor(nn.Module):
    """Deterministic conditioning -> normalized-trajectory transformer."""

    def __init__(self, cfg: RegressorConfig):
        super().__init__()
        self.cfg = cfg
        with torch.random.fork_rng():
            torch.manual_seed(cfg.seed)
            self.cond_proj = nn.Linear(cfg.cond_dim, cfg.width)
            self.blocks = nn.ModuleList(_RegressorBlock(cfg) for _ in range(cfg.layers))
            self.out_norm = nn.LayerNorm(cfg.width)
            self.out_proj = nn.Linear(cfg.width, cfg.target_dim)
            _zero_init(self.out_proj)

    def forward(self, h: torch.Tensor, tau: torch.Tensor, valid: torch.Tensor | None = None) -> torch.Tensor:
        x = self.cond_proj(h) + seconds_positional_encoding(tau, self.cfg.width)
        pad_mask = None if valid is None else ~valid
        for block in self.blocks:
            x = block(x, pad_mask)
        return self.out_proj(self.out_norm(x))


def regressor_predict(model: Regressor, h: torch.Tensor, tau: torch.Tensor) -> torch.Tensor:
    """Single-window deterministic prediction, (T, K)."""
    was_training = model.training
    model.eval()
    with torch.no_grad():
        out = model(h.unsqueeze(0), tau.unsqueeze(0))[0]
    if was_training:
        model.train()
    return out


class RetrievalIndex:
    """L2-normalized feature rows over training items with stored code indices."""

    def __init__(self, features: np.ndarray, item_ids: list[str], code_sequences: list[np.ndarray]):
        if len(features) == 0:
            raise ValueError("retrieval index must be non-empty")
        if not (len(features) == len(item_ids) == len(code_sequences)):
            raise ValueError("index arrays must align")
        order = np.argsort(np.asarray(item_ids, dtype=object))
        self.item_ids = [item_ids[i] for i in order]
        self.code_sequences = [np.asarray(code_sequences[i]) for i in order]
        feats = np.asarray(features, dtype=np.float64)[order]
        norms = np.linalg.norm(feats, axis=1, keepdims=True)
        self.features = feats / np.maximum(norms, 1e-12)

    def __len__(self) -> int:
        return len(self.item_ids)

    def query(self, feature: np.ndarray) -> str:
        """Best normalized-dot-product item; ties go to the lowest item id."""
        f = np.asarray(feature, dtype=np.float64)
        f = f / max(np.linalg.norm(f), 1e-12)
        scores = self.features @ f
        return self.item_ids[int(np.argmax(scores))]

    def codes_for(self, item_id: str) -> np.ndarray:
        return self.code_sequences[self.item_ids.index(item_id)]


def nn_retrieve(feature: np.ndarray, index: RetrievalIndex) -> str:
    return index.query(feature)


def ceiling_rows(
    y: np.ndarray,
    q: np.ndarray,
    stack: CodebookStack,
    basis: PcaBasis,
    codec_cfg: CodecConfig,
    length: int,
) -> dict[str, np.ndarray]:
    """Reconstruction ceilings and the source-code-decode sanity row.

    target_codec_recon decodes the stored summed latents; source_code_decode
    decodes the entry sums recomputed from stored indices (bit-identical by
    construction); target_pca_recon decodes the PCA round trip.
    """
    if y is None or q is None:
        raise ValueError("cache record must hold summed latents and code indices")
    return {
        "target_codec_recon": decode(y, codec_cfg, length),
        "target_pca_recon": decode(reconstruct(basis, project(basis, y)), codec_cfg, length),
        "source_code_decode": decode(codes_to_latent(q, stack), codec_cfg, length),
    }
