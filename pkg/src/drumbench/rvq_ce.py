"""Training-only codebook cross-entropy on the denoiser's clean estimate.

The current x0 estimate is mapped back through de-standardization and PCA
inversion to a full latent estimate; per codebook the residual against the
*target* selections is scored against all entries by negative Euclidean
distance (no learned temperature) and cross-entropy is taken against the
target labels. Codebooks stay frozen; gradients flow only into the denoiser.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .codec import CodebookStack
from .diffusion import Denoiser, NoiseSchedule, eps_objective, masked_mse
from .pca import PcaBasis


@dataclass(frozen=True)
class AuxLossConfig:
    weight: float = 0.10  # lambda_ce
    enabled: bool = True

    def __post_init__(self):
        if self.weight < 0:
            raise ValueError("lambda_ce must be non-negative")


@dataclass
class LatentMap:
    """Frozen torch copies of the PCA basis and codebook entries."""

    coeff_mean: torch.Tensor  # (K,)
    coeff_std: torch.Tensor  # (K,)
    directions: torch.Tensor  # (D, K)
    mean: torch.Tensor  # (D,)
    entries: torch.Tensor  # (K_rvq, M, D)

    @classmethod
    def from_numpy(cls, basis: PcaBasis, stack: CodebookStack, dtype=torch.float32) -> "LatentMap":
        t = lambda a: torch.as_tensor(a, dtype=dtype)
        return cls(
            t(basis.coeff_mean),
            t(basis.coeff_std),
            t(basis.directions),
            t(basis.mean),
            t(stack.entries),
        )


def x0_to_latent(x0_norm: torch.Tensor, lm: LatentMap) -> torch.Tensor:
    """y_hat = U_K (s * x0 + m) + mu, differentiable in x0."""
    z = x0_norm * lm.coeff_std + lm.coeff_mean
    return z @ lm.directions.T + lm.mean


def residual_at_stage(y_hat: torch.Tensor, q: torch.Tensor, entries: torch.Tensor, k: int) -> torch.Tensor:
    """r_{j,k} = y_hat_j - sum_{k'<k} e_{k', q_{j,k'}}; stages are 1-based."""
    r = y_hat
    for prev in range(k - 1):
        r = r - entries[prev][q[..., prev]]
    return r


def stage_logits(residual: torch.Tensor, entries_k: torch.Tensor) -> torch.Tensor:
    """Negative Euclidean distances to every entry of one codebook."""
    if residual.dim() == 2:
        return -torch.cdist(residual, entries_k)
    return -torch.cdist(residual, entries_k.expand(residual.shape[0], -1, -1))


def codebook_cross_entropy(
    y_hat: torch.Tensor,  # (B, T, D)
    q: torch.Tensor,  # (B, T, K_rvq) target labels
    entries: torch.Tensor,  # (K_rvq, M, D), frozen
    valid: torch.Tensor,  # (B, T)
) -> torch.Tensor:
    """Mean cross-entropy over (valid frame, codebook) pairs."""
    entries = entries.detach()
    n_codebooks = entries.shape[0]
    residual = y_hat
    total = y_hat.new_zeros(())
    flat_valid = valid.reshape(-1)
    for k in range(n_codebooks):
        logits = -torch.cdist(residual, entries[k].expand(residual.shape[0], -1, -1))
        labels = q[..., k]
        ce = F.cross_entropy(
            logits.reshape(-1, logits.shape[-1])[flat_valid],
            labels.reshape(-1)[flat_valid],
            reduction="sum",
        )
        total = total + ce
        residual = residual - entries[k][labels]
    return total / (valid.sum() * n_codebooks)


def combined_loss(
    model: Denoiser,
    x0: torch.Tensor,
    h: torch.Tensor,
    tau: torch.Tensor,
    valid: torch.Tensor,
    q: torch.Tensor,
    schedule: NoiseSchedule,
    lm: LatentMap,
    cfg: AuxLossConfig,
    generator: torch.Generator,
) -> tuple[torch.Tensor, dict]:
    """L = L_eps + lambda_ce * L_ce, with L_ce skipped entirely when disabled.

    The x0 estimate reuses the (n, eps) draw of the diffusion term, so a
    disabled/zero-weight auxiliary is bitwise identical to the plain loss.
    """
    n, eps, x_n, eps_hat = eps_objective(model, x0, h, tau, valid, schedule, generator)
    loss_eps = masked_mse(eps, eps_hat, valid)
    if not cfg.enabled or cfg.weight == 0.0:
        return loss_eps, {"eps": float(loss_eps.detach()), "ce": 0.0}
    ab = torch.as_tensor(schedule.alpha_bar[n.numpy()], dtype=x0.dtype).view(-1, 1, 1)
    x0_hat = (x_n - torch.sqrt(1 - ab) * eps_hat) / torch.sqrt(ab)
    y_hat = x0_to_latent(x0_hat, lm)
    loss_ce = codebook_cross_entropy(y_hat, q, lm.entries, valid)
    return loss_eps + cfg.weight * loss_ce, {
        "eps": float(loss_eps.detach()),
        "ce": float(loss_ce.detach()),
    }
