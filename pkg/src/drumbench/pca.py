"""PCA coordinate system over training-frame summed latents.

Fit accumulates first/second moments in a streamed pass (D x D Gram), so the
frame count never has to fit in one SVD; the basis is frozen after fitting and
applied unchanged to held-out frames.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .codec import FLOAT32_EPS


class PcaFitError(ValueError):
    """Raised for degenerate fits (zero variance, vanishing coefficient std)."""


@dataclass
class PcaBasis:
    mean: np.ndarray  # (D,)
    directions: np.ndarray  # (D, K), orthonormal columns
    singular_values: np.ndarray  # (K,), non-increasing
    explained_variance: float
    coeff_mean: np.ndarray  # (K,)
    coeff_std: np.ndarray  # (K,)
    frame_count: int
    train_only: bool = True

    @property
    def n_components(self) -> int:
        return self.directions.shape[1]

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for a in (self.mean, self.directions, self.singular_values, self.coeff_mean, self.coeff_std):
            h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()


def fit(train_frames: np.ndarray, n_components: int, shard_size: int = 65536) -> PcaBasis:
    """Fit mean, top-K directions, and coefficient statistics on training frames."""
    frames = np.asarray(train_frames, dtype=np.float64)
    n, d = frames.shape
    if n < max(n_components, 1):
        raise PcaFitError(f"need at least {n_components} frames, got {n}")

    total = np.zeros(d)
    gram = np.zeros((d, d))
    for i in range(0, n, shard_size):
        shard = frames[i : i + shard_size]
        total += shard.sum(axis=0)
        gram += shard.T @ shard
    mean = total / n
    cov = gram / n - np.outer(mean, mean)
    cov = (cov + cov.T) / 2

    scale = max(1.0, float(np.trace(gram) / n))
    eigvals, eigvecs = np.linalg.eigh(cov)
    eigvals = np.clip(eigvals[::-1], 0.0, None)
    eigvecs = eigvecs[:, ::-1]
    total_var = float(eigvals.sum())
    if total_var <= 1e-15 * scale:
        raise PcaFitError("training frames have (numerically) zero variance")

    directions = eigvecs[:, :n_components].copy()
    # sign convention: largest-magnitude entry of each column is positive
    if n_components:
        idx = np.argmax(np.abs(directions), axis=0)
        flip = np.sign(directions[idx, np.arange(n_components)])
        flip[flip == 0] = 1.0
        directions *= flip
    singular_values = np.sqrt(eigvals[:n_components] * n)
    explained = float(eigvals[:n_components].sum() / total_var)

    if n_components:
        coeffs = np.concatenate(
            [(frames[i : i + shard_size] - mean) @ directions for i in range(0, n, shard_size)]
        )
        coeff_mean = coeffs.mean(axis=0)
        coeff_std = coeffs.std(axis=0)
        if np.any(coeff_std < 1e-8):
            raise PcaFitError("coefficient std below 1e-8; standardization undefined")
    else:
        coeff_mean = np.zeros(0)
        coeff_std = np.ones(0)

    return PcaBasis(mean, directions, singular_values, explained, coeff_mean, coeff_std, n)


def project(basis: PcaBasis, y: np.ndarray) -> np.ndarray:
    """z = U_K^T (y - mu); works on single frames or (T, D) stacks."""
    return (np.asarray(y) - basis.mean) @ basis.directions


def reconstruct(basis: PcaBasis, z: np.ndarray) -> np.ndarray:
    """y_hat = U_K z + mu."""
    return np.asarray(z) @ basis.directions.T + basis.mean


def standardize(basis: PcaBasis, z: np.ndarray) -> np.ndarray:
    return (np.asarray(z) - basis.coeff_mean) / basis.coeff_std


def destandardize(basis: PcaBasis, z_norm: np.ndarray) -> np.ndarray:
    return np.asarray(z_norm) * basis.coeff_std + basis.coeff_mean


def effective_rank(basis: PcaBasis) -> tuple[int, float]:
    """Count of singular values above s_max * max(frames, dims) * eps_float32."""
    if basis.n_components == 0 or basis.singular_values[0] == 0:
        return 0, 0.0
    tol = float(basis.singular_values[0]) * max(basis.frame_count, len(basis.mean)) * FLOAT32_EPS
    return int(np.sum(basis.singular_values > tol)), tol


def diagnostics(basis: PcaBasis, heldout_frames: np.ndarray) -> dict:
    """Reconstruction-error report over held-out frames."""
    frames = np.asarray(heldout_frames, dtype=np.float64)
    recon = reconstruct(basis, project(basis, frames))
    err = frames - recon
    frame_var = float(np.mean((frames - frames.mean(axis=0)) ** 2))
    rank, tol = effective_rank(basis)
    mse = float(np.mean(err**2))
    return {
        "mse": mse,
        "rmse": float(np.sqrt(mse)),
        "max_abs_error": float(np.abs(err).max()) if err.size else 0.0,
        "frame_variance": frame_var,
        "explained_variance": basis.explained_variance,
        "rank": rank,
        "tolerance": tol,
        "n_frames": int(frames.shape[0]),
    }


def save_basis(path, basis: PcaBasis) -> None:
    np.savez(
        path,
        mean=basis.mean,
        directions=basis.directions,
        singular_values=basis.singular_values,
        explained_variance=np.float64(basis.explained_variance),
        coeff_mean=basis.coeff_mean,
        coeff_std=basis.coeff_std,
        frame_count=np.int64(basis.frame_count),
    )


def load_basis(path) -> PcaBasis:
    with np.load(path) as d:
        return PcaBasis(
            mean=d["mean"],
            directions=d["directions"],
            singular_values=d["singular_values"],
            explained_variance=float(d["explained_variance"]),
            coeff_mean=d["coeff_mean"],
            coeff_std=d["coeff_std"],
            frame_count=int(d["frame_count"]),
        )
