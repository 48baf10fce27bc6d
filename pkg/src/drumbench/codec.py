"""Toy frozen codec: lapped orthonormal analysis/synthesis plus greedy RVQ.

The analysis transform is a circularly extended MDCT (sine window, frame
length 2*hop, hop coefficients per frame). With the circular boundary
convention the full analysis operator is orthogonal for any clip of at least
two frames, so synthesis is exactly the adjoint (windowed overlap-add) and
the unquantized round trip is exact. Code vectors live in per-codebook
rank-r output-projection subspaces, mirroring the structure of production
RVQ codecs at desk scale.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.spatial.distance import cdist

FLOAT32_EPS = float(np.finfo(np.float32).eps)


@dataclass(frozen=True)
class CodecConfig:
    sample_rate: int = 16000
    hop: int = 186
    frame_length: int = 372
    latent_dim: int = 186  # D
    n_codebooks: int = 4  # K_rvq
    codebook_size: int = 64  # M
    proj_rank: int = 4  # r
    seed: int = 20240

    def __post_init__(self):
        if self.frame_length != 2 * self.hop:
            raise ValueError("lapped transform requires frame_length == 2*hop")
        if self.latent_dim != self.hop:
            raise ValueError("critical sampling requires latent_dim == hop")
        if self.n_codebooks * self.proj_rank > self.latent_dim:
            raise ValueError("K_rvq * r must not exceed the latent dimension")

    @property
    def frame_rate(self) -> float:
        return self.sample_rate / self.hop

    def to_dict(self) -> dict:
        return {
            "sample_rate": self.sample_rate,
            "hop": self.hop,
            "frame_length": self.frame_length,
            "latent_dim": self.latent_dim,
            "n_codebooks": self.n_codebooks,
            "codebook_size": self.codebook_size,
            "proj_rank": self.proj_rank,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CodecConfig":
        return cls(**d)

    def content_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def n_frames(n_samples: int, cfg: CodecConfig) -> int:
    if n_samples <= 0:
        raise ValueError("audio must be non-empty")
    return -(-n_samples // cfg.hop)  # ceil


@lru_cache(maxsize=8)
def _analysis_matrix(hop: int) -> np.ndarray:
    """(hop, 2*hop) windowed MDCT basis; rows of the per-frame analysis map."""
    m = hop
    n = np.arange(2 * m)
    k = np.arange(m)
    window = np.sin(np.pi * (n + 0.5) / (2 * m))
    phase = np.pi / m * np.outer(k + 0.5, n + 0.5 + m / 2)
    return np.sqrt(2.0 / m) * np.cos(phase) * window


def _frame_indices(n_frames_: int, hop: int) -> np.ndarray:
    total = n_frames_ * hop
    offsets = np.arange(n_frames_)[:, None] * hop
    return (offsets + np.arange(2 * hop)[None, :]) % total


def encode(audio: np.ndarray, cfg: CodecConfig) -> np.ndarray:
    """Frame latents u, shape (T, D) with T = ceil(samples/hop).

    The clip is zero-padded to T*hop samples and treated as circular; frames of
    2*hop samples at hop offsets are windowed and projected onto the MDCT basis.
    """
    audio = np.asarray(audio, dtype=np.float64).reshape(-1)
    t = n_frames(len(audio), cfg)
    padded = np.zeros(t * cfg.hop)
    padded[: len(audio)] = audio
    frames = padded[_frame_indices(t, cfg.hop)]
    return frames @ _analysis_matrix(cfg.hop).T


def decode(y: np.ndarray, cfg: CodecConfig, length: int | None = None) -> np.ndarray:
    """Adjoint synthesis: windowed overlap-add of per-frame basis expansions."""
    y = np.asarray(y, dtype=np.float64)
    t = y.shape[0]
    frames = y @ _analysis_matrix(cfg.hop)
    out = np.zeros(t * cfg.hop)
    np.add.at(out, _frame_indices(t, cfg.hop), frames)
    if length is not None:
        out = out[:length]
    return out


@dataclass
class CodebookStack:
    """Per-codebook output projections W_k (D, r) and code vectors v_{k,m} (r,)."""

    projections: np.ndarray  # (K, D, r), orthonormal columns per k
    codes: np.ndarray  # (K, M, r)
    entries: np.ndarray = field(init=False)  # (K, M, D), e_{k,m} = W_k v_{k,m}

    def __post_init__(self):
        k, d, r = self.projections.shape
        if self.codes.shape[0] != k or self.codes.shape[2] != r:
            raise ValueError("codes shape inconsistent with projections")
        for i in range(k):
            w = self.projections[i]
            if not np.allclose(w.T @ w, np.eye(r), atol=1e-5):
                raise ValueError(f"projection {i} does not have orthonormal columns")
        self.entries = np.einsum("kdr,kmr->kmd", self.projections, self.codes)

    @property
    def n_codebooks(self) -> int:
        return self.projections.shape[0]

    @property
    def latent_dim(self) -> int:
        return self.projections.shape[1]

    def stacked_projections(self) -> np.ndarray:
        """Horizontal stack [W_1 ... W_K], shape (D, K*r)."""
        k, d, r = self.projections.shape
        return self.projections.transpose(1, 0, 2).reshape(d, k * r)

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(self.projections.tobytes())
        h.update(self.codes.tobytes())
        return h.hexdigest()


def random_orthogonal_stack(cfg: CodecConfig, rng: np.random.Generator | None = None) -> np.ndarray:
    """(K, D, r) projections with mutually orthogonal column spaces."""
    rng = rng or np.random.default_rng(cfg.seed)
    d, k, r = cfg.latent_dim, cfg.n_codebooks, cfg.proj_rank
    q, _ = np.linalg.qr(rng.standard_normal((d, k * r)))
    return np.ascontiguousarray(q[:, : k * r].reshape(d, k, r).transpose(1, 0, 2))


def _kmeans(points: np.ndarray, n_clusters: int, rng: np.random.Generator, iters: int = 25) -> np.ndarray:
    """Plain seeded Lloyd iterations; deterministic given inputs."""
    n = len(points)
    if n >= n_clusters:
        centers = points[rng.choice(n, size=n_clusters, replace=False)].copy()
    else:
        centers = np.concatenate(
            [points, rng.standard_normal((n_clusters - n, points.shape[1]))], axis=0
        )
    for _ in range(iters):
        assign = np.argmin(cdist(points, centers, "sqeuclidean"), axis=1)
        for c in range(n_clusters):
            sel = points[assign == c]
            if len(sel):
                centers[c] = sel.mean(axis=0)
    return centers


def build_codebook_stack(train_u: np.ndarray, cfg: CodecConfig) -> CodebookStack:
    """Fit a frozen stack on training frame latents.

    Projections are r-column groups of the top K*r right-singular directions
    of the (uncentered) training frames, so the stack subspace is aligned with
    where the corpus actually lives; code vectors are k-means centers of the
    per-stage residual projections.
    """
    rng = np.random.default_rng(cfg.seed)
    d, k, r, m = cfg.latent_dim, cfg.n_codebooks, cfg.proj_rank, cfg.codebook_size
    gram = train_u.T @ train_u
    eigvals, eigvecs = np.linalg.eigh(gram)
    order = np.argsort(eigvals)[::-1][: k * r]
    dirs = eigvecs[:, order]
    flip = np.sign(dirs[np.argmax(np.abs(dirs), axis=0), np.arange(dirs.shape[1])])
    flip[flip == 0] = 1.0
    dirs = dirs * flip
    projections = np.ascontiguousarray(dirs.reshape(d, k, r).transpose(1, 0, 2))

    codes = np.empty((k, m, r))
    residual = train_u.copy()
    for i in range(k):
        w = projections[i]
        coeffs = residual @ w
        codes[i] = _kmeans(coeffs, m, rng)
        # pin the center nearest the origin to exact zero: a silence code per
        # stage, which also guarantees greedy stages never grow the residual
        codes[i][np.argmin(np.sum(codes[i] ** 2, axis=1))] = 0.0
        chosen = codes[i][np.argmin(cdist(coeffs, codes[i], "sqeuclidean"), axis=1)]
        residual = residual - chosen @ w.T
    return CodebookStack(projections, codes)


def rvq_quantize(u: np.ndarray, stack: CodebookStack) -> tuple[np.ndarray, np.ndarray]:
    """Greedy residual selection over the stack.

    Per stage the entry with minimal Euclidean distance to the running
    residual wins (lowest index on ties); the summed latent accumulates the
    selected entries in stage order.
    """
    u = np.asarray(u, dtype=np.float64)
    t = u.shape[0]
    k = stack.n_codebooks
    q = np.empty((t, k), dtype=np.int64)
    y = np.zeros_like(u)
    residual = u.copy()
    for i in range(k):
        dists = cdist(residual, stack.entries[i], "sqeuclidean")
        q[:, i] = np.argmin(dists, axis=1)
        selected = stack.entries[i][q[:, i]]
        residual -= selected
        y += selected
    return q, y


def codes_to_latent(q: np.ndarray, stack: CodebookStack) -> np.ndarray:
    """Sum of entries at stored indices, in stage order (bit-reproducible)."""
    y = np.zeros((q.shape[0], stack.latent_dim))
    for i in range(stack.n_codebooks):
        y += stack.entries[i][q[:, i]]
    return y


def projection_stack_rank(stack: CodebookStack) -> tuple[int, float]:
    """Numerical rank of [W_1 ... W_K] under s_max * max(m, n) * eps_float32."""
    a = stack.stacked_projections()
    s = np.linalg.svd(a, compute_uv=False)
    if len(s) == 0 or s[0] == 0:
        return 0, 0.0
    tol = float(s[0]) * max(a.shape) * FLOAT32_EPS
    return int(np.sum(s > tol)), tol
