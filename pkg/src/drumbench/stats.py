"""Paired resampling statistics over per-clip metric differences.

Percentile bootstrap CIs, two-sided sign-flip permutation tests with the
add-one convention, Holm step-down adjustment, and the best-vs-rest contrast
builder used by the evaluation exporter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .metrics import HIGHER_IS_BETTER


@dataclass
class PairedContrast:
    metric: str
    system_a: str  # best point-estimate system
    system_b: str
    estimate: float  # mean of per-clip differences (a - b)
    ci_lo: float
    ci_hi: float
    p_value: float
    p_holm: float = float("nan")

    def __post_init__(self):
        if not self.ci_lo <= self.estimate <= self.ci_hi:
            raise ValueError("point estimate must lie inside its CI")


def bootstrap_ci(
    d: np.ndarray, resamples: int = 2000, level: float = 0.95, seed: int = 0
) -> tuple[float, float]:
    """Percentile bootstrap interval for the mean of paired differences."""
    d = np.asarray(d, dtype=np.float64)
    if d.size == 0:
        raise ValueError("differences must be non-empty")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, d.size, size=(resamples, d.size))
    means = d[idx].mean(axis=1)
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(means, [alpha, 1.0 - alpha])
    return float(lo), float(hi)


def sign_flip_test(d: np.ndarray, samples: int = 2000, seed: int = 0) -> float:
    """Two-sided sign-flip permutation p for the mean, add-one convention.

    The observed statistic counts itself (identity flip), so p is never below
    1/(samples+1).
    """
    d = np.asarray(d, dtype=np.float64)
    if d.size == 0:
        raise ValueError("differences must be non-empty")
    observed = abs(d.mean())
    rng = np.random.default_rng(seed)
    signs = rng.choice((-1.0, 1.0), size=(samples, d.size))
    flipped = np.abs((signs * d).mean(axis=1))
    hits = int(np.sum(flipped >= observed - 1e-15))
    return (1 + hits) / (samples + 1)


def sign_flip_exact(d: np.ndarray) -> float:
    """Full 2^n enumeration; the oracle for small n."""
    d = np.asarray(d, dtype=np.float64)
    n = d.size
    if n > 20:
        raise ValueError("exact enumeration is for small n")
    observed = abs(d.mean())
    hits = 0
    for mask in range(2**n):
        signs = 1.0 - 2.0 * ((mask >> np.arange(n)) & 1)
        if abs((signs * d).mean()) >= observed - 1e-15:
            hits += 1
    return hits / 2**n


def holm_adjust(p_values) -> np.ndarray:
    """Step-down Holm adjustment, capped at 1, in the input order."""
    p = np.asarray(p_values, dtype=np.float64)
    if np.any((p < 0) | (p > 1)):
        raise ValueError("p values must lie in [0, 1]")
    m = p.size
    order = np.argsort(p, kind="stable")
    adjusted = np.empty(m)
    running = 0.0
    for rank, idx in enumerate(order):
        running = max(running, (m - rank) * p[idx])
        adjusted[idx] = min(running, 1.0)
    return adjusted


def best_vs_rest(
    per_clip: dict[str, dict[str, np.ndarray]],
    resamples: int = 2000,
    seed: int = 0,
    metrics: tuple[str, ...] | None = None,
) -> list[PairedContrast]:
    """Contrasts of the best point-estimate system against every other.

    `per_clip` maps metric -> {system -> per-clip values over the shared test
    indices}. Direction comes from the metric registry; ties on the point
    estimate resolve to the lexicographically smallest system id. Holm
    adjustment is applied within each metric.
    """
    contrasts: list[PairedContrast] = []
    for metric in metrics or sorted(per_clip):
        systems = per_clip[metric]
        if len(systems) < 2:
            continue
        higher_better = HIGHER_IS_BETTER.get(metric, False)
        point = {s: float(np.mean(v)) for s, v in systems.items()}
        best = min(point, key=lambda s: (-point[s] if higher_better else point[s], s))
        block = []
        for other in sorted(s for s in systems if s != best):
            a, b = np.asarray(systems[best]), np.asarray(systems[other])
            if a.shape != b.shape or a.ndim != 1:
                raise ValueError("per-clip vectors must be 1-D and aligned")
            d = a - b
            lo, hi = bootstrap_ci(d, resamples=resamples, seed=seed)
            est = float(d.mean())
            block.append(
                PairedContrast(
                    metric=metric,
                    system_a=best,
                    system_b=other,
                    estimate=est,
                    ci_lo=min(lo, est),
                    ci_hi=max(hi, est),
                    p_value=sign_flip_test(d, samples=resamples, seed=seed),
                )
            )
        adjusted = holm_adjust([c.p_value for c in block])
        for c, padj in zip(block, adjusted):
            c.p_holm = float(padj)
        contrasts.extend(block)
    return contrasts


CONTRAST_HEADER = "metric,system_a,system_b,estimate,ci_lo,ci_hi,p_value,p_holm"


def contrasts_to_csv(contrasts: list[PairedContrast]) -> str:
    lines = [CONTRAST_HEADER]
    for c in contrasts:
        lines.append(
            f"{c.metric},{c.system_a},{c.system_b},{c.estimate:.6f},"
            f"{c.ci_lo:.6f},{c.ci_hi:.6f},{c.p_value:.6f},{c.p_holm:.6f}"
        )
    return "\n".join(lines) + "\n"
