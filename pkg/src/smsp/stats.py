"""Statistics used by the experiment reports."""

from __future__ import annotations

import numpy as np
from scipy import stats as _scipy_stats

__all__ = ["mean_std", "permutation_pvalue", "spearman"]


def mean_std(values) -> tuple[float, float]:
    """Mean and sample std (ddof=1); std is 0.0 with fewer than 2 values."""
    arr = np.asarray(values, np.float64)
    if arr.size == 0:
        raise ValueError("no values to aggregate")
    std = float(arr.std(ddof=1)) if arr.size >= 2 else 0.0
    return float(arr.mean()), std


def permutation_pvalue(a, b, n_permutations: int = 5000, seed: int = 0) -> float:
    """One-sided permutation test for mean(a) > mean(b)."""
    a = np.asarray(a, np.float64)
    b = np.asarray(b, np.float64)
    if a.size == 0 or b.size == 0:
        raise ValueError("both samples must be non-empty")
    observed = a.mean() - b.mean()
    pooled = np.concatenate([a, b])
    rng = np.random.default_rng(seed)
    hits = 0
    for _ in range(n_permutations):
        perm = rng.permutation(pooled)
        if perm[: a.size].mean() - perm[a.size :].mean() >= observed:
            hits += 1
    return (hits + 1) / (n_permutations + 1)


def spearman(x, y) -> float:
    """Spearman rank correlation."""
    rho = _scipy_stats.spearmanr(x, y).statistic
    return float(rho)
