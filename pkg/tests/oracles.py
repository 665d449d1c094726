"""Independent brute-force oracles used by the test suite.

These deliberately avoid the library's code paths: exact permutation tests
enumerate every split of the pooled sample, and statistics are recomputed
from first principles.
"""

import itertools

import numpy as np


def welch_t_stat(x, y):
    nx, ny = len(x), len(y)
    vx, vy = np.var(x, ddof=1), np.var(y, ddof=1)
    denom = np.sqrt(vx / nx + vy / ny)
    if denom == 0:
        return 0.0 if np.mean(x) == np.mean(y) else np.inf
    return abs(np.mean(x) - np.mean(y)) / denom


def mwu_stat(x, y):
    """Distance of the rank-sum U from its null mean (two-sided)."""
    u = sum(1 for xi in x for yi in y if xi > yi)
    u += 0.5 * sum(1 for xi in x for yi in y if xi == yi)
    return abs(u - len(x) * len(y) / 2)


def ks_stat(x, y):
    pooled = np.sort(np.concatenate([x, y]))
    xs, ys = np.sort(x), np.sort(y)
    fx = np.searchsorted(xs, pooled, side="right") / len(x)
    fy = np.searchsorted(ys, pooled, side="right") / len(y)
    return float(np.max(np.abs(fx - fy)))


def permutation_pvalue(x, y, statistic):
    """Exact two-sample permutation p-value: enumerate all label splits."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    pooled = np.concatenate([x, y])
    n = len(x)
    total_idx = set(range(len(pooled)))
    observed = statistic(x, y)
    hits = 0
    total = 0
    for combo in itertools.combinations(range(len(pooled)), n):
        xs = pooled[list(combo)]
        ys = pooled[list(sorted(total_idx - set(combo)))]
        if statistic(xs, ys) >= observed - 1e-12:
            hits += 1
        total += 1
    return hits / total


ORACLE_STATISTICS = {
    "welch_t": welch_t_stat,
    "mann_whitney_u": mwu_stat,
    "ks_2samp": ks_stat,
}


def oracle_rejects(x, y, alpha=0.05):
    """Reject decisions per test from the permutation oracle."""
    return {name: permutation_pvalue(x, y, stat) < alpha
            for name, stat in ORACLE_STATISTICS.items()}
