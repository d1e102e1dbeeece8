"""One-sided Wilcoxon signed-rank test for paired residual differences.

The alternative is "differences < 0" (the model's residuals are smaller than
the reference's). Zero differences are dropped, tied magnitudes receive
mid-ranks. The null distribution is evaluated exactly for up to 25 non-tied
differences and by a normal approximation with tie and continuity correction
otherwise.
"""

from __future__ import annotations

import numpy as np
from scipy.stats import norm, rankdata

EXACT_LIMIT = 25


def _exact_cdf_le(w_plus: float, n: int) -> float:
    """P(W+ <= w_plus) under the null, by counting rank subsets.

    counts[s] = number of subsets of {1..n} summing to s; dividing by 2^n
    gives the exact null pmf of the positive-rank sum.
    """
    max_sum = n * (n + 1) // 2
    counts = np.zeros(max_sum + 1)
    counts[0] = 1.0
    for rank in range(1, n + 1):
        counts[rank:] += counts[:-rank].copy()
    pmf = counts / 2.0 ** n
    k = int(np.floor(w_plus + 1e-9))
    return float(pmf[: k + 1].sum())


def wilcoxon_signed_rank_one_sided(d: np.ndarray) -> float:
    """p-value for the alternative that the paired differences are negative."""
    d = np.asarray(d, dtype=np.float64)
    d = d[d != 0.0]
    n = len(d)
    if n == 0:
        return 1.0
    absd = np.abs(d)
    ranks = rankdata(absd)
    w_plus = float(ranks[d > 0].sum())
    _, tie_counts = np.unique(absd, return_counts=True)
    has_ties = np.any(tie_counts > 1)
    if n <= EXACT_LIMIT and not has_ties:
        return _exact_cdf_le(w_plus, n)
    mean = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0
    var -= float(np.sum(tie_counts ** 3 - tie_counts)) / 48.0
    if var <= 0.0:
        return 1.0
    z = (w_plus - mean + 0.5) / np.sqrt(var)
    return float(min(max(norm.cdf(z), 0.0), 1.0))
