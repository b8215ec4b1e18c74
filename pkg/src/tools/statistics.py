"""
Paired significance testing.

One-sided Wilcoxon signed-rank test (alternative: x > y). Zero differences
are dropped; tied absolute differences receive average ranks. For up to
25 pairs the null distribution of the positive rank sum is counted
exactly over all 2^n sign assignments; beyond that a tie-corrected normal
approximation with continuity correction is used.
"""

import logging
from enum import Enum
from typing import Sequence

import numpy as np
from scipy import stats

from ..exceptions import InsufficientDataError, InvalidArgumentError

logger = logging.getLogger(__name__)

MIN_PAIRS = 5
EXACT_LIMIT = 25


class Significance(str, Enum):
    """Significance markers of a p-value."""

    NONE = ""
    P05 = "*"
    P01 = "**"
    P001 = "***"


def signed_rank_counts(doubled_ranks: Sequence[int]) -> np.ndarray:
    """
    Number of sign assignments reaching each positive rank sum.

    Ranks are passed doubled so that average ranks of ties stay integral.
    Entry s of the result counts assignments with 2 * W+ == s.
    """
    total = int(sum(doubled_ranks))
    counts = np.zeros(total + 1, dtype=object)
    counts[0] = 1
    reach = 0
    for r in doubled_ranks:
        r = int(r)
        shifted = counts[: reach + 1].copy()
        counts[r : r + reach + 1] = counts[r : r + reach + 1] + shifted
        reach += r
    return counts


def wilcoxon_one_sided(x: Sequence[float], y: Sequence[float]) -> float:
    """
    p-value of the one-sided Wilcoxon signed-rank test for x > y.

    Args:
        x: Paired scores of the candidate method
        y: Paired scores of the reference method

    Returns:
        p-value in (0, 1]
    """
    xa = np.asarray(x, dtype=np.float64)
    ya = np.asarray(y, dtype=np.float64)
    if xa.shape != ya.shape or xa.ndim != 1:
        raise InvalidArgumentError(f"Paired samples need equal 1D shapes, got {xa.shape} and {ya.shape}")
    d = xa - ya
    d = d[d != 0]
    n = d.size
    if n < MIN_PAIRS:
        raise InsufficientDataError(f"Need at least {MIN_PAIRS} non-zero differences, got {n}")

    ranks = stats.rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())

    if n <= EXACT_LIMIT:
        doubled = np.rint(2 * ranks).astype(int)
        counts = signed_rank_counts(doubled)
        observed = int(round(2 * w_plus))
        tail = int(sum(counts[observed:]))
        p = tail / 2**n
    else:
        _, tie_counts = np.unique(np.abs(d), return_counts=True)
        mean = n * (n + 1) / 4.0
        var = n * (n + 1) * (2 * n + 1) / 24.0 - float(np.sum(tie_counts**3 - tie_counts)) / 48.0
        z = (w_plus - mean - 0.5) / np.sqrt(var)
        p = float(stats.norm.sf(z))
    logger.debug(f"Wilcoxon n={n} W+={w_plus} p={p:.6g}")
    return float(p)


def significance_stars(p: float) -> Significance:
    """Map a p-value to *, ** or *** at 0.05, 0.01 and 0.001."""
    if not 0.0 <= p <= 1.0:
        raise InvalidArgumentError(f"p-value must lie in [0, 1], got {p}")
    if p < 0.001:
        return Significance.P001
    if p < 0.01:
        return Significance.P01
    if p < 0.05:
        return Significance.P05
    return Significance.NONE
