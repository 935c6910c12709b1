"""Significance testing over multi-seed trial grids."""

from __future__ import annotations

import itertools
import logging
import math
from typing import NamedTuple, Sequence

import numpy as np
from scipy.stats import norm, rankdata, tiecorrect
from statsmodels.stats.multitest import multipletests

from .errors import InsufficientTrialsError

logger = logging.getLogger(__name__)

MIN_TRIALS = 5
MIN_RESAMPLES = 1000
EXACT_MANN_WHITNEY_MAX_N = 12


class MannWhitneyResult(NamedTuple):
    statistic: float
    pvalue: float
    exact: bool


class HolmResult(NamedTuple):
    reject: np.ndarray
    adjusted: np.ndarray


def median_of_trials(scores: Sequence[float]) -> float:
    if len(scores) == 0:
        raise ValueError("median of an empty trial list")
    return float(np.median(np.asarray(scores, dtype=np.float64)))


def bootstrap_test(
    scores_a: Sequence[float], scores_b: Sequence[float], resamples: int = 10000, seed: int = 0
) -> float:
    """
    One-sided p-value for "a's median beats b's".

    Each side is resampled with replacement; the statistic is the difference of
    medians and ``p = (1 + #{diff <= 0}) / (B + 1)``.

    Args:
        scores_a: Per-seed scores of the method under test
        scores_b: Per-seed scores of the baseline
        resamples: Number of bootstrap draws B
        seed: Seed of the Philox generator that draws the resamples

    Returns:
        p-value in [1 / (B + 1), 1]

    Raises:
        InsufficientTrialsError: Either side has fewer than five trials
        ValueError: Fewer than 1000 resamples
    """
    a = np.asarray(scores_a, dtype=np.float64)
    b = np.asarray(scores_b, dtype=np.float64)
    if len(a) < MIN_TRIALS or len(b) < MIN_TRIALS:
        raise InsufficientTrialsError(f"bootstrap needs >= {MIN_TRIALS} trials per side, got {len(a)} and {len(b)}")
    if resamples < MIN_RESAMPLES:
        raise ValueError(f"bootstrap needs >= {MIN_RESAMPLES} resamples, got {resamples}")
    rng = np.random.Generator(np.random.Philox(seed))
    draws_a = a[rng.integers(0, len(a), size=(resamples, len(a)))]
    draws_b = b[rng.integers(0, len(b), size=(resamples, len(b)))]
    diffs = np.median(draws_a, axis=1) - np.median(draws_b, axis=1)
    return float((1 + np.count_nonzero(diffs <= 0)) / (resamples + 1))


def u_statistic(a: Sequence[float], b: Sequence[float]) -> float:
    """``#{(i, j): a_i > b_j} + 0.5 * #ties``."""
    a = np.asarray(a, dtype=np.float64)[:, None]
    b = np.asarray(b, dtype=np.float64)[None, :]
    return float(np.sum(a > b) + 0.5 * np.sum(a == b))


def mann_whitney_u(a: Sequence[float], b: Sequence[float]) -> MannWhitneyResult:
    """U statistic of ``a`` and a two-sided p-value.

    Small samples (combined n <= 12) enumerate every assignment of the pooled
    mid-ranks to ``a``; larger ones use the tie-corrected normal approximation.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("mann_whitney_u needs two nonempty samples")
    n_a, n_b = len(a), len(b)
    u_a = u_statistic(a, b)
    mean_u = n_a * n_b / 2.0
    ranks = rankdata(np.concatenate([a, b]))

    if n_a + n_b <= EXACT_MANN_WHITNEY_MAX_N:
        offset = n_a * (n_a + 1) / 2.0
        observed = abs(u_a - mean_u)
        extreme = 0
        count = 0
        for subset in itertools.combinations(range(n_a + n_b), n_a):
            u = ranks[list(subset)].sum() - offset
            if abs(u - mean_u) >= observed - 1e-9:
                extreme += 1
            count += 1
        return MannWhitneyResult(u_a, min(1.0, extreme / count), True)

    t = tiecorrect(ranks)
    if t == 0:
        return MannWhitneyResult(u_a, 1.0, False)
    sd = math.sqrt(t * n_a * n_b * (n_a + n_b + 1) / 12.0)
    z = (u_a - mean_u) / sd
    return MannWhitneyResult(u_a, float(min(1.0, 2.0 * norm.sf(abs(z)))), False)


def holm_bonferroni(p_values: Sequence[float], alpha: float = 0.05) -> HolmResult:
    """
    Holm's step-down procedure over one family of hypotheses.

    Args:
        p_values: Raw p-values of the family
        alpha: Family-wise error rate

    Returns:
        HolmResult with reject flags and adjusted p-values, both in input order
    """
    p = np.asarray(p_values, dtype=np.float64)
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    if np.any((p < 0.0) | (p > 1.0)) or np.any(np.isnan(p)):
        raise ValueError("p-values must lie in [0, 1]")
    if p.size == 0:
        return HolmResult(np.zeros(0, dtype=bool), np.zeros(0))
    reject, adjusted, _, _ = multipletests(p, alpha=alpha, method="holm")
    return HolmResult(np.asarray(reject, dtype=bool), np.minimum(np.asarray(adjusted), 1.0))


def stars(p: float, alpha: float = 0.05) -> str:
    """The ``*`` / ``**`` / ``***`` convention for p < alpha / .01 / .001."""
    if p < 0.001:
        return "***"
    if p < 0.01:
        return "**"
    if p < alpha:
        return "*"
    return ""
