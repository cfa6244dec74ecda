"""Nonparametric statistics: Spearman rank correlation, Wilcoxon signed-rank,
and mean +/- SD summaries.

Both tests use exact small-sample p-values (full permutation / sign
enumeration) because the cohorts this package targets are tiny, where the
usual approximations are untrustworthy. Ties get average ranks throughout.
Exact two-sided p-values count outcomes at least as extreme as observed with
a 1e-12 slack so float noise cannot flip an exact tie.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import stdtr

from .errors import AllZeroDifferences, EmptyInput, TooFewSamples, ZeroVariance

EXACT_SPEARMAN_MAX_N = 10
EXACT_WILCOXON_MAX_N = 20

_TIE_EPS = 1e-12
_CHUNK = 65536


@dataclass(frozen=True)
class CorrelationResult:
    rho: float
    p_value: float
    n: int
    method: str  # "exact-permutation" | "t-approximation"


@dataclass(frozen=True)
class SignedRankResult:
    w_statistic: float
    p_value: float
    n_nonzero: int
    method: str  # "exact" | "normal-approximation"


def average_ranks(values) -> np.ndarray:
    """1-based ranks with ties assigned the average of their positions."""
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(values, kind="stable")
    s = values[order]
    ranks = np.empty(values.size, dtype=np.float64)
    i = 0
    while i < values.size:
        j = i
        while j < values.size and s[j] == s[i]:
            j += 1
        ranks[order[i:j]] = 0.5 * (i + j + 1)  # mean of 1-based positions i+1 .. j
        i = j
    return ranks


def _permutation_chunks(items, chunk_size: int = _CHUNK):
    perms = itertools.permutations(items)
    while True:
        chunk = list(itertools.islice(perms, chunk_size))
        if not chunk:
            return
        yield np.asarray(chunk, dtype=np.float64)


def spearman(x, y) -> CorrelationResult:
    """Spearman rank correlation with a two-sided p-value.

    rho is the Pearson correlation of the average-rank vectors. For n <= 10
    the p-value is exact: the fraction of all n! orderings of y whose |rho|
    reaches the observed one. Larger samples use the t approximation with
    n - 2 degrees of freedom.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size != y.size:
        raise ValueError(f"length mismatch: {x.size} vs {y.size}")
    n = x.size
    if n < 3:
        raise TooFewSamples(f"need n >= 3, got {n}")
    if (x == x[0]).all():
        raise ZeroVariance("all x values tied")
    if (y == y[0]).all():
        raise ZeroVariance("all y values tied")
    rx = average_ranks(x)
    ry = average_ranks(y)
    cx = rx - rx.mean()
    cy = ry - ry.mean()
    norm = math.sqrt(float(cx @ cx) * float(cy @ cy))
    rho = float(cx @ cy) / norm

    if n <= EXACT_SPEARMAN_MAX_N:
        # |rho_perm| >= |rho_obs| compared on the shared scale of rank products.
        observed = abs(float(cx @ cy))
        threshold = observed - _TIE_EPS * norm
        count = 0
        total = math.factorial(n)
        for chunk in _permutation_chunks(ry):
            dots = (chunk - ry.mean()) @ cx
            count += int((np.abs(dots) >= threshold).sum())
        return CorrelationResult(rho=rho, p_value=count / total, n=n, method="exact-permutation")

    if abs(rho) >= 1.0:
        p = math.ulp(0.0)
    else:
        t = rho * math.sqrt((n - 2) / (1.0 - rho * rho))
        p = 2.0 * float(stdtr(n - 2, -abs(t)))
        p = min(1.0, max(p, math.ulp(0.0)))
    return CorrelationResult(rho=rho, p_value=p, n=n, method="t-approximation")


def _sign_assignment_chunks(n: int, chunk_size: int = _CHUNK):
    total = 1 << n
    bit = np.arange(n, dtype=np.uint64)
    for start in range(0, total, chunk_size):
        masks = np.arange(start, min(start + chunk_size, total), dtype=np.uint64)
        yield (masks[:, None] >> bit) & np.uint64(1)


def wilcoxon_signed_rank(x, y) -> SignedRankResult:
    """Wilcoxon signed-rank test on paired samples, two-sided.

    Zero differences are discarded; |differences| get average ranks and
    W = min(positive rank sum, negative rank sum). For up to 20 nonzero
    differences the p-value is exact over all 2^n sign assignments;
    otherwise the normal approximation with tie correction and a 0.5
    continuity correction is used.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size != y.size:
        raise ValueError(f"length mismatch: {x.size} vs {y.size}")
    if x.size == 0:
        raise TooFewSamples("empty samples")
    d = x - y
    d = d[d != 0]
    n = d.size
    if n == 0:
        raise AllZeroDifferences("every paired difference is zero")
    ranks = average_ranks(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    w = min(w_plus, w_minus)
    total_rank = 0.5 * n * (n + 1)

    if n <= EXACT_WILCOXON_MAX_N:
        count = 0
        for bits in _sign_assignment_chunks(n):
            s_plus = bits.astype(np.float64) @ ranks
            stat = np.minimum(s_plus, total_rank - s_plus)
            count += int((stat <= w + _TIE_EPS).sum())
        return SignedRankResult(
            w_statistic=w, p_value=count / (1 << n), n_nonzero=n, method="exact"
        )

    mean = 0.25 * n * (n + 1)
    variance = n * (n + 1) * (2 * n + 1)
    _, tie_counts = np.unique(ranks, return_counts=True)
    variance -= 0.5 * float((tie_counts**3 - tie_counts).sum())
    se = math.sqrt(variance / 24.0)
    z = (w - mean + 0.5) / se  # w <= mean, continuity correction toward the mean
    p = min(1.0, math.erfc(-z / math.sqrt(2.0)))
    return SignedRankResult(
        w_statistic=w, p_value=p, n_nonzero=n, method="normal-approximation"
    )


def summarize(values) -> dict:
    """Mean and sample standard deviation (None when n < 2)."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise EmptyInput("cannot summarize an empty list")
    mean = float(values.mean())
    sd = float(values.std(ddof=1)) if values.size >= 2 else None
    return {"mean": mean, "sd": sd}
