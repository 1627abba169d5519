"""Benchmark metrics: ROUGE-L recall, answer probability, truth ratio, and
the Model Utility / Forget Quality composites.

Truth-ratio aggregation and the composites follow the TOFU benchmark's
published conventions (``max(0, 1 - ratio)`` for utility, a two-sample KS
p-value for forget quality).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

KS_SERIES_TERMS = 100


def lcs_length(a: Sequence, b: Sequence) -> int:
    """Length of the longest common subsequence (O(len(a) * len(b)) DP)."""
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def lcs_lengths(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise LCS lengths for aligned batches ``a[N, la]`` and ``b[N, lb]``."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[0] != b.shape[0]:
        raise ValueError("expected aligned 2-D batches")
    n, lb = b.shape
    a_cols = np.ascontiguousarray(a.T)
    b_cols = np.ascontiguousarray(b.T)
    prev = np.zeros((lb + 1, n), dtype=np.int16)
    for col in a_cols:
        cur = np.zeros_like(prev)
        for j in range(lb):
            # a match never loses to the two skip moves, so one max covers both cases
            np.maximum(prev[j] + (col == b_cols[j]), prev[j + 1], out=cur[j + 1])
            np.maximum(cur[j + 1], cur[j], out=cur[j + 1])
        prev = cur
    return prev[lb].astype(np.int64)


def rouge_l_recall(candidate, reference):
    """``LCS(candidate, reference) / len(reference)``.

    Two sequences give a float.  Two 2-D arrays with the same number of rows
    are scored row by row and give an array.
    """
    if isinstance(candidate, np.ndarray) and isinstance(reference, np.ndarray) \
            and candidate.ndim == 2 and reference.ndim == 2:
        if reference.shape[1] == 0:
            raise ValueError("reference must be non-empty")
        return lcs_lengths(candidate, reference) / reference.shape[1]
    if len(reference) == 0:
        raise ValueError("reference must be non-empty")
    return lcs_length(list(candidate), list(reference)) / len(reference)


def normalized_probability(total_logprob: float, n_tokens: int) -> float:
    """Per-token geometric-mean probability ``exp(total / n)``."""
    if n_tokens < 1:
        raise ValueError("n_tokens must be at least 1")
    return math.exp(total_logprob / n_tokens)


def truth_ratio(paraphrased_prob: float, perturbed_probs: Sequence[float]) -> float:
    """Geometric mean of the perturbed-answer probabilities over the
    paraphrased-answer probability.

    Returns ``+inf`` when the paraphrased probability is zero; callers drop
    those from aggregates (see :func:`aggregate_truth_ratios`).
    """
    probs = np.asarray(perturbed_probs, dtype=np.float64)
    if probs.size == 0:
        raise ValueError("need at least one perturbed answer")
    if (probs < 0).any() or paraphrased_prob < 0:
        raise ValueError("probabilities must be non-negative")
    if paraphrased_prob == 0:
        return math.inf
    if (probs == 0).any():
        return 0.0
    return float(np.exp(np.log(probs).mean()) / paraphrased_prob)


def truth_ratio_utility(ratio: float) -> float:
    """Utility-side transform: ``max(0, 1 - ratio)``."""
    return max(0.0, 1.0 - ratio)


def aggregate_truth_ratios(ratios: Sequence[float]) -> np.ndarray:
    """Finite ratios only; infinite sentinels are dropped with a warning."""
    arr = np.asarray(ratios, dtype=np.float64)
    finite = np.isfinite(arr)
    if not finite.all():
        warnings.warn(
            f"dropping {int((~finite).sum())} truth ratio(s) with zero paraphrased probability",
            RuntimeWarning,
            stacklevel=2,
        )
    return arr[finite]


# ---------------------------------------------------------------------------
# two-sample Kolmogorov-Smirnov
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KSResult:
    statistic: float
    p_value: float


def kolmogorov_sf(lam: float, terms: int = KS_SERIES_TERMS) -> float:
    """Survival function of the Kolmogorov distribution at ``lam``.

    Uses ``2 * sum (-1)^(k-1) exp(-2 k^2 lam^2)`` for lam >= 1 and the
    equivalent theta-function form ``1 - sqrt(2 pi)/lam * sum exp(-(2k-1)^2
    pi^2 / (8 lam^2))`` below, where the alternating series converges slowly.
    Both are truncated at ``terms`` terms.
    """
    if lam < 0.05:
        # the CDF is below 1e-200 here and the theta form's prefactor overflows
        return 1.0
    k = np.arange(1, terms + 1)
    if lam >= 1.0:
        s = 2.0 * np.sum((-1.0) ** (k - 1) * np.exp(-2.0 * k * k * lam * lam))
    else:
        s = 1.0 - math.sqrt(2 * math.pi) / lam * np.sum(
            np.exp(-((2 * k - 1) ** 2) * math.pi**2 / (8 * lam * lam))
        )
    return float(min(1.0, max(0.0, s)))


def ks_two_sample(sample_a: Sequence[float], sample_b: Sequence[float]) -> KSResult:
    """Two-sample KS statistic and asymptotic p-value.

    The statistic is ``sup |ECDF_a - ECDF_b|`` over the pooled sample; the
    p-value evaluates the Kolmogorov distribution at
    ``sqrt(n m / (n + m)) * statistic`` with no small-sample correction.
    """
    a = np.sort(np.asarray(sample_a, dtype=np.float64))
    b = np.sort(np.asarray(sample_b, dtype=np.float64))
    n, m = a.size, b.size
    if n == 0 or m == 0:
        raise ValueError("both samples must be non-empty")
    pooled = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, pooled, side="right") / n
    cdf_b = np.searchsorted(b, pooled, side="right") / m
    stat = float(np.max(np.abs(cdf_a - cdf_b)))
    en = math.sqrt(n * m / (n + m))
    return KSResult(stat, kolmogorov_sf(en * stat))


# ---------------------------------------------------------------------------
# composites
# ---------------------------------------------------------------------------


def harmonic_mean(values: Sequence[float]) -> float:
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("no components")
    if (arr < 0).any():
        raise ValueError("components must be non-negative")
    if (arr == 0).any():
        return 0.0
    return float(arr.size / np.sum(1.0 / arr))


def model_utility(components) -> float:
    """Harmonic mean of utility components; any zero component gives 0.

    ``components`` is a sequence of scores or a sequence of
    :class:`MetricRecord` (each record contributes ROUGE, probability and the
    transformed truth ratio).
    """
    values = []
    for c in components:
        if isinstance(c, MetricRecord):
            values.extend(c.utility_components())
        else:
            values.append(float(c))
    return harmonic_mean(values)


def forget_quality(unlearned_ratios: Sequence[float], reference_ratios: Sequence[float]) -> float:
    """KS p-value between the unlearned and retain-only models' forget-set
    truth ratios.  Higher means harder to tell apart."""
    a = aggregate_truth_ratios(unlearned_ratios)
    b = aggregate_truth_ratios(reference_ratios)
    return ks_two_sample(a, b).p_value


@dataclass(frozen=True)
class MetricRecord:
    split: str
    rouge_l_recall: float
    norm_prob: float
    truth_ratio: float  # mean of the finite per-item ratios
    truth_ratio_utility: float  # mean of max(0, 1 - ratio)

    def __post_init__(self):
        for name in ("rouge_l_recall", "norm_prob", "truth_ratio", "truth_ratio_utility"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if not 0 <= self.rouge_l_recall <= 1 or not 0 <= self.norm_prob <= 1:
            raise ValueError("ROUGE and probability must lie in [0, 1]")
        if self.truth_ratio < 0:
            raise ValueError("truth ratio must be non-negative")

    def utility_components(self) -> list[float]:
        return [self.rouge_l_recall, self.norm_prob, self.truth_ratio_utility]


@dataclass(frozen=True)
class CompositeScores:
    model_utility: float
    forget_quality: float
    log_forget_quality: float

    @classmethod
    def from_values(cls, utility: float, p_value: float) -> "CompositeScores":
        with np.errstate(divide="ignore"):
            log_p = float(np.log(p_value))
        return cls(utility, p_value, log_p)
