import itertools
import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from ceulab.metrics import (
    CompositeScores,
    MetricRecord,
    aggregate_truth_ratios,
    forget_quality,
    harmonic_mean,
    kolmogorov_sf,
    ks_two_sample,
    lcs_length,
    lcs_lengths,
    model_utility,
    normalized_probability,
    rouge_l_recall,
    truth_ratio,
    truth_ratio_utility,
)

small_seq = st.lists(st.integers(0, 3), max_size=9)


def brute_lcs(a, b):
    """Longest subsequence of ``a`` that is also a subsequence of ``b``."""
    def is_subseq(s, t):
        it = iter(t)
        return all(x in it for x in s)

    for n in range(min(len(a), len(b)), 0, -1):
        if any(is_subseq(s, b) for s in itertools.combinations(a, n)):
            return n
    return 0


# --- ROUGE-L -----------------------------------------------------------------


def test_rouge_examples():
    assert rouge_l_recall([1, 2, 3], [1, 2, 3]) == 1.0
    assert rouge_l_recall([1, 2], [3, 4]) == 0.0
    assert rouge_l_recall(["a", "c"], ["a", "b", "c", "d"]) == 0.5
    with pytest.raises(ValueError):
        rouge_l_recall([1], [])


def test_lcs_against_brute_force_up_to_length_four():
    seqs = [s for n in range(5) for s in itertools.product(range(3), repeat=n)]
    for a in seqs:
        for b in seqs:
            assert lcs_length(a, b) == brute_lcs(a, b)


@given(small_seq, small_seq)
def test_lcs_properties(a, b):
    n = lcs_length(a, b)
    assert n == lcs_length(b, a)
    assert n == lcs_length(a[::-1], b[::-1])
    assert 0 <= n <= min(len(a), len(b))
    if b:
        assert 0.0 <= rouge_l_recall(a, b) <= 1.0
        assert rouge_l_recall(b, b) == 1.0


@given(st.integers(0, 6), st.integers(1, 6), st.integers(1, 20), st.integers(0, 2**32 - 1))
def test_batch_lcs_matches_scalar(la, lb, n, seed):
    rng = np.random.default_rng(seed)
    a = rng.integers(0, 3, size=(n, la))
    b = rng.integers(0, 3, size=(n, lb))
    expected = [lcs_length(list(x), list(y)) for x, y in zip(a, b)]
    np.testing.assert_array_equal(lcs_lengths(a, b), expected)
    np.testing.assert_allclose(rouge_l_recall(a, b), np.array(expected) / lb)


def test_batch_lcs_shape_checks():
    with pytest.raises(ValueError):
        lcs_lengths(np.zeros((2, 3)), np.zeros((3, 3)))
    with pytest.raises(ValueError):
        rouge_l_recall(np.zeros((2, 3)), np.zeros((2, 0)))


# --- probabilities and truth ratio -------------------------------------------


def test_normalized_probability_examples():
    assert normalized_probability(7 * math.log(0.25), 7) == pytest.approx(0.25)
    assert normalized_probability(0.0, 5) == 1.0
    assert normalized_probability(-4.15888308335967, 3) == pytest.approx(0.25, rel=1e-13)
    with pytest.raises(ValueError):
        normalized_probability(0.0, 0)


def test_truth_ratio_examples():
    assert truth_ratio(0.3, [0.3, 0.3, 0.3]) == pytest.approx(1.0)
    assert truth_ratio(0.3, [0.0, 0.0]) == 0.0
    assert truth_ratio(0.4, [0.1, 0.4]) == pytest.approx(0.5, rel=1e-14)
    assert truth_ratio(0.0, [0.2]) == math.inf
    with pytest.raises(ValueError):
        truth_ratio(0.5, [])
    with pytest.raises(ValueError):
        truth_ratio(0.5, [-0.1])


@given(st.floats(1e-6, 1), st.lists(st.floats(1e-6, 1), min_size=1, max_size=5))
def test_truth_ratio_matches_scipy_geometric_mean(para, perturbed):
    expected = stats.gmean(perturbed) / para
    assert truth_ratio(para, perturbed) == pytest.approx(expected, rel=1e-10)


def test_truth_ratio_utility_clips():
    assert truth_ratio_utility(0.25) == 0.75
    assert truth_ratio_utility(3.0) == 0.0


def test_infinite_ratios_are_dropped_with_a_warning():
    with pytest.warns(RuntimeWarning, match="dropping 1"):
        kept = aggregate_truth_ratios([0.5, math.inf, 1.0])
    np.testing.assert_array_equal(kept, [0.5, 1.0])
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        aggregate_truth_ratios([0.5])


# --- KS ----------------------------------------------------------------------


def test_ks_examples():
    same = ks_two_sample([0.1, 0.5, 0.9, 0.3], [0.1, 0.5, 0.9, 0.3])
    assert same.statistic == 0.0 and same.p_value == pytest.approx(1.0)
    apart = ks_two_sample([0, 0, 0, 0], [1, 1, 1, 1])
    assert apart.statistic == 1.0
    with pytest.raises(ValueError):
        ks_two_sample([], [1.0])


@given(
    st.lists(st.floats(0, 10), min_size=1, max_size=60),
    st.lists(st.floats(0, 10), min_size=1, max_size=60),
)
def test_ks_matches_scipy_limiting_distribution(a, b):
    # statistic from scipy; p from the limiting Kolmogorov law at sqrt(nm/(n+m)) * D,
    # i.e. without scipy's finite-sample correction
    ours = ks_two_sample(a, b)
    ref = stats.ks_2samp(a, b, method="asymp")
    n, m = len(a), len(b)
    assert ours.statistic == pytest.approx(ref.statistic, abs=1e-12)
    expected_p = stats.kstwobign.sf(math.sqrt(n * m / (n + m)) * ref.statistic)
    assert ours.p_value == pytest.approx(expected_p, abs=1e-10)


@given(st.floats(0.0, 6.0))
def test_kolmogorov_sf_matches_scipy(lam):
    assert kolmogorov_sf(lam) == pytest.approx(stats.kstwobign.sf(lam), abs=1e-12)


def test_kolmogorov_sf_endpoints():
    assert kolmogorov_sf(0.0) == 1.0
    assert kolmogorov_sf(-1.0) == 1.0
    assert kolmogorov_sf(1e-300) == 1.0
    assert kolmogorov_sf(10.0) == pytest.approx(0.0, abs=1e-80)


# --- composites --------------------------------------------------------------


def test_harmonic_mean_examples():
    assert harmonic_mean([0.5, 0.5, 0.5]) == pytest.approx(0.5)
    assert harmonic_mean([0.3, 0.0, 0.9]) == 0.0
    assert harmonic_mean([0.25, 1.0]) == pytest.approx(0.4, rel=1e-15)
    with pytest.raises(ValueError):
        harmonic_mean([])
    with pytest.raises(ValueError):
        harmonic_mean([-0.1, 0.5])


@given(st.lists(st.floats(1e-3, 1), min_size=1, max_size=8))
def test_harmonic_mean_matches_scipy(values):
    assert harmonic_mean(values) == pytest.approx(stats.hmean(values), rel=1e-12)
    assert min(values) - 1e-12 <= harmonic_mean(values) <= max(values) + 1e-12


def test_model_utility_from_records():
    rec = MetricRecord("retain", 0.25, 1.0, 0.0, 1.0)
    assert model_utility([rec]) == pytest.approx(harmonic_mean([0.25, 1.0, 1.0]))
    assert model_utility([0.25, 1.0]) == pytest.approx(0.4)


def test_metric_record_validation():
    with pytest.raises(ValueError):
        MetricRecord("forget", 1.2, 0.5, 0.5, 0.5)
    with pytest.raises(ValueError):
        MetricRecord("forget", 0.5, 0.5, math.nan, 0.5)
    with pytest.raises(ValueError):
        MetricRecord("forget", 0.5, 0.5, -1.0, 0.5)


def test_forget_quality_identity_and_log():
    ratios = np.linspace(0.1, 2.0, 40)
    assert forget_quality(ratios, ratios) == pytest.approx(1.0)
    scores = CompositeScores.from_values(0.6, 0.16)
    assert scores.log_forget_quality == pytest.approx(math.log(0.16))
    assert CompositeScores.from_values(0.6, 0.0).log_forget_quality == -math.inf
