import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ceulab.csvio import read_csv
from ceulab.grad_analysis import (
    ConfidenceSweep,
    DpoGradSample,
    GrpoGradSample,
    ceu_grad_mag,
    confidence_grid,
    dpo_report,
    dpo_weight,
    ga_grad_mag,
    grpo_coefficient,
    grpo_csv,
    grpo_report,
    grpo_sign_boundary,
    sweep_report,
)

open_unit = st.floats(1e-9, 1 - 1e-9)


@pytest.mark.parametrize("p, ga, ceu", [(0.99, 0.01, 0.99), (0.5, 0.5, 0.5), (0.01, 0.99, 0.01)])
def test_gradient_magnitudes(p, ga, ceu):
    assert ga_grad_mag(p) == pytest.approx(ga, abs=1e-15)
    assert ceu_grad_mag(p) == pytest.approx(ceu, abs=1e-15)


@pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5, math.nan])
def test_magnitudes_reject_closed_endpoints(p):
    with pytest.raises(ValueError):
        ga_grad_mag(p)
    with pytest.raises(ValueError):
        ceu_grad_mag(p)


@given(open_unit)
def test_magnitudes_sum_to_one(p):
    assert ga_grad_mag(p) + ceu_grad_mag(p) == pytest.approx(1.0, abs=1e-15)


@given(open_unit, open_unit)
def test_magnitudes_are_monotone(p, q):
    if p < q:
        assert ga_grad_mag(p) >= ga_grad_mag(q)
        assert ceu_grad_mag(p) <= ceu_grad_mag(q)


def test_dpo_weight_examples():
    assert dpo_weight(DpoGradSample(0.0, 1.0)) == 0.5
    assert dpo_weight(DpoGradSample(-math.inf, 1.0)) == 0.0
    assert dpo_weight(DpoGradSample(2.0, 0.1)) == pytest.approx(0.0880797077977882, rel=1e-13)
    with pytest.raises(ValueError):
        DpoGradSample(0.0, 0.0)


@given(st.floats(-50, 50), st.floats(-50, 50), st.floats(0.01, 5))
def test_dpo_weight_monotone_in_gap(a, b, beta):
    lo, hi = sorted((a, b))
    assert dpo_weight(DpoGradSample(lo, beta)) <= dpo_weight(DpoGradSample(hi, beta))


def test_grpo_coefficient_examples():
    assert grpo_coefficient(GrpoGradSample(0.0, 0.04, 1.0)) == 0.0
    assert grpo_coefficient(GrpoGradSample(-1.0, 0.04, 1.0)) == -1.0
    assert grpo_coefficient(GrpoGradSample(-0.5, 0.04, 2.0)) == pytest.approx(-0.46, abs=1e-15)
    with pytest.raises(ValueError):
        GrpoGradSample(0.0, -0.1, 1.0)
    with pytest.raises(ValueError):
        GrpoGradSample(0.0, 0.1, 0.0)


@given(st.floats(0, 1), st.floats(0.05, 20))
def test_grpo_boundary_zeroes_the_coefficient(beta, ratio):
    adv = grpo_sign_boundary(beta, ratio)
    assert grpo_coefficient(GrpoGradSample(adv, beta, ratio)) == pytest.approx(0.0, abs=1e-12)


def test_sweep_grid_size_three():
    sweep = sweep_report(3)
    expected = [(0.01, 0.99, 0.01), (0.5, 0.5, 0.5), (0.99, 0.01, 0.99)]
    np.testing.assert_allclose(sweep.rows(), expected, atol=1e-15)
    assert sweep.p_true[1] == 0.5


def test_sweep_csv_shape_and_columns():
    sweep = sweep_report(101)
    kind, header, rows = read_csv(sweep.to_csv())
    assert kind == "confidence-sweep"
    assert header == ["p_true", "ga_grad", "ceu_grad"]
    assert len(rows) == 101
    values = np.array(rows, dtype=float)
    np.testing.assert_allclose(values[:, 1] + values[:, 2], 1.0, atol=1e-15)
    assert np.all(np.diff(values[:, 0]) > 0)
    assert np.all(np.diff(values[:, 1]) < 0)
    assert np.all(np.diff(values[:, 2]) > 0)


def test_confidence_grid_is_symmetric_in_log_odds():
    grid = confidence_grid(11)
    np.testing.assert_allclose(grid + grid[::-1], 1.0, atol=1e-15)
    with pytest.raises(ValueError):
        confidence_grid(1)


def test_grpo_report_contains_sign_flip_rows():
    rows = grpo_report()
    for beta in (0.0, 0.04, 0.1):
        for ratio in (0.5, 1.0, 2.0):
            boundary = grpo_sign_boundary(beta, ratio)
            hits = [r for r in rows if r[1] == beta and r[2] == ratio and r[0] == boundary]
            assert hits and hits[0][3] == 0.0
    kind, header, parsed = read_csv(grpo_csv(rows))
    assert kind == "grpo-coefficients" and len(parsed) == len(rows)


def test_dpo_report_rows():
    rows = dpo_report()
    assert len(rows) == 15
    assert all(0 < w < b for _, b, w in rows)


def test_sweep_dataclass_round_trip():
    sweep = ConfidenceSweep(np.array([0.2]), np.array([0.8]), np.array([0.2]))
    assert sweep.rows() == [(0.2, 0.8, 0.2)]
