"""Closed-form gradient coefficients for GA, CE-U, DPO and GRPO updates.

The magnitudes here are per valid position with proportionality constant 1.
Under mean reduction over ``n`` positions the autodiff gradients are these
values divided by ``n``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logit

from .csvio import write_csv

def _check_open_unit(p: float) -> float:
    p = float(p)
    if not 0.0 < p < 1.0:
        raise ValueError(f"p_true must lie strictly inside (0, 1), got {p}")
    return p


def ga_grad_mag(p_true: float) -> float:
    """|d loss / d z_y| for gradient ascent: ``1 - p(y)``.

    Vanishes as the model grows confident in the label it should forget.
    """
    return 1.0 - _check_open_unit(p_true)


def ceu_grad_mag(p_true: float) -> float:
    """|d loss / d z_y| for CE-U: ``p(y)``."""
    return _check_open_unit(p_true)


@dataclass(frozen=True)
class DpoGradSample:
    reward_gap: float  # r(x, y_l) - r(x, y_w)
    beta: float

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("beta must be positive")


@dataclass(frozen=True)
class GrpoGradSample:
    advantage: float
    beta: float
    prob_ratio: float  # pi_ref / pi_theta at the token

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if not self.prob_ratio > 0:
            raise ValueError("prob_ratio must be positive")


def dpo_weight(sample: DpoGradSample) -> float:
    """Sigmoid weight ``beta * sigma(gap)`` multiplying the DPO update.

    The rejected-response half of that update is plain gradient ascent on
    ``log pi(y_l | x)``; this factor only rescales it.
    """
    return sample.beta * float(expit(sample.reward_gap))


def grpo_coefficient(sample: GrpoGradSample) -> float:
    """``A + beta * (ratio - 1)``; negative means a weighted ascent step."""
    return sample.advantage + sample.beta * (sample.prob_ratio - 1.0)


def grpo_sign_boundary(beta: float, prob_ratio: float) -> float:
    """Advantage at which the GRPO coefficient changes sign."""
    return -beta * (prob_ratio - 1.0)


@dataclass(frozen=True)
class ConfidenceSweep:
    p_true: np.ndarray
    ga_grad: np.ndarray
    ceu_grad: np.ndarray

    def rows(self) -> list[tuple[float, float, float]]:
        return list(zip(self.p_true.tolist(), self.ga_grad.tolist(), self.ceu_grad.tolist()))

    def to_csv(self) -> str:
        return write_csv(
            "confidence-sweep", ["p_true", "ga_grad", "ceu_grad"], self.rows()
        )


def confidence_grid(grid_size: int, p_min: float = 0.01, p_max: float = 0.99) -> np.ndarray:
    """Points evenly spaced in log-odds between ``p_min`` and ``p_max``.

    The endpoints are returned exactly, so a size-3 grid over the defaults is
    ``{0.01, 0.5, 0.99}``.
    """
    if grid_size < 2:
        raise ValueError("grid_size must be at least 2")
    lo, hi = logit(p_min), logit(p_max)
    if p_min + p_max == 1.0:
        hi = -lo  # exact mirror so the midpoint lands on 0.5
    grid = expit(np.linspace(lo, hi, grid_size))
    grid[0], grid[-1] = p_min, p_max
    return grid


def sweep_report(grid_size: int, p_min: float = 0.01, p_max: float = 0.99) -> ConfidenceSweep:
    grid = confidence_grid(grid_size, p_min, p_max)
    return ConfidenceSweep(
        p_true=grid,
        ga_grad=np.array([ga_grad_mag(p) for p in grid]),
        ceu_grad=np.array([ceu_grad_mag(p) for p in grid]),
    )


def grpo_report(
    betas=(0.0, 0.04, 0.1),
    ratios=(0.5, 1.0, 2.0),
    advantages=(-1.0, -0.5, 0.0, 0.5, 1.0),
) -> list[tuple[float, float, float, float]]:
    """Rows ``(advantage, beta, ratio, coefficient)`` over a small grid.

    For every (beta, ratio) pair the sign-flip advantage is added as its own
    row, where the coefficient is exactly zero.
    """
    rows = []
    for beta in betas:
        for ratio in ratios:
            advs = sorted(set(advantages) | {grpo_sign_boundary(beta, ratio) + 0.0})
            for adv in advs:
                coef = grpo_coefficient(GrpoGradSample(adv, beta, ratio))
                rows.append((float(adv), float(beta), float(ratio), coef))
    return rows


def dpo_report(betas=(0.1, 0.5, 1.0), gaps=(-4.0, -2.0, 0.0, 2.0, 4.0)):
    return [(float(g), float(b), dpo_weight(DpoGradSample(g, b))) for b in betas for g in gaps]


def grpo_csv(rows) -> str:
    return write_csv("grpo-coefficients", ["advantage", "beta", "ratio", "coefficient"], rows)


def dpo_csv(rows) -> str:
    return write_csv("dpo-weights", ["reward_gap", "beta", "weight"], rows)
