"""Token-level training and unlearning objectives.

Every loss takes a ``[batch, seq_len, vocab]`` logit tensor and a
``[batch, seq_len]`` integer label array; positions labelled with the ignore
sentinel are dropped before anything else happens.  The remaining rows are
reduced by a plain mean over valid positions.

Target distributions for the unlearning losses are rebuilt from the current
(detached) logits on every call, so they move with the model during training.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .autodiff import (
    AmbiguousOneHotError,
    DegenerateDistributionError,
    Tensor,
    log_softmax,
    sg,
    softmax_ext,
)

IGNORE_INDEX = -100

__all__ = [
    "IGNORE_INDEX",
    "EmptySupervisionError",
    "PreferenceScore",
    "valid_positions",
    "ceu_target",
    "ceu_loss",
    "general_ceu_target_raw",
    "general_ceu_target_normalized",
    "general_ceu_target",
    "raw_to_normalized",
    "general_ceu_loss",
    "cross_entropy_loss",
    "grad_ascent_loss",
    "soft_cross_entropy",
    "entropy",
]


class EmptySupervisionError(ValueError):
    """No label in the batch survives the ignore mask."""


@dataclass(frozen=True)
class PreferenceScore:
    """Per-valid-position preference scores.

    ``kind="raw"`` values live in log space and may be +/-inf;
    ``kind="normalized"`` values are the target probability of the true label
    and must lie in [0, 1].
    """

    kind: Literal["raw", "normalized"]
    values: np.ndarray

    def __post_init__(self):
        values = np.atleast_1d(np.asarray(self.values, dtype=np.float64))
        object.__setattr__(self, "values", values)
        if self.kind == "normalized":
            if np.isnan(values).any() or (values < 0).any() or (values > 1).any():
                raise ValueError("normalized preference scores must lie in [0, 1]")
        elif self.kind == "raw":
            if np.isnan(values).any():
                raise ValueError("raw preference scores must not be NaN")
        else:
            raise ValueError(f"unknown score kind {self.kind!r}")

    @classmethod
    def normalized(cls, values) -> "PreferenceScore":
        return cls("normalized", values)

    @classmethod
    def raw(cls, values) -> "PreferenceScore":
        return cls("raw", values)


def valid_positions(
    logits: Tensor, labels, ignore_index: int = IGNORE_INDEX
) -> tuple[Tensor, np.ndarray]:
    """Gather the logit rows whose label is not ``ignore_index``.

    Returns a ``[n_valid, vocab]`` tensor (still attached to the graph) and
    the matching label vector.
    """
    labels = np.asarray(labels)
    if logits.ndim != labels.ndim + 1 or logits.shape[:-1] != labels.shape:
        raise ValueError(
            f"logits {logits.shape} and labels {labels.shape} do not line up"
        )
    vocab = logits.shape[-1]
    if vocab < 2:
        raise DegenerateDistributionError("vocabulary of size 1 leaves nothing after suppression")
    mask = labels != ignore_index
    if not mask.any():
        raise EmptySupervisionError("no supervised positions in batch")
    y = labels[mask].astype(np.int64)
    if (y < 0).any() or (y >= vocab).any():
        raise ValueError("label id outside the vocabulary")
    return logits[mask], y


def _rows_and_labels(logits, labels, ignore_index):
    """Accept either tensors/blocks or a single plain logit row."""
    if isinstance(logits, Tensor):
        rows, y = valid_positions(logits, labels, ignore_index)
        return rows.value, y
    z = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if z.ndim == 1:
        z, labels = z[None, :], labels.reshape(1)
    z = z.reshape(-1, z.shape[-1])
    labels = labels.reshape(-1)
    mask = labels != ignore_index
    if not mask.any():
        raise EmptySupervisionError("no supervised positions")
    if z.shape[-1] < 2:
        raise DegenerateDistributionError("vocabulary of size 1 leaves nothing after suppression")
    return z[mask], labels[mask].astype(np.int64)


def ceu_target(logits, labels, ignore_index: int = IGNORE_INDEX) -> np.ndarray:
    """Softmax of the detached logits with the true-label logit set to -inf.

    Accepts a logit tensor with labels, or plain arrays (a single row and a
    scalar label work too).  Returns ``[n_valid, vocab]`` with exact zeros at
    the true labels.
    """
    z, y = _rows_and_labels(logits, labels, ignore_index)
    z = z.copy()
    z[np.arange(len(y)), y] = -np.inf
    return softmax_ext(z)


def general_ceu_target_raw(
    logits, labels, scores, ignore_index: int = IGNORE_INDEX
) -> np.ndarray:
    """Target with the true-label logit replaced by a raw (log-space) score.

    ``+inf`` rows short-circuit to the exact one-hot before any arithmetic;
    ``-inf`` rows reduce to :func:`ceu_target`.
    """
    z, y = _rows_and_labels(logits, labels, ignore_index)
    r = scores.values if isinstance(scores, PreferenceScore) else np.atleast_1d(
        np.asarray(scores, dtype=np.float64)
    )
    if r.shape != y.shape:
        raise ValueError(f"expected {y.size} scores, got {r.size}")
    z = z.copy()
    rows = np.arange(len(y))
    plus = np.isposinf(r)
    if plus.any():
        # another +inf logit next to a +inf score has no defined one-hot
        others = z[plus].copy()
        others[np.arange(plus.sum()), y[plus]] = 0.0
        if np.isposinf(others).any():
            raise AmbiguousOneHotError("+inf score alongside a +inf logit")
    z[rows, y] = np.where(plus, 0.0, r)
    out = softmax_ext(z)
    if plus.any():
        out[plus] = 0.0
        out[plus, y[plus]] = 1.0
    return out


def general_ceu_target_normalized(
    logits, labels, scores, ignore_index: int = IGNORE_INDEX
) -> np.ndarray:
    """``r * one_hot(y) + (1 - r) * ceu_target`` row by row."""
    if not isinstance(scores, PreferenceScore):
        scores = PreferenceScore.normalized(scores)
    elif scores.kind != "normalized":
        raise ValueError("expected normalized scores")
    base = ceu_target(logits, labels, ignore_index)
    r = scores.values
    if r.shape != (base.shape[0],):
        raise ValueError(f"expected {base.shape[0]} scores, got {r.size}")
    _, y = _rows_and_labels(logits, labels, ignore_index)
    out = (1.0 - r)[:, None] * base
    out[np.arange(len(y)), y] += r
    return out


def general_ceu_target(logits, labels, scores: PreferenceScore, ignore_index=IGNORE_INDEX):
    if scores.kind == "raw":
        return general_ceu_target_raw(logits, labels, scores, ignore_index)
    return general_ceu_target_normalized(logits, labels, scores, ignore_index)


def raw_to_normalized(row, y: int, r_raw: float) -> float:
    """Probability the raw-score target assigns to the true label.

    Computed as ``sigmoid(r_raw - logsumexp(z_j, j != y))``.
    """
    z = np.asarray(row, dtype=np.float64)
    others = np.delete(z, y)
    if others.size == 0 or np.isneginf(others).all():
        raise DegenerateDistributionError("no non-label logit survives")
    if np.isposinf(r_raw):
        return 1.0
    if np.isneginf(r_raw):
        return 0.0
    lse = np.logaddexp.reduce(others)
    return float(np.exp(r_raw - np.logaddexp(r_raw, lse)))


def soft_cross_entropy(rows: Tensor, target: np.ndarray) -> Tensor:
    """Mean over rows of ``-sum_i target_i * log softmax(rows)_i``.

    ``target`` is wrapped in a stop-gradient.  Zero target entries contribute
    nothing even if the log-probability underflows to -inf.
    """
    logp = log_softmax(rows)
    t = sg(target)
    if np.isneginf(logp.value).any():
        with np.errstate(invalid="ignore"):  # 0 * -inf, masked out below
            weighted = _mask_zero_targets(t * logp, target)
    else:
        weighted = t * logp
    return -weighted.sum() * (1.0 / rows.shape[0])


def _mask_zero_targets(weighted: Tensor, target: np.ndarray) -> Tensor:
    keep = target != 0
    value = np.where(keep, weighted.value, 0.0)
    return Tensor(value, (weighted,), lambda g: (np.where(keep, g, 0.0),))


def ceu_loss(logits: Tensor, labels, ignore_index: int = IGNORE_INDEX) -> Tensor:
    """Cross entropy against the suppressed-label target.  Gradient per
    valid row is ``softmax(z) - ceu_target`` (divided by the row count)."""
    rows, y = valid_positions(logits, labels, ignore_index)
    target = ceu_target(rows.value, y, ignore_index)
    return soft_cross_entropy(rows, target)


def general_ceu_loss(
    logits: Tensor,
    labels,
    scores: PreferenceScore,
    ignore_index: int = IGNORE_INDEX,
) -> Tensor:
    """Cross entropy against the preference-score target.

    Normalized score 1 gives ordinary cross entropy, 0 gives :func:`ceu_loss`.
    A ``+inf`` raw score on a position whose live probability is exactly zero
    yields an infinite loss; that is returned as is.
    """
    rows, y = valid_positions(logits, labels, ignore_index)
    target = general_ceu_target(rows.value, y, scores, ignore_index)
    return soft_cross_entropy(rows, target)


def cross_entropy_loss(logits: Tensor, labels, ignore_index: int = IGNORE_INDEX) -> Tensor:
    rows, y = valid_positions(logits, labels, ignore_index)
    logp = log_softmax(rows)
    picked = logp[np.arange(len(y)), y]
    return -picked.sum() * (1.0 / len(y))


def grad_ascent_loss(logits: Tensor, labels, ignore_index: int = IGNORE_INDEX) -> Tensor:
    """Negated cross entropy (mean of ``+log p(y)``).

    Minimising this ascends the NLL; its gradient per valid row is
    ``one_hot(y) - softmax(z)``.
    """
    rows, y = valid_positions(logits, labels, ignore_index)
    logp = log_softmax(rows)
    picked = logp[np.arange(len(y)), y]
    return picked.sum() * (1.0 / len(y))


def entropy(probs) -> np.ndarray:
    """Shannon entropy (nats) along the last axis, with 0 log 0 = 0."""
    p = np.asarray(probs, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, -p * np.log(p), 0.0)
    return terms.sum(axis=-1)
