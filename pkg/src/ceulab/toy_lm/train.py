"""AdamW training loop shared by fine-tuning and every unlearning objective."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..autodiff import backward
from ..losses import (
    PreferenceScore,
    ceu_loss,
    cross_entropy_loss,
    general_ceu_loss,
    grad_ascent_loss,
)
from .model import ModelParams, forward, pad_batch
from .template import TokenizedExample

log = logging.getLogger(__name__)

# learning rates used for the 7B-scale runs; kept as named presets
LR_PRESETS = {"lr4e-5": 4e-5, "lr2e-6": 2e-6}

OBJECTIVES = ("cross_entropy", "ceu", "general_ceu", "grad_ascent")


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss or parameter."""

    def __init__(self, message: str, epoch: int, step: int, loss: float, trace=None):
        super().__init__(message)
        self.epoch = epoch
        self.step = step
        self.loss = loss
        self.trace = list(trace or [])  # per-epoch losses completed before the failure


@dataclass
class TrainSettings:
    learning_rate: float = 4e-5
    batch_size: int = 32
    weight_decay: float = 0.0
    epochs: int = 1
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0
    preference_score: float = 0.0  # normalized score for general_ceu

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")


class AdamW:
    """Adam with decoupled weight decay, updating arrays in place."""

    def __init__(self, arrays: dict[str, np.ndarray], lr, betas=(0.9, 0.999), eps=1e-8,
                 weight_decay=0.0):
        self.arrays = arrays
        self.lr, self.betas, self.eps, self.weight_decay = lr, betas, eps, weight_decay
        self.m = {k: np.zeros_like(v) for k, v in arrays.items()}
        self.v = {k: np.zeros_like(v) for k, v in arrays.items()}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for name, p in self.arrays.items():
            g = grads.get(name)
            if g is None:
                continue
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            if self.weight_decay:
                p *= 1.0 - self.lr * self.weight_decay
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class TrainResult:
    params: ModelParams
    trace: list[tuple[int, str, float]] = field(default_factory=list)
    stopped_early: bool = False


def objective_loss(objective: str, logits, labels, settings: TrainSettings):
    if objective == "cross_entropy":
        return cross_entropy_loss(logits, labels)
    if objective == "ceu":
        return ceu_loss(logits, labels)
    if objective == "grad_ascent":
        return grad_ascent_loss(logits, labels)
    if objective == "general_ceu":
        n_valid = int((labels != -100).sum())
        scores = PreferenceScore.normalized(np.full(n_valid, settings.preference_score))
        return general_ceu_loss(logits, labels, scores)
    raise ValueError(f"unknown objective {objective!r}; choose from {OBJECTIVES}")


def train(
    params: ModelParams,
    dataset: Sequence[TokenizedExample],
    settings: TrainSettings,
    objective: str = "cross_entropy",
    callback: Callable[[int, ModelParams], bool | None] | None = None,
) -> TrainResult:
    """Run ``settings.epochs`` epochs of mini-batch AdamW on ``dataset``.

    The input parameters are left untouched; a trained copy is returned with
    the per-epoch mean loss trace.  ``callback(epoch, params)`` runs after
    every epoch and stops training when it returns True.

    Raises :class:`DivergenceError` as soon as a loss or an updated parameter
    stops being finite.
    """
    if objective not in OBJECTIVES:
        raise ValueError(f"unknown objective {objective!r}; choose from {OBJECTIVES}")
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    params = params.copy()
    result = TrainResult(params)
    if settings.epochs == 0:
        return result
    opt = AdamW(params.arrays, settings.learning_rate, settings.betas, settings.eps,
                settings.weight_decay)
    rng = np.random.default_rng(settings.seed)
    n = len(dataset)
    for epoch in range(1, settings.epochs + 1):
        order = rng.permutation(n)
        losses, weights = [], []
        for step, start in enumerate(range(0, n, settings.batch_size)):
            batch = [dataset[i] for i in order[start : start + settings.batch_size]]
            tokens, labels = pad_batch(batch)
            leaves = params.leaves()
            loss = objective_loss(objective, forward(params, tokens, leaves), labels, settings)
            value = loss.item()
            if not np.isfinite(value):
                raise DivergenceError(
                    f"{objective}: non-finite loss {value} at epoch {epoch} step {step}",
                    epoch, step, value, result.trace,
                )
            backward(loss)
            opt.step({k: t.grad for k, t in leaves.items()})
            if not all(np.isfinite(a).all() for a in params.arrays.values()):
                raise DivergenceError(
                    f"{objective}: parameters became non-finite at epoch {epoch} step {step}",
                    epoch, step, value, result.trace,
                )
            losses.append(value)
            weights.append(len(batch))
        mean_loss = float(np.average(losses, weights=weights))
        result.trace.append((epoch, objective, mean_loss))
        log.debug("epoch %d %s loss %.6f", epoch, objective, mean_loss)
        try:
            stop = callback is not None and callback(epoch, params)
        except DivergenceError as exc:
            exc.trace = list(result.trace)
            raise
        if stop:
            result.stopped_early = True
            break
    return result
