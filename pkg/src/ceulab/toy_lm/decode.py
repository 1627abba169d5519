"""Greedy generation and answer log-probabilities."""

from __future__ import annotations

from collections import defaultdict
from typing import Sequence

import numpy as np

from ..autodiff import log_softmax_ext
from ..corpus import EOS
from ..losses import EmptySupervisionError
from .model import ModelParams, forward, pad_batch
from .template import TokenizedExample


def greedy_decode(
    params: ModelParams, prompt: Sequence[int], max_new: int, eos_id: int | None = EOS
) -> list[int]:
    """Extend ``prompt`` by argmax tokens; ties go to the lowest token id.

    Stops after ``max_new`` tokens or when ``eos_id`` is produced (the end
    token itself is not returned).
    """
    return greedy_decode_batch(params, [prompt], max_new, eos_id)[0]


def greedy_decode_batch(
    params: ModelParams,
    prompts: Sequence[Sequence[int]],
    max_new: int,
    eos_id: int | None = EOS,
) -> list[list[int]]:
    """Batched :func:`greedy_decode`; prompts of equal length share a forward."""
    out: list[list[int]] = [[] for _ in prompts]
    if max_new <= 0:
        return out
    groups: dict[int, list[int]] = defaultdict(list)
    for i, p in enumerate(prompts):
        groups[len(p)].append(i)
    limit = params.config.max_seq_len
    for length, idx in groups.items():
        seqs = np.array([list(prompts[i]) for i in idx], dtype=np.int64)
        alive = np.ones(len(idx), dtype=bool)
        for _ in range(max_new):
            if not alive.any() or seqs.shape[1] >= limit:
                break
            logits = forward(params, seqs).value[:, -1, :]
            nxt = np.argmax(logits, axis=-1)  # first maximum = lowest id
            for row, i in enumerate(idx):
                if not alive[row]:
                    continue
                if eos_id is not None and nxt[row] == eos_id:
                    alive[row] = False
                else:
                    out[i].append(int(nxt[row]))
            seqs = np.concatenate([seqs, nxt[:, None]], axis=1)
    return out


def batch_logprob(
    params: ModelParams, examples: Sequence[TokenizedExample], chunk: int = 512
) -> tuple[np.ndarray, np.ndarray]:
    """Summed log-probability over supervised tokens, plus token counts."""
    totals = np.zeros(len(examples))
    counts = np.zeros(len(examples), dtype=np.int64)
    for start in range(0, len(examples), chunk):
        part = list(examples[start : start + chunk])
        tokens, labels = pad_batch(part)
        logp = log_softmax_ext(forward(params, tokens).value)
        mask = labels != -100
        safe = np.where(mask, labels, 0)
        picked = np.take_along_axis(logp, safe[..., None], axis=-1)[..., 0]
        totals[start : start + len(part)] = np.where(mask, picked, 0.0).sum(axis=1)
        counts[start : start + len(part)] = mask.sum(axis=1)
    return totals, counts


def sequence_logprob(params: ModelParams, example: TokenizedExample) -> tuple[float, int]:
    """``(sum of log p(token) over supervised positions, supervised count)``."""
    if example.n_supervised == 0:
        raise EmptySupervisionError("example has no supervised tokens")
    totals, counts = batch_logprob(params, [example])
    return float(totals[0]), int(counts[0])
