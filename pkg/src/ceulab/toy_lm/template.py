"""Chat-template layout and the supervision mask.

A sequence is described as ordered spans of kind ``bos``, ``template``,
``question`` or ``answer``.  Only answer positions are supervised, and the
first answer position is skipped too: it carries the response style, not the
fact being learned.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..corpus import BOS, EOS, Q_CLOSE, Q_OPEN
from ..losses import IGNORE_INDEX, EmptySupervisionError

SPAN_KINDS = ("bos", "template", "question", "answer")


@dataclass(frozen=True)
class TokenizedExample:
    tokens: np.ndarray  # int64 [T]
    supervised: np.ndarray  # bool [T]

    def __post_init__(self):
        tokens = np.asarray(self.tokens, dtype=np.int64)
        supervised = np.asarray(self.supervised, dtype=bool)
        if tokens.shape != supervised.shape or tokens.ndim != 1:
            raise ValueError("tokens and supervised mask must be equal-length vectors")
        object.__setattr__(self, "tokens", tokens)
        object.__setattr__(self, "supervised", supervised)

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def n_supervised(self) -> int:
        return int(self.supervised.sum())

    def labels(self) -> np.ndarray:
        """Next-token labels: ``labels[t]`` is the target predicted at ``t``."""
        out = np.full(len(self.tokens), IGNORE_INDEX, dtype=np.int64)
        nxt = self.supervised[1:]
        out[:-1][nxt] = self.tokens[1:][nxt]
        return out


def apply_mask(tokens: Sequence[int], layout: Sequence[tuple[str, int]]) -> TokenizedExample:
    """Build the supervision mask for ``tokens`` laid out as ``layout`` spans.

    ``layout`` is a list of ``(kind, length)`` pairs covering the sequence in
    order.  Raises :class:`EmptySupervisionError` when nothing is left to
    supervise once the first answer token is dropped.
    """
    tokens = np.asarray(tokens, dtype=np.int64)
    total = sum(n for _, n in layout)
    if total != len(tokens):
        raise ValueError(f"layout covers {total} positions, sequence has {len(tokens)}")
    supervised = np.zeros(len(tokens), dtype=bool)
    pos = 0
    first_answer_seen = False
    for kind, n in layout:
        if kind not in SPAN_KINDS:
            raise ValueError(f"unknown span kind {kind!r}")
        if n < 0:
            raise ValueError("span lengths must be non-negative")
        if kind == "answer" and n > 0:
            start = pos if first_answer_seen else pos + 1
            supervised[start : pos + n] = True
            first_answer_seen = True
        pos += n
    if not supervised.any():
        raise EmptySupervisionError("no answer token left to supervise")
    return TokenizedExample(tokens, supervised)


def qa_layout(question_len: int, answer_len: int) -> list[tuple[str, int]]:
    return [
        ("bos", 1),
        ("template", 1),
        ("question", question_len),
        ("template", 1),
        ("answer", answer_len + 1),  # trailing EOS is part of the answer span
    ]


def encode_qa(question: Sequence[int], answer: Sequence[int]) -> TokenizedExample:
    """``BOS Q_OPEN question Q_CLOSE answer EOS`` with the answer-span mask."""
    tokens = [BOS, Q_OPEN, *question, Q_CLOSE, *answer, EOS]
    return apply_mask(tokens, qa_layout(len(question), len(answer)))


def prompt_tokens(question: Sequence[int], answer: Sequence[int]) -> list[int]:
    """Generation prompt: the template up to and including the first answer
    token (the unsupervised style token)."""
    return [BOS, Q_OPEN, *question, Q_CLOSE, answer[0]]
