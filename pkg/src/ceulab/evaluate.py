"""Run a model over benchmark items and turn the outputs into metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import EvalItem
from .csvio import write_csv
from .metrics import (
    CompositeScores,
    MetricRecord,
    aggregate_truth_ratios,
    forget_quality,
    model_utility,
    rouge_l_recall,
    truth_ratio,
    truth_ratio_utility,
)
from .toy_lm import ModelParams, batch_logprob, encode_qa, greedy_decode_batch, prompt_tokens


@dataclass
class ItemScores:
    """Per-item values for one split."""

    rouge: np.ndarray
    norm_prob: np.ndarray
    truth_ratio: np.ndarray
    rouge_gold_question: np.ndarray
    norm_prob_gold_question: np.ndarray

    def record(self, split: str) -> MetricRecord:
        ratios = aggregate_truth_ratios(self.truth_ratio)
        return MetricRecord(
            split=split,
            rouge_l_recall=float(self.rouge.mean()),
            norm_prob=float(self.norm_prob.mean()),
            truth_ratio=float(ratios.mean()) if ratios.size else 0.0,
            truth_ratio_utility=float(np.mean([truth_ratio_utility(r) for r in ratios]))
            if ratios.size
            else 0.0,
        )


def _norm_probs(params: ModelParams, pairs) -> np.ndarray:
    examples = [encode_qa(q, a) for q, a in pairs]
    totals, counts = batch_logprob(params, examples)
    return np.exp(totals / counts)


def rouge_scores(params: ModelParams, items: Sequence[EvalItem], paraphrased: bool = True) -> np.ndarray:
    """Per-item ROUGE-L recall of the greedy continuation after the first
    answer token against the rest of the gold answer."""
    prompts = [
        prompt_tokens(it.paraphrased_question if paraphrased else it.question, it.answer)
        for it in items
    ]
    max_new = max(len(it.answer) for it in items) + 1
    outputs = greedy_decode_batch(params, prompts, max_new)
    return np.array([rouge_l_recall(out, it.answer[1:]) for out, it in zip(outputs, items)])


def score_items(params: ModelParams, items: Sequence[EvalItem], gold_question: bool = True) -> ItemScores:
    """Score ``items`` on paraphrased questions (the headline numbers), and
    optionally on the original questions as a supplement."""
    items = list(items)
    if not items:
        raise ValueError("no items to evaluate")
    prob = _norm_probs(params, [(it.paraphrased_question, it.answer) for it in items])
    para = _norm_probs(params, [(it.paraphrased_question, it.paraphrased_answer) for it in items])
    n_pert = len(items[0].perturbed_answers)
    pert = _norm_probs(
        params,
        [(it.paraphrased_question, p) for it in items for p in it.perturbed_answers],
    ).reshape(len(items), n_pert)
    ratios = np.array([truth_ratio(pp, pt) for pp, pt in zip(para, pert)])
    rouge = rouge_scores(params, items, paraphrased=True)
    if gold_question:
        rouge_gold = rouge_scores(params, items, paraphrased=False)
        prob_gold = _norm_probs(params, [(it.question, it.answer) for it in items])
    else:
        rouge_gold = np.full(len(items), np.nan)
        prob_gold = np.full(len(items), np.nan)
    return ItemScores(rouge, prob, ratios, rouge_gold, prob_gold)


@dataclass
class Evaluation:
    records: dict[str, MetricRecord]
    scores: dict[str, ItemScores]
    composite: CompositeScores | None


def evaluate(
    params: ModelParams,
    splits: dict[str, Sequence[EvalItem]],
    reference_forget_ratios: np.ndarray | None = None,
    gold_question: bool = True,
) -> Evaluation:
    """Metrics for each named split plus the composites.

    Model Utility uses the ``retain`` and ``probe`` splits; Forget Quality
    needs the retain-only reference model's truth ratios on ``forget``.
    """
    scores = {name: score_items(params, items, gold_question) for name, items in splits.items()}
    records = {name: s.record(name) for name, s in scores.items()}
    composite = None
    utility_parts = [records[k] for k in ("retain", "probe") if k in records]
    if utility_parts and "forget" in scores and reference_forget_ratios is not None:
        fq = forget_quality(scores["forget"].truth_ratio, reference_forget_ratios)
        composite = CompositeScores.from_values(model_utility(utility_parts), fq)
    return Evaluation(records, scores, composite)


METRIC_SPLITS = ("forget", "retain", "probe")
_HEADLINE = ("rouge_l_recall", "norm_prob", "truth_ratio", "truth_ratio_utility")
_SUPPLEMENT = ("rouge_l_recall_gold_question", "norm_prob_gold_question")


def metrics_table(columns: Sequence[tuple[str, Evaluation | None]]) -> tuple[list[str], list[list]]:
    """Metric-by-epoch table: one row per metric and split, one column per
    evaluation.  A ``None`` evaluation (a diverged run) fills its column
    with NaN.  Gold-question rows come last as a supplement."""
    header = ["metric", "split"] + [label for label, _ in columns]
    rows: list[list] = []

    def add(metric, split, getter):
        row: list = [metric, split]
        for _, ev in columns:
            row.append(math.nan if ev is None else getter(ev))
        rows.append(row)

    present = [s for s in METRIC_SPLITS if any(ev and s in ev.records for _, ev in columns)]
    for split in present:
        for metric in _HEADLINE:
            add(metric, split, lambda ev, m=metric, s=split: getattr(ev.records[s], m))
    add("model_utility", "all", lambda ev: _composite(ev, "model_utility"))
    add("forget_quality", "all", lambda ev: _composite(ev, "forget_quality"))
    add("log_forget_quality", "all", lambda ev: _composite(ev, "log_forget_quality"))
    for split in present:
        add(_SUPPLEMENT[0], split, lambda ev, s=split: float(ev.scores[s].rouge_gold_question.mean()))
        add(_SUPPLEMENT[1], split,
            lambda ev, s=split: float(ev.scores[s].norm_prob_gold_question.mean()))
    return header, rows


def _composite(ev: Evaluation, name: str) -> float:
    return math.nan if ev.composite is None else getattr(ev.composite, name)


def metrics_csv(columns: Sequence[tuple[str, Evaluation | None]]) -> str:
    header, rows = metrics_table(columns)
    return write_csv("metrics", header, rows)
