"""Dataset composition shared by the CLI stages and the desk-scale checks."""

from __future__ import annotations

from .corpus import Corpus, Split
from .evaluate import rouge_scores
from .toy_lm import ModelParams, TokenizedExample, encode_qa


def finetune_examples(corpus: Corpus, parts: Split, retain_only: bool = False) -> list[TokenizedExample]:
    """Author items (minus the forget profiles for the reference model) plus
    every probe item, which stands in for pre-existing general knowledge."""
    items = list(parts.retain) + ([] if retain_only else list(parts.forget))
    return [encode_qa(it.question, it.answer) for it in items + list(corpus.probes)]


def forget_examples(parts: Split) -> list[TokenizedExample]:
    return [encode_qa(it.question, it.answer) for it in parts.forget]


def memorization_recall(params: ModelParams, parts: Split, retain_only: bool = False) -> dict:
    """Mean ROUGE-L recall on the splits the model was trained on."""
    splits = {"retain": parts.retain} if retain_only else {
        "forget": parts.forget, "retain": parts.retain}
    return {name: float(rouge_scores(params, items).mean()) for name, items in splits.items()}
