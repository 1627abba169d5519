"""A small unlearning run end to end, without the CLI.

Fine-tune a micro transformer on a synthetic biography corpus until it
recites the answers, then unlearn two profiles with CE-U and with gradient
ascent and watch the forget and retain sets.  The corpus here is smaller
than the default desk configuration so the script finishes in about a
minute.
"""

import numpy as np

from ceulab.corpus import SplitSpec, generate, split
from ceulab.evaluate import rouge_scores
from ceulab.experiment import finetune_examples, forget_examples, memorization_recall
from ceulab.toy_lm import (
    ModelConfig,
    TrainSettings,
    batch_logprob,
    encode_qa,
    init_model,
    train,
)

corpus = generate(seed=7, n_profiles=12, qa_per_profile=10, n_probe_entities=10)
parts = split(corpus, SplitSpec(forget_fraction=0.17, seed=0))
print(f"{len(parts.forget)} forget items, {len(parts.retain)} retain items")

cfg = ModelConfig(vocab_size=corpus.vocab.size, d_model=32, n_layers=2, n_heads=4, max_seq_len=16)
tuned = train(
    init_model(cfg),
    finetune_examples(corpus, parts),
    TrainSettings(learning_rate=3e-3, batch_size=32, epochs=25, seed=0),
    "cross_entropy",
).params
print("memorization (ROUGE-L recall):", memorization_recall(tuned, parts))


def forget_prob(params):
    examples = [encode_qa(it.paraphrased_question, it.answer) for it in parts.forget]
    totals, counts = batch_logprob(params, examples)
    return float(np.mean(np.exp(totals / counts)))


for objective in ("ceu", "grad_ascent"):
    print(f"\n{objective}")
    print(f"{'epoch':>5} {'forget prob':>12} {'retain ROUGE':>13}")

    def show(epoch, params):
        retain = rouge_scores(params, parts.retain).mean()
        print(f"{epoch:5d} {forget_prob(params):12.4f} {retain:13.4f}")

    show(0, tuned)
    train(
        tuned,
        forget_examples(parts),
        TrainSettings(learning_rate=3e-4, batch_size=32, epochs=8, seed=0),
        objective,
        callback=show,
    )
