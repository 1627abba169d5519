"""Synthetic fictitious-author benchmark built from integer token pools.

Each profile owns a name token and a handful of attribute tokens that no other
profile uses, so whatever the model knows about a profile can be traced back to
its own training pairs.  Questions are ``frame + relation + name``; answers are
``style + word + attribute + word + attribute``.  Evaluation items add a
paraphrased question (a different frame), a paraphrased answer (the relation's
alternative wording) and perturbed answers whose attributes are swapped for
tokens from a distractor pool that never appears in a real answer.

A separate probe family (its own frames, relations, entities and facts) stands
in for general knowledge that must survive unlearning.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable

import numpy as np

SCHEMA_VERSION = 1

PAD, BOS, EOS, Q_OPEN, Q_CLOSE = range(5)
N_SPECIAL = 5


class PoolExhaustedError(ValueError):
    """A token pool is too small for the requested corpus."""


class EmptyForgetSetError(ValueError):
    """The forget fraction rounds to zero profiles."""


@dataclass(frozen=True)
class Vocab:
    """Token id ranges.  Each field is ``(start, count)``."""

    styles: tuple[int, int]
    frames: tuple[int, int]  # frame_len tokens per frame
    relations: tuple[int, int]
    answer_words: tuple[int, int]  # two per relation
    names: tuple[int, int]
    attributes: tuple[int, int]
    distractors: tuple[int, int]
    probe_frames: tuple[int, int]
    probe_relations: tuple[int, int]
    probe_words: tuple[int, int]
    probe_entities: tuple[int, int]
    probe_facts: tuple[int, int]
    frame_len: int
    size: int

    def ids(self, pool: str) -> np.ndarray:
        start, count = getattr(self, pool)
        return np.arange(start, start + count)


@dataclass(frozen=True)
class EvalItem:
    """One question/answer pair with everything the evaluation needs."""

    item_id: int
    profile_id: int  # -1 for probe items
    split: str  # "author" or "probe" at generation; "forget"/"retain"/"probe" after split
    frame: int
    question: tuple[int, ...]
    answer: tuple[int, ...]
    paraphrased_question: tuple[int, ...]
    paraphrased_answer: tuple[int, ...]
    perturbed_answers: tuple[tuple[int, ...], ...]

    def with_split(self, split: str) -> "EvalItem":
        return replace(self, split=split)


@dataclass(frozen=True)
class Profile:
    profile_id: int
    name_token: int
    attribute_tokens: tuple[int, ...]
    qa_pairs: tuple[tuple[tuple[int, ...], tuple[int, ...]], ...]


@dataclass
class Corpus:
    seed: int
    vocab: Vocab
    profiles: list[Profile]
    items: list[EvalItem]  # aligned with profiles: profile p owns items[p*Q:(p+1)*Q]
    probes: list[EvalItem]
    params: dict = field(default_factory=dict)

    @property
    def qa_per_profile(self) -> int:
        return len(self.profiles[0].qa_pairs) if self.profiles else 0

    def items_for(self, profile_ids: Iterable[int]) -> list[EvalItem]:
        wanted = set(profile_ids)
        return [it for it in self.items if it.profile_id in wanted]


@dataclass(frozen=True)
class SplitSpec:
    forget_fraction: float
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.forget_fraction < 1.0:
            raise ValueError("forget_fraction must lie strictly between 0 and 1")


@dataclass(frozen=True)
class Split:
    forget_profiles: tuple[int, ...]
    retain_profiles: tuple[int, ...]
    forget: list[EvalItem]
    retain: list[EvalItem]


def build_vocab(
    n_profiles: int,
    qa_per_profile: int,
    n_attributes: int = 4,
    n_frames: int = 3,
    frame_len: int = 2,
    n_styles: int = 3,
    n_distractors: int = 24,
    n_probe_entities: int = 30,
    n_probe_relations: int = 2,
) -> Vocab:
    cursor = N_SPECIAL
    pools = {}
    for name, count in [
        ("styles", n_styles),
        ("frames", n_frames * frame_len),
        ("relations", qa_per_profile),
        ("answer_words", 2 * qa_per_profile),
        ("names", n_profiles),
        ("attributes", n_profiles * n_attributes),
        ("distractors", n_distractors),
        ("probe_frames", n_frames * frame_len),
        ("probe_relations", n_probe_relations),
        ("probe_words", n_probe_relations),
        ("probe_entities", n_probe_entities),
        ("probe_facts", n_probe_entities * n_probe_relations),
    ]:
        pools[name] = (cursor, count)
        cursor += count
    return Vocab(frame_len=frame_len, size=cursor, **pools)


def _frame_tokens(vocab: Vocab, frame: int, probe: bool = False) -> tuple[int, ...]:
    start = (vocab.probe_frames if probe else vocab.frames)[0] + frame * vocab.frame_len
    return tuple(range(start, start + vocab.frame_len))


def n_frames(vocab: Vocab) -> int:
    return vocab.frames[1] // vocab.frame_len


def paraphrase(question, vocab: Vocab) -> tuple[int, ...]:
    """Swap the question's frame for the next one in its family's frame pool.

    Content tokens (relation, subject) are kept in place.  Applying this
    ``n_frames`` times returns the original question.
    """
    question = tuple(int(t) for t in question)
    fl = vocab.frame_len
    head = question[:fl]
    for probe, (start, count) in ((False, vocab.frames), (True, vocab.probe_frames)):
        if start <= head[0] < start + count:
            frame = (head[0] - start) // fl
            if head != _frame_tokens(vocab, frame, probe):
                break
            nxt = (frame + 1) % (count // fl)
            return _frame_tokens(vocab, nxt, probe) + question[fl:]
    raise ValueError("question does not start with a known frame")


def generate(
    seed: int = 7,
    n_profiles: int = 40,
    qa_per_profile: int = 20,
    n_attributes: int = 4,
    n_perturbations: int = 3,
    n_probe_entities: int = 30,
    n_distractors: int = 24,
) -> Corpus:
    """Deterministically build profiles, evaluation items and probes."""
    if n_profiles < 1 or qa_per_profile < 1:
        raise ValueError("need at least one profile and one question per profile")
    if n_attributes < 2:
        raise PoolExhaustedError("answers need two distinct attributes per profile")
    if n_distractors < 2 * n_perturbations:
        raise PoolExhaustedError(
            f"{n_distractors} distractors cannot fill {n_perturbations} perturbations"
        )
    vocab = build_vocab(
        n_profiles,
        qa_per_profile,
        n_attributes=n_attributes,
        n_distractors=n_distractors,
        n_probe_entities=n_probe_entities,
    )
    rng = np.random.default_rng(seed)
    relations = vocab.ids("relations")
    words = vocab.ids("answer_words").reshape(qa_per_profile, 2)
    styles = vocab.ids("styles")
    distractors = vocab.ids("distractors")
    frames = n_frames(vocab)

    # every relation reads a fixed ordered pair of attribute slots
    all_pairs = [(a, b) for a in range(n_attributes) for b in range(n_attributes) if a != b]
    slot_order = rng.permutation(len(all_pairs))
    slots = [all_pairs[slot_order[r % len(all_pairs)]] for r in range(qa_per_profile)]
    # paraphrased answers borrow another relation's wording
    alt = (np.arange(qa_per_profile) + 1) % qa_per_profile if qa_per_profile > 1 else [0]

    names = vocab.ids("names")
    attrs = vocab.ids("attributes").reshape(n_profiles, n_attributes)
    profiles, items = [], []
    for p in range(n_profiles):
        qa_pairs = []
        for r in range(qa_per_profile):
            frame = int(rng.integers(frames))
            style = int(rng.choice(styles))
            a, b = slots[r]
            question = _frame_tokens(vocab, frame) + (int(relations[r]), int(names[p]))
            answer = (style, int(words[r, 0]), int(attrs[p, a]), int(words[r, 1]), int(attrs[p, b]))
            para_answer = (
                style,
                int(words[alt[r], 0]),
                int(attrs[p, a]),
                int(words[alt[r], 1]),
                int(attrs[p, b]),
            )
            picks = rng.choice(distractors, size=2 * n_perturbations, replace=False)
            perturbed = tuple(
                (style, para_answer[1], int(picks[2 * k]), para_answer[3], int(picks[2 * k + 1]))
                for k in range(n_perturbations)
            )
            qa_pairs.append((question, answer))
            items.append(
                EvalItem(
                    item_id=len(items),
                    profile_id=p,
                    split="author",
                    frame=frame,
                    question=question,
                    answer=answer,
                    paraphrased_question=paraphrase(question, vocab),
                    paraphrased_answer=para_answer,
                    perturbed_answers=perturbed,
                )
            )
        profiles.append(
            Profile(
                profile_id=p,
                name_token=int(names[p]),
                attribute_tokens=tuple(int(t) for t in attrs[p]),
                qa_pairs=tuple(qa_pairs),
            )
        )

    probes = _generate_probes(vocab, rng, n_perturbations, start_id=len(items))
    params = dict(
        seed=seed,
        n_profiles=n_profiles,
        qa_per_profile=qa_per_profile,
        n_attributes=n_attributes,
        n_perturbations=n_perturbations,
        n_probe_entities=n_probe_entities,
        n_distractors=n_distractors,
    )
    return Corpus(seed=seed, vocab=vocab, profiles=profiles, items=items, probes=probes, params=params)


def _generate_probes(vocab: Vocab, rng, n_perturbations: int, start_id: int) -> list[EvalItem]:
    rels = vocab.ids("probe_relations")
    pwords = vocab.ids("probe_words")
    ents = vocab.ids("probe_entities")
    facts = vocab.ids("probe_facts").reshape(len(ents), len(rels))
    styles = vocab.ids("styles")
    distractors = vocab.ids("distractors")
    frames = vocab.probe_frames[1] // vocab.frame_len
    out = []
    for e, ent in enumerate(ents):
        for r, rel in enumerate(rels):
            frame = int(rng.integers(frames))
            style = int(rng.choice(styles))
            question = _frame_tokens(vocab, frame, probe=True) + (int(rel), int(ent))
            answer = (style, int(pwords[r]), int(facts[e, r]))
            para_answer = (style, int(pwords[(r + 1) % len(rels)]), int(facts[e, r]))
            picks = rng.choice(distractors, size=n_perturbations, replace=False)
            perturbed = tuple((style, para_answer[1], int(d)) for d in picks)
            out.append(
                EvalItem(
                    item_id=start_id + len(out),
                    profile_id=-1,
                    split="probe",
                    frame=frame,
                    question=question,
                    answer=answer,
                    paraphrased_question=paraphrase(question, vocab),
                    paraphrased_answer=para_answer,
                    perturbed_answers=perturbed,
                )
            )
    return out


def split(corpus: Corpus, spec: SplitSpec) -> Split:
    """Partition whole profiles into forget and retain sets."""
    n = len(corpus.profiles)
    n_forget = int(round(spec.forget_fraction * n))
    if n_forget < 1:
        raise EmptyForgetSetError(
            f"forget set empty: fraction {spec.forget_fraction} of {n} profiles rounds to 0"
        )
    if n_forget >= n:
        raise ValueError("forget set would swallow every profile")
    rng = np.random.default_rng(spec.seed)
    chosen = np.sort(rng.choice(n, size=n_forget, replace=False))
    forget_ids = tuple(int(i) for i in chosen)
    retain_ids = tuple(i for i in range(n) if i not in set(forget_ids))
    forget = [it.with_split("forget") for it in corpus.items_for(forget_ids)]
    retain = [it.with_split("retain") for it in corpus.items_for(retain_ids)]
    return Split(forget_ids, retain_ids, forget, retain)


# ---------------------------------------------------------------------------
# corpus file: one JSON record per line after a schema header
# ---------------------------------------------------------------------------


def dumps(corpus: Corpus, parts: Split | None = None) -> str:
    """Serialise to the line-oriented corpus format.

    Line 1 is ``# ceulab-corpus v<SCHEMA_VERSION>``, line 2 a JSON header with
    the generation parameters and vocabulary, then one JSON record per item.
    """
    header = {
        "schema": SCHEMA_VERSION,
        "params": corpus.params,
        "vocab": asdict(corpus.vocab),
        "forget_profiles": list(parts.forget_profiles) if parts else None,
    }
    lines = [f"# ceulab-corpus v{SCHEMA_VERSION}", json.dumps(header, sort_keys=True)]
    split_of = {}
    if parts is not None:
        split_of.update({it.item_id: "forget" for it in parts.forget})
        split_of.update({it.item_id: "retain" for it in parts.retain})
    for it in list(corpus.items) + list(corpus.probes):
        rec = {
            "split": split_of.get(it.item_id, it.split),
            "item": it.item_id,
            "profile": it.profile_id,
            "frame": it.frame,
            "question": list(it.question),
            "answer": list(it.answer),
            "paraphrased_question": list(it.paraphrased_question),
            "paraphrased_answer": list(it.paraphrased_answer),
            "perturbed": [list(p) for p in it.perturbed_answers],
        }
        lines.append(json.dumps(rec, sort_keys=True))
    return "\n".join(lines) + "\n"


def loads(text: str) -> tuple[Corpus, Split | None]:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("# ceulab-corpus v"):
        raise ValueError("not a corpus file (missing schema header)")
    version = int(lines[0].rsplit("v", 1)[1])
    if version != SCHEMA_VERSION:
        raise ValueError(f"unsupported corpus schema v{version}")
    header = json.loads(lines[1])
    vocab_d = header["vocab"]
    vocab = Vocab(**{k: tuple(v) if isinstance(v, list) else v for k, v in vocab_d.items()})
    items, probes = [], []
    for line in lines[2:]:
        rec = json.loads(line)
        it = EvalItem(
            item_id=rec["item"],
            profile_id=rec["profile"],
            split=rec["split"],
            frame=rec["frame"],
            question=tuple(rec["question"]),
            answer=tuple(rec["answer"]),
            paraphrased_question=tuple(rec["paraphrased_question"]),
            paraphrased_answer=tuple(rec["paraphrased_answer"]),
            perturbed_answers=tuple(tuple(p) for p in rec["perturbed"]),
        )
        (probes if it.profile_id < 0 else items).append(it)
    params = header["params"]
    n_attr = params["n_attributes"]
    profiles = []
    for p in range(params["n_profiles"]):
        own = [it for it in items if it.profile_id == p]
        attrs = vocab.ids("attributes")[p * n_attr : (p + 1) * n_attr]
        profiles.append(
            Profile(
                profile_id=p,
                name_token=int(vocab.names[0] + p),
                attribute_tokens=tuple(int(a) for a in attrs),
                qa_pairs=tuple((it.question, it.answer) for it in own),
            )
        )
    corpus = Corpus(seed=params["seed"], vocab=vocab, profiles=profiles, items=items,
                    probes=probes, params=params)
    parts = None
    if header.get("forget_profiles") is not None:
        forget_ids = tuple(header["forget_profiles"])
        retain_ids = tuple(p for p in range(len(profiles)) if p not in set(forget_ids))
        parts = Split(
            forget_ids,
            retain_ids,
            [it for it in items if it.split == "forget"],
            [it for it in items if it.split == "retain"],
        )
    return corpus, parts


def checksum(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()
