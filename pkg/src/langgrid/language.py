"""Synthetic instruction grammar: generation, parsing, tokenization.

The grammar is closed: every sentence it can produce comes from one of two
surface templates per goal predicate, so parsing is exact inversion over the
finite sentence inventory (34 predicates x 2 templates = 68 sentences).
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .elements import (
    COLOR_NAMES,
    SHAPE_NAMES,
    ElementId,
    GoalPredicate,
    Shape,
    all_predicates,
)

Sentence = tuple[str, ...]

# Longest template is 5 words; one slot of headroom.
MAX_SENTENCE_LEN = 6

PAD_WORD = "<pad>"
UNK_WORD = "<unk>"


class UnparsableSentence(ValueError):
    """Raised for sentences outside the grammar."""


def _verb(shape: Shape | None) -> str:
    return "open" if shape == Shape.DOOR else "pick up"


def templates(pred: GoalPredicate) -> list[Sentence]:
    """The fixed surface forms for a predicate; index 0 is canonical."""
    c = COLOR_NAMES[pred.color] if pred.color is not None else None
    s = SHAPE_NAMES[pred.shape] if pred.shape is not None else None
    if c is not None and s is not None:
        if pred.shape == Shape.DOOR:
            forms = [f"open the {c} door", f"go open the {c} door"]
        else:
            forms = [f"pick up the {c} {s}", f"fetch a {c} {s}"]
    elif s is not None:
        if pred.shape == Shape.DOOR:
            forms = ["open a door", "go open a door"]
        else:
            forms = [f"pick up a {s}", f"fetch a {s}"]
    else:
        forms = [f"pick up a {c} object", f"fetch a {c} object"]
    return [tuple(f.split()) for f in forms]


def _sentence_table() -> dict[Sentence, GoalPredicate]:
    table: dict[Sentence, GoalPredicate] = {}
    for pred in all_predicates():
        for sent in templates(pred):
            table[sent] = pred
    return table


_PARSE_TABLE = _sentence_table()


def generate(pred: GoalPredicate, rng: np.random.Generator) -> Sentence:
    """A grammatical sentence whose parse equals pred; rng picks the template."""
    forms = templates(pred)
    return forms[int(rng.integers(len(forms)))]


def parse(sentence: Sentence) -> GoalPredicate:
    try:
        return _PARSE_TABLE[tuple(sentence)]
    except KeyError:
        raise UnparsableSentence(f"not a grammar sentence: {' '.join(sentence)!r}")


def subgoal_to_sentence(e: ElementId) -> Sentence:
    """Canonical sentence for an element; parses back to exactly e."""
    return templates(GoalPredicate.of(e))[0]


def all_sentences() -> list[Sentence]:
    return list(_PARSE_TABLE)


@dataclass(frozen=True)
class TokenSeq:
    """Integer token form of a sentence, padded to MAX_SENTENCE_LEN."""

    ids: tuple[int, ...]
    length: int


class Vocabulary:
    """Closed word list; ids are line numbers, specials first then sorted words."""

    def __init__(self, words: list[str] | None = None):
        if words is None:
            seen = sorted({w for sent in all_sentences() for w in sent})
            words = [PAD_WORD, UNK_WORD] + seen
        self.words = list(words)
        self.ids = {w: i for i, w in enumerate(self.words)}
        self.pad_id = self.ids[PAD_WORD]
        self.unk_id = self.ids[UNK_WORD]

    def __len__(self) -> int:
        return len(self.words)

    def tokenize(self, sentence: Sentence) -> TokenSeq:
        ids = [self.ids.get(w, self.unk_id) for w in sentence]
        if len(ids) > MAX_SENTENCE_LEN:
            raise ValueError(f"sentence longer than {MAX_SENTENCE_LEN}: {sentence}")
        length = len(ids)
        ids += [self.pad_id] * (MAX_SENTENCE_LEN - length)
        return TokenSeq(tuple(ids), length)

    def detokenize(self, seq: TokenSeq) -> Sentence:
        return tuple(self.words[i] for i in seq.ids[: seq.length])

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.words) + "\n", encoding="utf-8")

    @staticmethod
    def load(path: str | Path) -> "Vocabulary":
        words = Path(path).read_text(encoding="utf-8").splitlines()
        return Vocabulary(words)


def default_vocabulary() -> Vocabulary:
    return Vocabulary()
