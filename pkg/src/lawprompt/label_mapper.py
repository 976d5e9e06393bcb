"""Map predicted mask tokens to a charge label by Jaccard similarity."""
from __future__ import annotations

from dataclasses import dataclass
from typing import AbstractSet, Iterable

from .corpus import Verbalizer, Vocab


def jaccard(a: AbstractSet, b: AbstractSet) -> float:
    """|A & B| / |A | B|, defined as 0 when both sets are empty."""
    union = len(a | b)
    if union == 0:
        return 0.0
    return len(a & b) / union


@dataclass(frozen=True)
class PredictionTokens:
    ids: tuple[int, ...]
    tokens: frozenset[str]

    @classmethod
    def from_ids(cls, ids: Iterable[int], vocab: Vocab) -> "PredictionTokens":
        ids = tuple(int(i) for i in ids)
        # reserved ids (< 3) never enter the set
        return cls(ids, frozenset(vocab.tokens[i] for i in ids if i >= 3))

    @classmethod
    def from_tokens(cls, tokens: Iterable[str]) -> "PredictionTokens":
        return cls((), frozenset(tokens))


@dataclass(frozen=True)
class LabelMatch:
    label: int
    score: float
    zero_confidence: bool
    scores: tuple[float, ...]


def map_to_label(prediction: PredictionTokens | AbstractSet[str], verbalizer: Verbalizer) -> LabelMatch:
    if not len(verbalizer):
        raise ValueError("verbalizer is empty")
    tokens = prediction.tokens if isinstance(prediction, PredictionTokens) else frozenset(prediction)
    scores = tuple(jaccard(tokens, s) for s in verbalizer.token_sets)
    best = 0
    for i, s in enumerate(scores):
        if s > scores[best]:
            best = i
    return LabelMatch(best, scores[best], scores[best] == 0.0, scores)
