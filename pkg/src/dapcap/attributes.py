"""Attribute supervision mined from captions.

Attributes are the most frequent non-stop words of the training captions.
Each video then gets a multi-hot label marking which attribute words occur
in any of its ground-truth captions.
"""

from __future__ import annotations

import json
import string
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .stopwords import DEFAULT_STOPWORDS

_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def tokenize_caption(text: str) -> list[str]:
    """Lowercase, delete punctuation, split on whitespace, drop empties."""
    tokens = text.lower().translate(_PUNCT_TABLE).split()
    return [t for t in tokens if t]


@dataclass(frozen=True)
class AttributeVocabulary:
    """The k mined attribute words, ordered by descending corpus frequency
    (ties broken lexicographically ascending)."""

    words: tuple[str, ...]
    index_of: dict[str, int] = field(compare=False)

    def __post_init__(self):
        if len(set(self.words)) != len(self.words):
            raise ValueError("attribute words must be distinct")
        for i, w in enumerate(self.words):
            if self.index_of.get(w) != i:
                raise ValueError(f"index_of inconsistent at word {w!r}")

    @property
    def k(self) -> int:
        return len(self.words)

    def to_json(self) -> str:
        return json.dumps({"k": self.k, "words": list(self.words)})

    @classmethod
    def from_words(cls, words: Sequence[str]) -> "AttributeVocabulary":
        words = tuple(words)
        return cls(words=words, index_of={w: i for i, w in enumerate(words)})

    @classmethod
    def from_json(cls, text: str) -> "AttributeVocabulary":
        doc = json.loads(text)
        vocab = cls.from_words(doc["words"])
        if vocab.k != doc["k"]:
            raise ValueError(f"vocabulary declares k={doc['k']} but lists {vocab.k} words")
        return vocab


@dataclass(frozen=True)
class MultiHotLabel:
    """Length-k binary attribute vector for one video."""

    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=np.int64)
        if bits.ndim != 1 or not np.isin(bits, (0, 1)).all():
            raise ValueError("bits must be a 1-d 0/1 vector")
        object.__setattr__(self, "bits", bits)

    @property
    def k(self) -> int:
        return int(self.bits.shape[0])

    @property
    def k_pos(self) -> int:
        return int(self.bits.sum())


def build_attribute_vocabulary(
    captions: Iterable[Sequence[str]],
    k: int = 500,
    stopwords: frozenset[str] | set[str] = DEFAULT_STOPWORDS,
) -> AttributeVocabulary:
    """Pick the k most frequent non-stop tokens of a tokenized corpus.

    Frequency is raw token frequency over all captions. Ties are broken
    lexicographically so the result is deterministic.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    counts = Counter()
    for caption in captions:
        counts.update(t for t in caption if t not in stopwords)
    if len(counts) < k:
        raise ValueError(
            f"corpus has only {len(counts)} distinct non-stop tokens, cannot build k={k}"
        )
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return AttributeVocabulary.from_words([w for w, _ in ranked[:k]])


def make_multi_hot_label(
    video_captions: Iterable[Sequence[str]], vocab: AttributeVocabulary
) -> MultiHotLabel:
    """bits[k] = 1 iff attribute word k occurs in any caption of the video."""
    seen = set()
    for caption in video_captions:
        seen.update(caption)
    bits = np.zeros(vocab.k, dtype=np.int64)
    for word in seen & set(vocab.words):
        bits[vocab.index_of[word]] = 1
    return MultiHotLabel(bits=bits)
