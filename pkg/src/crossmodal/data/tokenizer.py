"""Caption tokenization and vocabulary handling.

Ids 0 and 1 are reserved for the unknown and padding tokens; real words
start at id 2. The vocabulary is built from training captions only, so
out-of-vocabulary words in val/test captions map to the unknown id.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from ..errors import DataError
from .stopwords import STOP_WORDS

UNK_ID = 0
PAD_ID = 1
UNK_TOKEN = "<unk>"
PAD_TOKEN = "<pad>"

_WORD_RE = re.compile(r"[a-z0-9]+(?:'[a-z]+)*")


def tokenize(text: str, remove_stop_words: bool = False) -> list[str]:
    """Lowercase and split on whitespace/punctuation.

    With stop-word removal enabled, falls back to the unfiltered tokens
    when filtering would leave nothing.
    """
    words = _WORD_RE.findall(text.lower())
    if not words:
        raise DataError(f"caption tokenizes to nothing: {text!r}")
    if remove_stop_words:
        kept = [w for w in words if w not in STOP_WORDS]
        if kept:
            return kept
    return words


@dataclass
class Vocabulary:
    """Word-to-id table with reserved unknown/padding slots."""

    words: list[str]
    _index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if len(set(self.words)) != len(self.words):
            raise DataError("vocabulary contains duplicate words")
        if UNK_TOKEN in self.words or PAD_TOKEN in self.words:
            raise DataError("vocabulary must not contain reserved tokens")
        self._index = {w: i + 2 for i, w in enumerate(self.words)}

    def __len__(self) -> int:
        return len(self.words) + 2

    def word_id(self, word: str) -> int:
        return self._index.get(word, UNK_ID)

    def encode(self, text: str, max_tokens: int,
               remove_stop_words: bool = False) -> list[int]:
        """Token ids for a caption, truncated to max_tokens. Never empty."""
        if max_tokens < 1:
            raise DataError("max_tokens must be at least 1")
        words = tokenize(text, remove_stop_words=remove_stop_words)
        return [self.word_id(w) for w in words[:max_tokens]]

    @staticmethod
    def from_captions(texts: list[str], remove_stop_words: bool = False) -> "Vocabulary":
        """Build from caption texts, ordered by descending count then word."""
        counts: dict[str, int] = {}
        for text in texts:
            for w in tokenize(text, remove_stop_words=remove_stop_words):
                counts[w] = counts.get(w, 0) + 1
        ordered = sorted(counts, key=lambda w: (-counts[w], w))
        return Vocabulary(ordered)
