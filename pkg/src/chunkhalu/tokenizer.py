"""Word-level tokenizer with a fixed special-token layout."""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

PAD, UNK, CLS, SEP, MASK = 0, 1, 2, 3, 4
SPECIAL_TOKENS = ("[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]")
N_SPECIAL = len(SPECIAL_TOKENS)

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)
_SENTENCE_END_RE = re.compile(r"(?<=[.!?])(?:\s+|$)")


def tokenize(text: str) -> list[str]:
    """Lowercase, then split into word runs and single punctuation marks."""
    return _TOKEN_RE.findall(text.lower())


def split_sentences(text: str) -> list[str]:
    """Split after ``.``, ``!`` or ``?`` when followed by whitespace or the end."""
    parts = _SENTENCE_END_RE.split(text.strip())
    return [p.strip() for p in parts if p and p.strip()]


@dataclass(frozen=True)
class Vocab:
    tokens: tuple[str, ...]

    def __post_init__(self):
        if self.tokens[:N_SPECIAL] != SPECIAL_TOKENS:
            raise ValueError("vocab must start with the special tokens")
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("vocab tokens must be unique")
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.tokens)})

    @property
    def size(self) -> int:
        return len(self.tokens)

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def id(self, token: str) -> int:
        return self._index.get(token, UNK)

    def encode(self, text: str) -> list[int]:
        return [self._index.get(t, UNK) for t in tokenize(text)]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.tokens[i] for i in ids]

    def save(self, path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.tokens[N_SPECIAL:]), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(SPECIAL_TOKENS + tuple(lines))


def build_vocab(corpus: Sequence[str], max_size: int) -> Vocab:
    """Keep the most frequent tokens; ties go to the lexicographically smaller."""
    if max_size <= N_SPECIAL:
        raise ValueError(f"max_size must exceed {N_SPECIAL} to leave room for specials")
    if not corpus:
        raise ValueError("cannot build a vocab from an empty corpus")
    counts = Counter()
    for text in corpus:
        counts.update(tokenize(text))
    for special in SPECIAL_TOKENS:
        counts.pop(special, None)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    kept = tuple(tok for tok, _ in ranked[: max_size - N_SPECIAL])
    return Vocab(SPECIAL_TOKENS + kept)


def encode(vocab: Vocab, text: str) -> list[int]:
    return vocab.encode(text)
