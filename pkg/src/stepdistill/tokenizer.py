"""Word-level tokenizer with fixed reserved tokens.

The synthetic tasks have tiny closed vocabularies, so tokens are whitespace
words; subword machinery would only add noise to the method comparison.
Text is normalized (trim, collapse runs of whitespace, lowercase) before
encoding, and the same normalization is reused by exact-match evaluation.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Sequence

PAD = 0
BOS = 1
EOS = 2
UNK = 3
PREFIX_LABEL = 4
PREFIX_RATIONALE = 5

RESERVED_TOKENS = ("<pad>", "<bos>", "<eos>", "<unk>", "[label]", "[rationale]")
NUM_RESERVED = len(RESERVED_TOKENS)

_SKIP_ON_DECODE = {PAD, BOS, EOS, PREFIX_LABEL, PREFIX_RATIONALE}


class Prefix(Enum):
    """Which output stream an encoded input asks the student for."""

    LABEL = PREFIX_LABEL
    RATIONALE = PREFIX_RATIONALE


class EmptyCorpus(ValueError):
    """build_vocab was given a corpus with no usable tokens."""


class InvalidId(ValueError):
    """decode() received an id outside the vocabulary."""


def normalize(text: str) -> str:
    """Trim, collapse internal whitespace, lowercase."""
    return " ".join(text.lower().split())


@dataclass(frozen=True)
class Vocab:
    """Immutable token table. Ids 0..5 are reserved and never remapped."""

    id_to_token: tuple[str, ...]
    token_to_id: dict[str, int] = field(repr=False)

    def __len__(self) -> int:
        return len(self.id_to_token)

    def id_of(self, token: str) -> int:
        return self.token_to_id.get(token, UNK)

    def save(self, path: str | Path) -> None:
        """One non-reserved token per line; line number = id - NUM_RESERVED."""
        with open(path, "w", encoding="utf-8") as fh:
            for token in self.id_to_token[NUM_RESERVED:]:
                fh.write(token + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        with open(path, encoding="utf-8") as fh:
            tokens = [line.rstrip("\n") for line in fh]
        return _make_vocab(tokens)


def _make_vocab(tokens: Sequence[str]) -> Vocab:
    # Reserved surfaces are absent from the lookup table on purpose: ids 0..5
    # are structural and only the API may emit them, never raw text.
    id_to_token = RESERVED_TOKENS + tuple(tokens)
    return Vocab(id_to_token, {t: i + NUM_RESERVED for i, t in enumerate(tokens)})


def build_vocab(corpus: Iterable[str], max_size: int) -> Vocab:
    """Rank tokens by frequency, ties broken lexicographically, cut at max_size.

    Tokens colliding with a reserved surface form are dropped so the
    token<->id mapping stays a bijection.
    """
    if max_size <= NUM_RESERVED:
        raise ValueError(f"max_size must exceed the {NUM_RESERVED} reserved tokens")
    counts: Counter[str] = Counter()
    for line in corpus:
        counts.update(normalize(line).split())
    for reserved in RESERVED_TOKENS:
        counts.pop(reserved, None)
    if not counts:
        raise EmptyCorpus("corpus contains no tokens")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return _make_vocab([t for t, _ in ranked[: max_size - NUM_RESERVED]])


def encode(vocab: Vocab, text: str, prefix: Prefix | None = None) -> list[int]:
    """Normalize, whitespace-split, map to ids (unknown -> UNK).

    When a prefix is given its reserved id is prepended, and that is the only
    position a prefix id can ever occupy.
    """
    ids = [vocab.id_of(tok) for tok in normalize(text).split()]
    if prefix is not None:
        return [prefix.value] + ids
    return ids


def decode(vocab: Vocab, ids: Iterator[int] | Sequence[int]) -> str:
    """Join tokens with single spaces, skipping pad/bos/eos/prefix ids."""
    words = []
    for i in ids:
        i = int(i)
        if i < 0 or i >= len(vocab):
            raise InvalidId(f"id {i} outside vocabulary of size {len(vocab)}")
        if i in _SKIP_ON_DECODE:
            continue
        words.append(vocab.id_to_token[i])
    return " ".join(words)
