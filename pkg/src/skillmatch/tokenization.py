"""Deterministic whitespace/punctuation tokenizer with a corpus-built vocabulary."""

from __future__ import annotations

import hashlib
import re
from collections import Counter
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

BOS_ID = 0
EOS_ID = 1
UNK_ID = 2
PAD_ID = 3
RESERVED = ("<bos>", "<eos>", "<unk>", "<pad>")

# Runs of letters/digits form one token; every other non-space character
# (including underscore) is a single-character token.
_TOKEN_RE = re.compile(r"[^\W_]+|[^\w\s]|_", re.UNICODE)


def split_text(text: str) -> list[str]:
    """Lowercase and split on whitespace and punctuation boundaries."""
    return _TOKEN_RE.findall(text.lower())


@dataclass
class Vocabulary:
    """Injective token-to-id mapping with fixed reserved ids 0..3."""

    tokens: tuple[str, ...]
    _index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("vocabulary tokens must be unique")
        if any(t in RESERVED for t in self.tokens):
            raise ValueError("vocabulary must not contain reserved tokens")
        self._index = {tok: i + len(RESERVED) for i, tok in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(RESERVED) + len(self.tokens)

    def id_of(self, token: str) -> int:
        return self._index.get(token, UNK_ID)

    @classmethod
    def build(cls, texts: Iterable[str], max_size: int | None = None) -> "Vocabulary":
        """Collect tokens by descending frequency (ties alphabetical).

        ``max_size`` caps the total vocabulary length including the four
        reserved ids.
        """
        counts: Counter[str] = Counter()
        for text in texts:
            counts.update(split_text(text))
        ordered = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        if max_size is not None:
            ordered = ordered[: max(0, max_size - len(RESERVED))]
        return cls(tokens=tuple(tok for tok, _ in ordered))

    def dumps(self) -> str:
        return "".join(tok + "\n" for tok in self.tokens)

    @classmethod
    def loads(cls, text: str) -> "Vocabulary":
        return cls(tokens=tuple(text.splitlines()))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        return cls.loads(Path(path).read_text(encoding="utf-8"))

    def sha256(self) -> str:
        return hashlib.sha256(self.dumps().encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class TokenSequence:
    """Token ids bracketed by BOS/EOS, with aligned surfaces and template mask."""

    ids: tuple[int, ...]
    surfaces: tuple[str, ...]
    template_mask: tuple[bool, ...]

    def __post_init__(self):
        if not (len(self.ids) == len(self.surfaces) == len(self.template_mask)):
            raise ValueError("ids, surfaces and template mask must have equal length")
        if self.ids[0] != BOS_ID or self.ids[-1] != EOS_ID:
            raise ValueError("sequence must start with BOS and end with EOS")

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def content_surfaces(self) -> tuple[str, ...]:
        return tuple(s for s, t in zip(self.surfaces, self.template_mask) if not t)


def tokenize(text: str, vocab: Vocabulary, max_sequence_length: int = 128) -> TokenSequence:
    """Tokenize text into a BOS/EOS-bracketed id sequence.

    Out-of-vocabulary tokens map to UNK but keep their surface form. The
    body is truncated so the whole sequence fits ``max_sequence_length``.
    """
    if not text.strip():
        raise ValueError("cannot tokenize empty or whitespace-only text")
    words = split_text(text)[: max_sequence_length - 2]
    ids = (BOS_ID, *(vocab.id_of(w) for w in words), EOS_ID)
    surfaces = (RESERVED[BOS_ID], *words, RESERVED[EOS_ID])
    mask = (True, *(False,) * len(words), True)
    return TokenSequence(ids=ids, surfaces=surfaces, template_mask=mask)


def detokenize(seq: TokenSequence) -> str:
    """Join the non-template surface tokens back into text."""
    return " ".join(seq.content_surfaces)
