"""Word-level vocabulary and tokenizer."""

from __future__ import annotations

import hashlib
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DataError

PAD, UNK, BOS, EOS, SEP = "<pad>", "<unk>", "<bos>", "<eos>", "<sep>"
SPECIALS = (PAD, UNK, BOS, EOS, SEP)
PAD_ID, UNK_ID, BOS_ID, EOS_ID, SEP_ID = range(5)

_TOKEN_RE = re.compile(r"<(?:pad|unk|bos|eos|sep)>|\w+|[^\w\s]")


def split_words(text):
    """Lowercase, then split on whitespace and punctuation (punctuation kept)."""
    return _TOKEN_RE.findall(text.lower())


@dataclass
class TokenSeq:
    ids: list
    text: str | None = None

    def __len__(self):
        return len(self.ids)


@dataclass
class Vocab:
    tokens: list
    index: dict = field(init=False, repr=False)

    def __post_init__(self):
        if tuple(self.tokens[:5]) != SPECIALS:
            raise DataError(f"vocabulary must start with the reserved tokens {SPECIALS}")
        if len(set(self.tokens)) != len(self.tokens):
            raise DataError("vocabulary contains duplicate tokens")
        self.index = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self):
        return len(self.tokens)

    def id(self, token):
        return self.index.get(token, UNK_ID)

    @classmethod
    def build(cls, texts, max_size=2000):
        """Most frequent words first; ties broken alphabetically."""
        if max_size <= len(SPECIALS):
            raise DataError(f"max_size must exceed {len(SPECIALS)}")
        counts = Counter()
        for text in texts:
            counts.update(w for w in split_words(text) if w not in SPECIALS)
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        words = [w for w, _ in ranked[: max_size - len(SPECIALS)]]
        return cls(list(SPECIALS) + words)

    def save(self, path):
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path):
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(lines)

    def fingerprint(self):
        return hashlib.sha256("\n".join(self.tokens).encode()).hexdigest()[:16]


def tokenize(text, vocab):
    return TokenSeq([vocab.id(w) for w in split_words(text)], text)


def detokenize(seq, vocab):
    ids = seq.ids if isinstance(seq, TokenSeq) else seq
    skip = {PAD_ID, BOS_ID, EOS_ID}
    return " ".join(vocab.tokens[i] for i in ids if i not in skip)
