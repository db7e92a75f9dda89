"""Tokenization and word vocabularies."""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from ..utils import json_digest

PAD, UNK, END = "<pad>", "<unk>", "<end>"
RESERVED = (PAD, UNK, END)
MAX_TEXT_LENGTH = 20

_TOKEN_RE = re.compile(r"[a-z0-9']+|[^\sa-z0-9']")
_ATTACHING = set(".,?!;:")


def tokenize(text: str) -> list[str]:
    """Lowercase word/punctuation tokenizer."""
    return _TOKEN_RE.findall(text.lower())


def detokenize(tokens: Sequence[str]) -> str:
    out: list[str] = []
    for tok in tokens:
        if out and tok in _ATTACHING:
            out[-1] = out[-1] + tok
        else:
            out.append(tok)
    return " ".join(out)


def normalize_text(text: str) -> str:
    return " ".join(text.lower().split())


@dataclass
class Vocabulary:
    token_to_id: dict[str, int]
    min_frequency: int = 1
    id_to_token: dict[int, str] = field(init=False)

    def __post_init__(self):
        self.id_to_token = {i: t for t, i in self.token_to_id.items()}
        if len(self.id_to_token) != len(self.token_to_id):
            raise ValueError("vocabulary ids are not unique")
        if self.token_to_id.get(PAD) != 0:
            raise ValueError("pad token must have id 0")

    pad_id = property(lambda self: self.token_to_id[PAD])
    unk_id = property(lambda self: self.token_to_id[UNK])
    end_id = property(lambda self: self.token_to_id[END])

    def __len__(self) -> int:
        return len(self.token_to_id)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def encode(self, text: str, max_length: int = MAX_TEXT_LENGTH) -> list[int]:
        ids = [self.token_to_id.get(t, self.unk_id) for t in tokenize(text)]
        return ids[:max_length]

    def decode(self, ids: Iterable[int]) -> str:
        toks = [self.id_to_token[int(i)] for i in ids if int(i) != self.pad_id]
        return detokenize(toks)

    @property
    def hash(self) -> str:
        return json_digest(sorted(self.token_to_id.items(), key=lambda kv: kv[1]))

    def to_json(self) -> dict:
        return {"min_frequency": self.min_frequency, "tokens": [self.id_to_token[i] for i in range(len(self))]}

    @classmethod
    def from_json(cls, obj: dict) -> "Vocabulary":
        return cls({t: i for i, t in enumerate(obj["tokens"])}, min_frequency=obj["min_frequency"])

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        return cls.from_json(json.loads(Path(path).read_text()))


def build_vocabulary(texts: Iterable[str], min_frequency: int = 1) -> Vocabulary:
    """Ids for every token seen at least ``min_frequency`` times.

    Ordering is by frequency (descending) then lexicographic, after the
    reserved pad/unk/end ids 0, 1, 2.
    """
    counts: Counter[str] = Counter()
    n = 0
    for text in texts:
        n += 1
        counts.update(tokenize(text))
    if n == 0 or not counts:
        raise ValueError("empty corpus")
    kept = sorted((t for t, c in counts.items() if c >= min_frequency and t not in RESERVED),
                  key=lambda t: (-counts[t], t))
    token_to_id = {tok: i for i, tok in enumerate(RESERVED)}
    for tok in kept:
        token_to_id[tok] = len(token_to_id)
    return Vocabulary(token_to_id, min_frequency=min_frequency)
