"""Caption/QA records, QA concatenation and manifest files."""

from __future__ import annotations

import json
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple, Sequence

from .vocab import Vocabulary


@dataclass
class CaptionRecord:
    image_id: str
    text: str
    token_ids: list[int] = field(default_factory=list)

    @property
    def length(self) -> int:
        return len(self.token_ids)


@dataclass
class QARecord:
    image_id: str
    question: str
    answers: list[str]
    majority_answer: str = ""
    qa_text: str = ""
    qa_token_ids: list[int] = field(default_factory=list)
    question_token_ids: list[int] = field(default_factory=list)

    def __post_init__(self):
        if not self.answers:
            raise ValueError("QA record needs at least one answer")
        if not self.majority_answer:
            self.majority_answer = majority_answer(self.answers)
        if not self.qa_text:
            self.qa_text = concatenate_qa(self.question, self.majority_answer)

    @property
    def length(self) -> int:
        return len(self.qa_token_ids)


def concatenate_qa(question: str, majority_answer: str) -> str:
    """Join a question and its answer into one caption-like string."""
    q, a = question.strip(), majority_answer.strip()
    if not q or not a:
        raise ValueError("degenerate QA pair")
    return f"{q.lower()} {a.lower()}"


def majority_answer(answers: Sequence[str]) -> str:
    if not answers:
        raise ValueError("answers must be non-empty")
    counts = Counter(a.strip().lower() for a in answers)
    best = max(counts.values())
    return min(a for a, c in counts.items() if c == best)


class ComplementaryPair(NamedTuple):
    question: str
    image_id_a: str
    answer_a: str
    image_id_b: str
    answer_b: str


def index_complementary_pairs(records: Iterable[QARecord]) -> list[ComplementaryPair]:
    """All pairs of records asking the same question about different images
    with different majority answers. Each unordered pair appears once."""
    by_question: dict[str, list[QARecord]] = defaultdict(list)
    for rec in records:
        by_question[rec.question].append(rec)
    entries = []
    for question in sorted(by_question):
        group = sorted(by_question[question], key=lambda r: (r.image_id, r.majority_answer))
        for i, a in enumerate(group):
            for b in group[i + 1:]:
                if a.image_id != b.image_id and a.majority_answer != b.majority_answer:
                    entries.append(ComplementaryPair(question, a.image_id, a.majority_answer,
                                                     b.image_id, b.majority_answer))
    return entries


def tokenize_records(captions: Sequence[CaptionRecord], qa_records: Sequence[QARecord],
                     vocab: Vocabulary) -> None:
    """Fill token id fields in place. Zero-length encodings map to a single unk."""
    for rec in captions:
        rec.token_ids = vocab.encode(rec.text) or [vocab.unk_id]
    for rec in qa_records:
        rec.qa_token_ids = vocab.encode(rec.qa_text) or [vocab.unk_id]
        rec.question_token_ids = vocab.encode(rec.question) or [vocab.unk_id]


# manifest: one JSON object per line {image_id, type, text, question, answers}

def write_manifest(path: str | Path, captions: Sequence[CaptionRecord],
                   qa_records: Sequence[QARecord]) -> None:
    with open(path, "w") as fh:
        for rec in captions:
            fh.write(json.dumps({"image_id": rec.image_id, "type": "caption", "text": rec.text,
                                 "question": None, "answers": None}) + "\n")
        for rec in qa_records:
            fh.write(json.dumps({"image_id": rec.image_id, "type": "qa", "text": rec.qa_text,
                                 "question": rec.question, "answers": list(rec.answers)}) + "\n")


def iter_manifest(path: str | Path) -> Iterator[dict]:
    with open(path) as fh:
        for line in fh:
            if line.strip():
                yield json.loads(line)


def read_manifest(path: str | Path) -> tuple[list[CaptionRecord], list[QARecord]]:
    captions, qa = [], []
    for row in iter_manifest(path):
        if row["type"] == "caption":
            captions.append(CaptionRecord(row["image_id"], row["text"]))
        elif row["type"] == "qa":
            rec = QARecord(row["image_id"], row["question"], row["answers"])
            if rec.qa_text != row["text"]:
                raise ValueError(f"manifest QA text mismatch for image {row['image_id']}")
            qa.append(rec)
        else:
            raise ValueError(f"unknown manifest record type {row['type']!r}")
    return captions, qa
