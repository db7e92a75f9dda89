"""Ingest COCO-style caption files and VQA-2.0-style question/annotation files.

Only a small field subset is read:

* captions file: ``annotations[].image_id``, ``annotations[].caption``
* questions file: ``questions[].question_id``, ``.image_id``, ``.question``
* annotations file: ``annotations[].question_id``, ``.answers[].answer``
"""

from __future__ import annotations

import json
from pathlib import Path

from .records import CaptionRecord, QARecord, read_manifest, write_manifest
from .vocab import build_vocabulary


def read_coco_captions(path: str | Path) -> list[CaptionRecord]:
    data = json.loads(Path(path).read_text())
    return [CaptionRecord(str(a["image_id"]), a["caption"].strip())
            for a in data["annotations"] if a["caption"].strip()]


def read_vqa(questions_path: str | Path, annotations_path: str | Path) -> list[QARecord]:
    questions = json.loads(Path(questions_path).read_text())["questions"]
    answers = {a["question_id"]: [x["answer"] for x in a["answers"]]
               for a in json.loads(Path(annotations_path).read_text())["annotations"]}
    records = []
    for q in questions:
        ans = [a for a in answers.get(q["question_id"], []) if a.strip()]
        if ans and q["question"].strip():
            records.append(QARecord(str(q["image_id"]), q["question"].strip(), ans))
    return records


def prepare_dataset(out_dir: str | Path, split: str, captions_path, questions_path, annotations_path,
                    image_pattern: str, min_frequency: int = 5) -> Path:
    """Write ``{split}.jsonl`` and, for the train split, the vocabulary.

    ``image_pattern`` is a format string with ``{image_id}``, relative to
    ``out_dir`` or absolute, e.g. ``/data/coco/train2014/COCO_train2014_{image_id:012d}.jpg``.
    Numeric ids are formatted as integers. Each split keeps its own pattern.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    captions = read_coco_captions(captions_path)
    qa = read_vqa(questions_path, annotations_path)
    write_manifest(out / f"{split}.jsonl", captions, qa)

    meta_path = out / "dataset.meta"
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {"kind": "real", "counts": {}}
    meta.setdefault("image_patterns", {})[split] = image_pattern
    meta["counts"][split] = {"images": len({c.image_id for c in captions}),
                             "captions": len(captions), "qa": len(qa)}
    if split == "train":
        vocab = build_vocabulary([c.text for c in captions] + [r.qa_text for r in qa], min_frequency)
        vocab.save(out / "vocab.json")
        meta["vocab_hash"] = vocab.hash
    answers = set(meta.get("answers", []))
    for s in meta["counts"]:
        if (out / f"{s}.jsonl").exists():
            answers.update(a for r in read_manifest(out / f"{s}.jsonl")[1] for a in r.answers)
    meta["answers"] = sorted(answers)
    meta_path.write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
    return out
