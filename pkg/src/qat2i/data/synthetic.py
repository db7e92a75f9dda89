"""Procedural shapes dataset: rendered scenes with captions and QA pairs.

Each image holds one or more coloured shapes placed in cells of a grid.
Captions mention every attribute; QA pairs ask about colour, kind and
position, so every answer is checkable against the scene description.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from ..utils import json_digest, numpy_rng
from .records import CaptionRecord, QARecord, write_manifest
from .vocab import build_vocabulary

PALETTE = {
    "red": (220, 40, 40),
    "green": (40, 190, 60),
    "blue": (50, 80, 230),
    "yellow": (235, 220, 50),
    "purple": (150, 60, 200),
    "orange": (245, 140, 30),
    "white": (240, 240, 240),
    "cyan": (50, 210, 220),
}
KINDS = ("circle", "square", "triangle")
CELL_NAMES_2x2 = ("top left", "top right", "bottom left", "bottom right")

CAPTION_TEMPLATES = (
    "a {color} {kind} in the {where}",
    "a {color} {kind}",
    "there is a {color} {kind} on the {where}",
    "the {kind} is {color}",
    "a {kind} in the {where} of the picture",
)
# (template, answer type); yes/no templates take a probe value
QA_TEMPLATES = (
    ("what color is the {kind}?", "color"),
    ("what shape is in the {where}?", "kind"),
    ("where is the {kind}?", "where"),
    ("is the {kind} {probe}?", "yes/no color"),
)


@dataclass
class SyntheticSceneSpec:
    canvas_size: int = 64
    kinds: tuple[str, ...] = KINDS
    colors: tuple[str, ...] = tuple(PALETTE)
    max_shapes: int = 1
    size_range: tuple[float, float] = (0.55, 0.8)  # fraction of the cell
    background: tuple[int, int, int] = (20, 20, 20)
    annotators: int = 10
    noise_rate: float = 0.1
    test_fraction: float = 0.2
    caption_templates: tuple[str, ...] = CAPTION_TEMPLATES
    qa_templates: tuple[tuple[str, str], ...] = QA_TEMPLATES
    cells: tuple[str, ...] = field(default=CELL_NAMES_2x2)

    def __post_init__(self):
        unknown = [c for c in self.colors if c not in PALETTE]
        if unknown:
            raise ValueError(f"colors outside the palette: {unknown}")
        if not 1 <= self.max_shapes <= min(len(self.kinds), len(self.cells)):
            raise ValueError("max_shapes must fit distinct kinds and cells")

    @property
    def n_classes(self) -> int:
        return len(self.kinds) * len(self.colors)

    def class_index(self, shape: dict) -> int:
        return self.kinds.index(shape["kind"]) * len(self.colors) + self.colors.index(shape["color"])


def sample_scene(spec: SyntheticSceneSpec, rng: np.random.Generator) -> list[dict]:
    n = int(rng.integers(1, spec.max_shapes + 1))
    kinds = rng.choice(len(spec.kinds), size=n, replace=False)
    cells = rng.choice(len(spec.cells), size=n, replace=False)
    grid = int(round(np.sqrt(len(spec.cells))))
    cell_px = spec.canvas_size / grid
    shapes = []
    for k, c in zip(kinds, cells):
        size = float(rng.uniform(*spec.size_range)) * cell_px
        slack = cell_px - size
        row, col = divmod(int(c), grid)
        x0 = col * cell_px + float(rng.uniform(0, slack))
        y0 = row * cell_px + float(rng.uniform(0, slack))
        shapes.append({
            "kind": spec.kinds[int(k)],
            "color": spec.colors[int(rng.integers(len(spec.colors)))],
            "where": spec.cells[int(c)],
            "box": [round(x0, 2), round(y0, 2), round(x0 + size, 2), round(y0 + size, 2)],
        })
    return shapes


def render_scene(spec: SyntheticSceneSpec, shapes: list[dict]) -> Image.Image:
    img = Image.new("RGB", (spec.canvas_size, spec.canvas_size), spec.background)
    draw = ImageDraw.Draw(img)
    for s in shapes:
        x0, y0, x1, y1 = s["box"]
        fill = PALETTE[s["color"]]
        if s["kind"] == "circle":
            draw.ellipse((x0, y0, x1, y1), fill=fill)
        elif s["kind"] == "square":
            draw.rectangle((x0, y0, x1, y1), fill=fill)
        elif s["kind"] == "triangle":
            draw.polygon([((x0 + x1) / 2, y0), (x1, y1), (x0, y1)], fill=fill)
        else:
            raise ValueError(f"unknown shape kind {s['kind']!r}")
    return img


def _describe(template: str, shapes: list[dict]) -> str:
    return " and ".join(template.format(**s) for s in shapes)


def scene_captions(spec: SyntheticSceneSpec, shapes: list[dict]) -> list[str]:
    return [_describe(t, shapes) for t in spec.caption_templates]


def _annotate(truth: str, pool: list[str], spec: SyntheticSceneSpec, rng: np.random.Generator) -> list[str]:
    others = [a for a in pool if a != truth]
    max_noise = (spec.annotators - 1) // 2 - 1 if spec.annotators > 2 else 0
    answers = []
    n_noise = 0
    for _ in range(spec.annotators):
        if others and n_noise < max_noise and rng.random() < spec.noise_rate:
            answers.append(others[int(rng.integers(len(others)))])
            n_noise += 1
        else:
            answers.append(truth)
    return answers


def scene_questions(spec: SyntheticSceneSpec, shapes: list[dict],
                    rng: np.random.Generator) -> list[tuple[str, list[str]]]:
    """(question, K annotator answers) for every template and shape."""
    out = []
    for template, kind in spec.qa_templates:
        s = shapes[int(rng.integers(len(shapes)))]
        if kind == "yes/no color":
            probe = s["color"] if rng.random() < 0.5 else spec.colors[int(rng.integers(len(spec.colors)))]
            question = template.format(probe=probe, **s)
            truth, pool = ("yes" if probe == s["color"] else "no"), ["yes", "no"]
        else:
            question = template.format(**s)
            truth = s[kind]
            pool = {"color": list(spec.colors), "kind": list(spec.kinds), "where": list(spec.cells)}[kind]
        out.append((question, _annotate(truth, pool, spec, rng)))
    return out


def generate_synthetic_dataset(spec: SyntheticSceneSpec, n_images: int, seed: int,
                               out_dir: str | Path) -> Path:
    """Render ``n_images`` scenes and write manifests, scenes, vocabulary and meta.

    Re-running with the same arguments produces byte-identical files.
    """
    if n_images < 1:
        raise ValueError("n_images must be >= 1")
    out = Path(out_dir)
    try:
        (out / "images").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot write dataset to {out}: {exc}") from exc

    rng = numpy_rng(seed, "synthetic")
    n_test = int(round(n_images * spec.test_fraction)) if n_images > 1 else 0
    splits = {"train": ([], []), "test": ([], [])}
    scenes = []
    for idx in range(n_images):
        image_id = f"syn{idx:06d}"
        shapes = sample_scene(spec, rng)
        render_scene(spec, shapes).save(out / "images" / f"{image_id}.png", optimize=False)
        split = "test" if idx >= n_images - n_test else "train"
        caps, qas = splits[split]
        caps.extend(CaptionRecord(image_id, text) for text in scene_captions(spec, shapes))
        qas.extend(QARecord(image_id, q, answers) for q, answers in scene_questions(spec, shapes, rng))
        scenes.append({"image_id": image_id, "split": split, "shapes": shapes,
                       "label": spec.class_index(shapes[0])})

    for split, (caps, qas) in splits.items():
        write_manifest(out / f"{split}.jsonl", caps, qas)
    with open(out / "scenes.jsonl", "w") as fh:
        for scene in scenes:
            fh.write(json.dumps(scene) + "\n")

    train_caps, train_qas = splits["train"] if splits["train"][0] else splits["test"]
    vocab = build_vocabulary([c.text for c in train_caps] + [q.qa_text for q in train_qas], min_frequency=1)
    vocab.save(out / "vocab.json")
    answers = sorted({a for _, qas in splits.values() for q in qas for a in q.answers})
    meta = {
        "kind": "synthetic",
        "seed": seed,
        "n_images": n_images,
        "counts": {split: {"images": len({c.image_id for c in caps}), "captions": len(caps), "qa": len(qas)}
                   for split, (caps, qas) in splits.items()},
        "vocab_hash": vocab.hash,
        "n_classes": spec.n_classes,
        "answers": answers,
        "spec": asdict(spec),
        "spec_hash": json_digest(asdict(spec)),
    }
    (out / "dataset.meta").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
    return out
