"""JSON-lines dataset manifest.

Line 1 is a header object (``format``, ``classes``, ``seed``); each further
line is one image record::

    {"image": "images/000000.ppm", "width": 64, "height": 64, "split": "train",
     "annotations": [{"class": "short", "box": [x1, y1, x2, y2]}]}

Boxes are pixel-edge coordinates with x1 < x2 and y1 < y2 inside the image.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ManifestError

FORMAT = "mrcdetr-manifest/1"
SPLITS = ("train", "val")


@dataclass
class Annotation:
    cls: str
    box: tuple

    def to_dict(self):
        return {"class": self.cls, "box": [float(v) for v in self.box]}


@dataclass
class ImageRecord:
    image: str
    width: int
    height: int
    split: str = "train"
    annotations: list = field(default_factory=list)

    def to_dict(self):
        return {"image": self.image, "width": self.width, "height": self.height, "split": self.split,
                "annotations": [a.to_dict() for a in self.annotations]}


@dataclass
class DatasetManifest:
    records: list
    classes: tuple
    seed: int = 0
    root: Path | None = None

    def class_index(self) -> dict:
        return {c: i for i, c in enumerate(self.classes)}

    def subset(self, split: str) -> "DatasetManifest":
        return DatasetManifest([r for r in self.records if r.split == split], self.classes, self.seed, self.root)

    def __len__(self):
        return len(self.records)


def _parse_record(obj, classes, lineno) -> ImageRecord:
    if not isinstance(obj, dict):
        raise ManifestError("record must be a JSON object", lineno)
    for key in ("image", "width", "height", "annotations"):
        if key not in obj:
            raise ManifestError(f"missing field {key!r}", lineno)
    w, h = obj["width"], obj["height"]
    if not (isinstance(w, int) and isinstance(h, int)) or w <= 0 or h <= 0:
        raise ManifestError(f"bad image size {w}x{h}", lineno)
    split = obj.get("split", "train")
    if split not in SPLITS:
        raise ManifestError(f"split must be one of {SPLITS}, got {split!r}", lineno)
    anns = []
    for k, a in enumerate(obj["annotations"]):
        if not isinstance(a, dict) or "class" not in a or "box" not in a:
            raise ManifestError(f"annotation {k} needs 'class' and 'box'", lineno)
        if a["class"] not in classes:
            raise ManifestError(f"annotation {k}: unknown class {a['class']!r}", lineno)
        box = a["box"]
        if not isinstance(box, list) or len(box) != 4:
            raise ManifestError(f"annotation {k}: box must be [x1, y1, x2, y2]", lineno)
        x1, y1, x2, y2 = (float(v) for v in box)
        if not (x2 > x1 and y2 > y1):
            raise ManifestError(f"annotation {k}: box {box} has non-positive area", lineno)
        if x1 < 0 or y1 < 0 or x2 > w or y2 > h:
            raise ManifestError(f"annotation {k}: box {box} leaves the {w}x{h} image", lineno)
        anns.append(Annotation(a["class"], (x1, y1, x2, y2)))
    return ImageRecord(str(obj["image"]), w, h, split, anns)


def load_manifest(path, check_images: bool = True) -> DatasetManifest:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.jsonl"
    lines = path.read_text().splitlines()
    if not lines:
        raise ManifestError("empty manifest (no header)", 1)
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ManifestError(f"malformed header: {exc.msg}", 1) from None
    if not isinstance(header, dict) or header.get("format") != FORMAT or "classes" not in header:
        raise ManifestError(f"header must declare format {FORMAT!r} and classes", 1)
    classes = tuple(header["classes"])
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"malformed JSON: {exc.msg}", lineno) from None
        rec = _parse_record(obj, classes, lineno)
        if check_images and not (path.parent / rec.image).is_file():
            raise ManifestError(f"image {rec.image!r} not found", lineno)
        records.append(rec)
    return DatasetManifest(records, classes, int(header.get("seed", 0)), path.parent)


def write_manifest(manifest: DatasetManifest, path) -> None:
    path = Path(path)
    header = {"format": FORMAT, "classes": list(manifest.classes), "seed": manifest.seed}
    lines = [json.dumps(header, sort_keys=True)]
    lines += [json.dumps(r.to_dict(), sort_keys=True) for r in manifest.records]
    path.write_text("\n".join(lines) + "\n")


def split(manifest: DatasetManifest, train_frac: float = 0.8, seed: int = 0):
    """Seeded shuffle, then the first round(train_frac·n) records become train."""
    n = len(manifest.records)
    order = np.random.default_rng(seed).permutation(n)
    cut = int(round(train_frac * n))
    train = [manifest.records[i] for i in order[:cut]]
    val = [manifest.records[i] for i in order[cut:]]
    mk = lambda rs: DatasetManifest(rs, manifest.classes, manifest.seed, manifest.root)
    return mk(train), mk(val)
