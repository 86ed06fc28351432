"""Synthetic bare-board images with short / open / hole-deviation defects.

Geometry is defined on a 64-pixel grid and scaled by ``u = size / 64``:
four horizontal copper traces (6u wide, 16u pitch, centered on rows 4u or 12u
mod 16u, optional Manhattan jog of 3u),
a few well-formed pads (copper disk of radius 5u around a 2u drill hole),
then the defects:

* ``short``  -- a copper bridge 3u-5u wide joining two neighbouring traces,
* ``open``   -- a 5u-9u substrate gap cut through a trace,
* ``circle`` -- a pad whose copper disk sits 3u off its drill hole.

Half of the images are transposed so traces also run vertically. Each
image is drawn from its own generator seeded with ``(seed, index)``, so the
output does not depend on the order in which images are rendered.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..detect import STRIDES, level_for
from ..errors import ConfigError
from .manifest import Annotation, DatasetManifest, ImageRecord, split, write_manifest
from .pnm import write_pnm

CLASSES = ("short", "open", "circle")
# reference dataset: 800 images; images containing each class; defect totals per class
REFERENCE_IMAGES = 800
REFERENCE_IMAGE_COUNTS = (541, 660, 228)
REFERENCE_DEFECT_COUNTS = (1867, 1926, 571)

SUBSTRATE = np.array([34.0, 78.0, 46.0])
COPPER = np.array([214.0, 172.0, 92.0])
HOLE = np.array([14.0, 14.0, 16.0])


@dataclass
class GenConfig:
    count: int = 800
    image_size: int = 64
    seed: int = 0
    image_freq: tuple = tuple(c / REFERENCE_IMAGES for c in REFERENCE_IMAGE_COUNTS)
    defects_per_image: tuple = tuple(c / REFERENCE_IMAGES for c in REFERENCE_DEFECT_COUNTS)
    max_per_class: int = 6
    train_frac: float = 0.8
    noise: float = 6.0

    def __post_init__(self):
        if self.count < 0:
            raise ConfigError("count must be >= 0")
        if self.image_size < 64 or self.image_size % 32:
            raise ConfigError("image_size must be a multiple of 32 and at least 64")
        if len(self.image_freq) != len(CLASSES) or len(self.defects_per_image) != len(CLASSES):
            raise ConfigError("need one frequency and one defect rate per class")
        if any(not 0.0 <= f <= 1.0 for f in self.image_freq):
            raise ConfigError("image frequencies must lie in [0, 1]")
        if any(d < f for d, f in zip(self.defects_per_image, self.image_freq)):
            raise ConfigError("each image holding a class carries at least one defect of it")


def plan_counts(cfg: GenConfig) -> np.ndarray:
    """Defects of each class per image, shape [count, num_classes].

    Every class picks its own random subset of exactly round(freq·count)
    images, independently of the other classes, and spreads
    round(rate·count) defects over that subset (one each, the remainder
    multinomially, capped at ``max_per_class``).
    """
    n = cfg.count
    rng = np.random.default_rng([cfg.seed, 0x5EED])
    plan = np.zeros((n, len(CLASSES)), dtype=np.int64)
    for c, (freq, rate) in enumerate(zip(cfg.image_freq, cfg.defects_per_image)):
        k = int(round(freq * n))
        if k == 0:
            continue
        chosen = np.sort(rng.choice(n, size=k, replace=False))
        total = min(int(round(rate * n)), k * cfg.max_per_class)
        per = np.ones(k, dtype=np.int64) + rng.multinomial(total - k, np.full(k, 1.0 / k))
        overflow = int(np.maximum(per - cfg.max_per_class, 0).sum())
        per = np.minimum(per, cfg.max_per_class)
        while overflow:
            room = np.nonzero(per < cfg.max_per_class)[0]
            j = room[rng.integers(len(room))]
            per[j] += 1
            overflow -= 1
        plan[chosen, c] = per
    return plan


class _Canvas:
    """Geometry of one image before the defects are painted."""

    def __init__(self, size: int, rng: np.random.Generator):
        self.size = size
        self.u = size / 64.0
        self.rng = rng
        self.half = self.px(3)
        # trace centers sit on rows that are also head-cell centers at 64x64
        pitch, shift = self.px(16), self.px(8) * int(rng.integers(2))
        self.rows = [self.px(4) + k * pitch + shift for k in range(4)]
        self.jogs = [None] * 4  # (column, offset)
        for k in range(4):
            if rng.random() < 0.4:
                xj = int(rng.integers(self.px(16), self.px(48)))
                d = self.px(3) * (1 if rng.random() < 0.5 else -1)
                self.jogs[k] = (xj, d)
                if not self._separated():
                    self.jogs[k] = None
        self.boxes: list[tuple] = []
        self.cells: set = set()

    def px(self, v: float) -> int:
        return max(1, int(round(v * self.u)))

    def center(self, k: int, x: float) -> int:
        jog = self.jogs[k]
        return self.rows[k] + (jog[1] if jog and x >= jog[0] else 0)

    def _separated(self) -> bool:
        xs = range(self.size)
        return all(self.center(k + 1, x) - self.center(k, x) >= self.px(13) for k in range(3) for x in xs)

    def near_jog(self, k: int, x1: int, x2: int, margin: float) -> bool:
        jog = self.jogs[k]
        if jog is None:
            return False
        m = self.px(margin)
        return x1 - m <= jog[0] < x2 + m

    def trace_mask(self) -> np.ndarray:
        s, h = self.size, self.half
        mask = np.zeros((s, s), dtype=bool)
        for k in range(4):
            jog = self.jogs[k]
            for x in range(s):
                c = self.center(k, x)
                mask[max(c - h, 0):max(c + h, 0), x] = True
            if jog:
                xj, d = jog
                lo, hi = sorted((self.rows[k], self.rows[k] + d))
                mask[max(lo - h, 0):hi + h, max(xj - h, 0):xj + h] = True
        return mask

    def reserve(self, box) -> bool:
        """Claim ``box`` unless it leaves the image, touches a claimed box, or misfits the head.

        The head regresses non-negative distances from the center of the
        cell holding the box center, so that cell's center must lie inside
        the box, and no two boxes may share a cell.
        """
        x1, y1, x2, y2 = box
        if x1 < 0 or y1 < 0 or x2 > self.size or y2 > self.size:
            return False
        for b in self.boxes:
            if x1 <= b[2] and b[0] <= x2 and y1 <= b[3] and b[1] <= y2:
                return False
        lvl = level_for(box)
        s = STRIDES[lvl]
        cell = (lvl, int(((y1 + y2) / 2) // s), int(((x1 + x2) / 2) // s))
        cy, cx = (cell[1] + 0.5) * s, (cell[2] + 0.5) * s
        if not (x1 <= cx <= x2 and y1 <= cy <= y2) or cell in self.cells:
            return False
        self.boxes.append(box)
        self.cells.add(cell)
        return True


def _disk(size, cy, cx, r):
    yy, xx = np.mgrid[0:size, 0:size]
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r


def _box_of(mask) -> tuple:
    ys, xs = np.nonzero(mask)
    return (int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1)


def _rect(size, x1, y1, x2, y2):
    m = np.zeros((size, size), dtype=bool)
    m[y1:y2, x1:x2] = True
    return m


def _propose(cls: str, cv: _Canvas):
    """One candidate (mask, paint) for a defect, or None if it cannot fit."""
    rng, s, h = cv.rng, cv.size, cv.half
    if cls == "short":
        k = int(rng.integers(3))
        bw = cv.px(rng.integers(3, 6))
        x = int(rng.integers(cv.px(2), s - cv.px(2) - bw))
        if cv.near_jog(k, x, x + bw, 4) or cv.near_jog(k + 1, x, x + bw, 4):
            return None
        top, bot = cv.center(k, x) + h, cv.center(k + 1, x) - h
        if bot <= top:
            return None
        return _rect(s, x, top, x + bw, bot), COPPER
    if cls == "open":
        k = int(rng.integers(4))
        gl = cv.px(rng.integers(5, 10))
        x = int(rng.integers(cv.px(2), s - cv.px(2) - gl))
        if cv.near_jog(k, x, x + gl, 4):
            return None
        c = cv.center(k, x)
        if c - h < 0 or c + h > s:
            return None
        return _rect(s, x, c - h, x + gl, c + h), SUBSTRATE
    # circle: copper disk displaced from its drill hole
    k = int(rng.integers(4))
    x = int(rng.integers(cv.px(7), s - cv.px(7)))
    if cv.near_jog(k, x, x + 1, 9):
        return None
    cy = cv.center(k, x)
    ang = rng.integers(8) * math.pi / 4
    off = cv.px(3)
    py, px_ = cy + round(off * math.sin(ang)), x + round(off * math.cos(ang))
    pad = _disk(s, py, px_, cv.px(5))
    hole = _disk(s, cy, x, cv.px(2))
    return pad | hole, (pad, hole)


def render_image(index: int, counts, cfg: GenConfig):
    """Render image ``index`` holding ``counts[c]`` defects of class c.

    Returns the uint8 HxWx3 image and the list of annotations.
    """
    rng = np.random.default_rng([cfg.seed, index])
    s = cfg.image_size
    cv = _Canvas(s, rng)
    img = np.broadcast_to(SUBSTRATE, (s, s, 3)).copy()
    img[cv.trace_mask()] = COPPER

    # well-formed pads first so defects steer clear of them
    for _ in range(int(rng.integers(0, 3))):
        for _attempt in range(20):
            k = int(rng.integers(4))
            x = int(rng.integers(cv.px(7), s - cv.px(7)))
            if cv.near_jog(k, x, x + 1, 9):
                continue
            cy = cv.center(k, x)
            pad = _disk(s, cy, x, cv.px(5))
            if cv.reserve(_box_of(pad)):
                img[pad] = COPPER
                img[_disk(s, cy, x, cv.px(2))] = HOLE
                break

    order = [c for c, n in enumerate(counts) for _ in range(int(n))]
    rng.shuffle(order)
    placed = []
    for c in order:
        for _attempt in range(60):
            prop = _propose(CLASSES[c], cv)
            if prop is None:
                continue
            mask, paint = prop
            box = _box_of(mask)
            if not cv.reserve(box):
                continue
            if isinstance(paint, tuple):
                img[paint[0]] = COPPER
                img[paint[1]] = HOLE
            else:
                img[mask] = paint
            placed.append((c, mask, paint, box))
            break

    # re-scan: every defect's pixels must still carry its paint and its box must be tight
    for c, mask, paint, box in placed:
        if isinstance(paint, tuple):
            ok = np.all(img[paint[1]] == HOLE) and np.all(img[paint[0] & ~paint[1]] == COPPER)
        else:
            ok = np.all(img[mask] == paint)
        if not ok or _box_of(mask) != box:
            raise AssertionError(f"image {index}: {CLASSES[c]} defect at {box} was overpainted")

    noisy = img + rng.normal(0.0, cfg.noise, size=img.shape) + rng.normal(0.0, 4.0)
    out = np.clip(np.rint(noisy), 0, 255).astype(np.uint8)
    anns = [Annotation(CLASSES[c], tuple(float(v) for v in box)) for c, _, _, box in placed]
    if rng.random() < 0.5:
        out = np.ascontiguousarray(out.transpose(1, 0, 2))
        anns = [Annotation(a.cls, (a.box[1], a.box[0], a.box[3], a.box[2])) for a in anns]
    return out, anns


def generate_dataset(cfg: GenConfig, out_dir) -> DatasetManifest:
    """Render ``cfg.count`` images into ``out_dir/images`` and write ``out_dir/manifest.jsonl``.

    The output directory is created and probed for writability before any
    image is rendered; the manifest is written last. A count of zero writes
    nothing.
    """
    out_dir = Path(out_dir)
    manifest = DatasetManifest([], CLASSES, cfg.seed, out_dir)
    if cfg.count == 0:
        return manifest
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    if not os.access(out_dir / "images", os.W_OK) or not os.access(out_dir, os.W_OK):
        raise PermissionError(f"output directory {out_dir} is not writable")

    plan = plan_counts(cfg)
    for i in range(cfg.count):
        img, anns = render_image(i, plan[i], cfg)
        name = f"images/{i:06d}.ppm"
        write_pnm(out_dir / name, img)
        manifest.records.append(ImageRecord(name, cfg.image_size, cfg.image_size, "train", anns))

    train, _ = split(manifest, cfg.train_frac, cfg.seed)
    train_ids = {id(r) for r in train.records}
    for r in manifest.records:
        r.split = "train" if id(r) in train_ids else "val"
    write_manifest(manifest, out_dir / "manifest.jsonl")
    return manifest
