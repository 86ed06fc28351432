"""Detection metrics: IoU, greedy matching, precision/recall and all-point AP."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class GroundTruthBox:
    box: tuple
    class_id: int


@dataclass(frozen=True)
class Detection:
    box: tuple
    class_id: int
    score: float


def iou(a, b) -> float:
    ix1, iy1 = max(a[0], b[0]), max(a[1], b[1])
    ix2, iy2 = min(a[2], b[2]), min(a[3], b[3])
    inter = max(0.0, ix2 - ix1) * max(0.0, iy2 - iy1)
    if inter <= 0.0:
        return 0.0
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return float(inter / union)


def _rank(dets):
    # stable sort keeps insertion order among equal scores
    return sorted(range(len(dets)), key=lambda i: -dets[i].score)


def match_and_count(dets: Sequence[Detection], gts: Sequence[GroundTruthBox], iou_thr: float = 0.5):
    """Greedy per-class matching of one image's detections to its ground truth.

    Returns ``(tp_flags, gt_matched)``: ``tp_flags[i]`` is True when detection
    ``i`` (in the caller's order) is a true positive; ``gt_matched[j]`` is the
    index of the detection that claimed ground truth ``j`` or -1.
    """
    tp = [False] * len(dets)
    owner = [-1] * len(gts)
    for i in _rank(dets):
        d = dets[i]
        best, best_iou = -1, -1.0
        for j, g in enumerate(gts):
            if g.class_id != d.class_id or owner[j] >= 0:
                continue
            v = iou(d.box, g.box)
            if v >= iou_thr and v > best_iou:
                best, best_iou = j, v
        if best >= 0:
            owner[best] = i
            tp[i] = True
    assert len({o for o in owner if o >= 0}) == sum(o >= 0 for o in owner)
    return tp, owner


def precision(tp: int, fp: int) -> float:
    return tp / (tp + fp) if tp + fp else 0.0


def recall(tp: int, fn: int) -> float:
    return tp / (tp + fn) if tp + fn else 0.0


def average_precision(flags: Sequence[bool], scores: Sequence[float], gt_count: int) -> float:
    """Area under the precision envelope of the score-ranked PR curve."""
    if gt_count <= 0:
        return 0.0
    order = sorted(range(len(flags)), key=lambda i: -scores[i])
    tp_cum = np.cumsum([1.0 if flags[i] else 0.0 for i in order])
    fp_cum = np.cumsum([0.0 if flags[i] else 1.0 for i in order])
    rec = np.concatenate([[0.0], tp_cum / gt_count, [1.0]])
    prec = np.concatenate([[0.0], tp_cum / np.maximum(tp_cum + fp_cum, 1.0), [0.0]])
    for k in range(len(prec) - 2, -1, -1):
        prec[k] = max(prec[k], prec[k + 1])
    steps = np.nonzero(rec[1:] != rec[:-1])[0]
    return float(np.sum((rec[steps + 1] - rec[steps]) * prec[steps + 1]))


@dataclass
class ClassStats:
    ap: float = 0.0
    precision: float = 0.0
    recall: float = 0.0
    tp: int = 0
    fp: int = 0
    fn: int = 0
    gt: int = 0


@dataclass
class EvalReport:
    per_class: dict = field(default_factory=dict)
    precision: float = 0.0
    recall: float = 0.0
    map50: float = 0.0
    score_threshold: float = 0.3
    empty: bool = False
    flops_convention: str = "FLOPs = 2 x MACs"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_class"] = {str(k): asdict(v) for k, v in self.per_class.items()}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def csv_row(self) -> dict:
        return {"precision": self.precision, "recall": self.recall, "map50": self.map50}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["class", "ap", "precision", "recall", "tp", "fp", "fn", "gt"])
        for k, s in self.per_class.items():
            w.writerow([k, repr(s.ap), repr(s.precision), repr(s.recall), s.tp, s.fp, s.fn, s.gt])
        w.writerow(["all", repr(self.map50), repr(self.precision), repr(self.recall), "", "", "", ""])
        return buf.getvalue()


def map50(per_image: Sequence[tuple[Sequence[Detection], Sequence[GroundTruthBox]]], num_classes: int,
          iou_thr: float = 0.5, score_threshold: float = 0.3, class_names=None) -> EvalReport:
    """Evaluate a dataset given ``(detections, ground_truth)`` per image.

    AP uses every supplied detection; the operating-point precision/recall and
    TP/FP/FN counts use only detections scoring at least ``score_threshold``.
    Classes with no ground truth are left out of the mean.
    """
    flags = {c: [] for c in range(num_classes)}
    scores = {c: [] for c in range(num_classes)}
    stats = {c: ClassStats() for c in range(num_classes)}
    for dets, gts in per_image:
        tp, owner = match_and_count(dets, gts, iou_thr)
        for d, f in zip(dets, tp):
            flags[d.class_id].append(f)
            scores[d.class_id].append(d.score)
        for g in gts:
            stats[g.class_id].gt += 1
        kept = [d for d in dets if d.score >= score_threshold]
        tp_op, owner_op = match_and_count(kept, gts, iou_thr)
        for d, f in zip(kept, tp_op):
            if f:
                stats[d.class_id].tp += 1
            else:
                stats[d.class_id].fp += 1
        for g, o in zip(gts, owner_op):
            if o < 0:
                stats[g.class_id].fn += 1

    report = EvalReport(score_threshold=score_threshold)
    aps = []
    for c in range(num_classes):
        s = stats[c]
        s.ap = average_precision(flags[c], scores[c], s.gt)
        s.precision = precision(s.tp, s.fp)
        s.recall = recall(s.tp, s.fn)
        if s.gt > 0:
            aps.append(s.ap)
        name = class_names[c] if class_names else c
        report.per_class[name] = s
    tp = sum(s.tp for s in stats.values())
    fp = sum(s.fp for s in stats.values())
    fn = sum(s.fn for s in stats.values())
    report.precision = precision(tp, fp)
    report.recall = recall(tp, fn)
    report.map50 = float(np.mean(aps)) if aps else 0.0
    report.empty = not aps and not any(flags[c] for c in flags)
    return report
