"""Toy anchor-free detector: backbone -> pyramid -> per-scale 1x1 head.

Each pyramid cell predicts ``num_classes`` logits followed by four
stride-normalized distances (l, t, r, b) from the cell center to the box
edges. A ground-truth box is assigned to the one cell containing its center
on the level whose stride is closest (in log2) to sqrt(area).
"""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .aspn import Aspn, AspnConfig
from .config import ExperimentConfig
from .metrics import Detection, GroundTruthBox, iou
from .mrdcb import Backbone
from .nn import Conv2d, Module
from .tensor.core import Tensor, record

STRIDES = (8, 16, 32)


class DetectHead(Module):
    def __init__(self, width: int, num_classes: int, strides=STRIDES):
        self.num_classes = num_classes
        self.strides = tuple(strides)
        self.convs = [Conv2d(width, num_classes + 4, 1) for _ in self.strides]

    def set_class_prior(self, prior: float) -> None:
        """Start every class score at ``prior`` so the many empty cells do not dominate early training."""
        for conv in self.convs:
            conv.bias.data[:self.num_classes] = -math.log((1.0 - prior) / prior)

    def forward(self, *levels):
        return [conv(p) for conv, p in zip(self.convs, levels)]


class Detector(Module):
    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.backbone = Backbone(cfg.backbone)
        self.aspn = Aspn(AspnConfig(cfg.aspn.width, cfg.backbone.out_channels, cfg.aspn.attention,
                                    cfg.aspn.lssm_kernel))
        self.head = DetectHead(cfg.aspn.width, cfg.head.num_classes)

    def forward(self, images):
        s3, s4, s5 = self.backbone(images)
        return self.head(*self.aspn(s3, s4, s5))


def build_model(cfg: ExperimentConfig, seed: int | None = None) -> Detector:
    model = Detector(cfg)
    model.initialize(cfg.train.seed if seed is None else seed)
    if cfg.head.class_prior is not None:
        model.head.set_class_prior(cfg.head.class_prior)
    return model.astype(np.dtype(cfg.train.dtype))


# ---------------------------------------------------------------------------
# target assignment
# ---------------------------------------------------------------------------

def level_for(box, strides=STRIDES) -> int:
    size = math.sqrt(max((box[2] - box[0]) * (box[3] - box[1]), 1e-12))
    dist = [abs(math.log2(size) - math.log2(s)) for s in strides]
    return int(np.argmin(dist))


def assign_targets(gts_per_image: Sequence[Sequence[GroundTruthBox]], image_hw, num_classes: int,
                   strides=STRIDES):
    """Per level: class targets [N,nc,h,w], offset targets [N,4,h,w], positive mask [N,h,w].

    When two boxes land on the same cell both classes are marked and the
    smaller box supplies the offset target.
    """
    n = len(gts_per_image)
    ih, iw = image_hw
    out = []
    for s in strides:
        gh, gw = ih // s, iw // s
        out.append((np.zeros((n, num_classes, gh, gw)), np.zeros((n, 4, gh, gw)),
                    np.zeros((n, gh, gw), dtype=bool), np.full((n, gh, gw), np.inf)))
    for b, gts in enumerate(gts_per_image):
        for g in gts:
            x1, y1, x2, y2 = g.box
            lvl = level_for(g.box, strides)
            s = strides[lvl]
            cls_t, reg_t, pos, area = out[lvl]
            gh, gw = pos.shape[1:]
            i = min(max(int(((y1 + y2) / 2) // s), 0), gh - 1)
            j = min(max(int(((x1 + x2) / 2) // s), 0), gw - 1)
            cls_t[b, g.class_id, i, j] = 1.0
            a = (x2 - x1) * (y2 - y1)
            if a < area[b, i, j]:
                area[b, i, j] = a
                cx, cy = (j + 0.5) * s, (i + 0.5) * s
                reg_t[b, :, i, j] = ((cx - x1) / s, (cy - y1) / s, (x2 - cx) / s, (y2 - cy) / s)
            pos[b, i, j] = True
    return [(c, r, p) for c, r, p, _ in out]


def encode(gts_per_image, image_hw, num_classes: int, strides=STRIDES, logit: float = 20.0):
    """Raw maps that decode back to ``gts_per_image`` (inverse of :func:`decode`)."""
    maps = []
    for cls_t, reg_t, pos in assign_targets(gts_per_image, image_hw, num_classes, strides):
        logits = np.where(cls_t > 0, logit, -logit)
        maps.append(np.concatenate([logits, reg_t], axis=1))
    return maps


# ---------------------------------------------------------------------------
# decoding
# ---------------------------------------------------------------------------

def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def nms(dets: list[Detection], iou_thr: float) -> list[Detection]:
    """Greedy per-class suppression; input order breaks score ties."""
    order = sorted(range(len(dets)), key=lambda i: -dets[i].score)
    kept: list[Detection] = []
    for i in order:
        d = dets[i]
        if all(k.class_id != d.class_id or iou(k.box, d.box) <= iou_thr for k in kept):
            kept.append(d)
    return kept


def decode(maps, num_classes: int, score_threshold: float = 0.3, nms_iou: float = 0.5, strides=STRIDES,
           image_hw=None, max_detections: int | None = None) -> list[list[Detection]]:
    """Turn raw head maps into per-image detection lists (sorted by score)."""
    maps = [m.data if isinstance(m, Tensor) else np.asarray(m) for m in maps]
    n = maps[0].shape[0]
    if image_hw is None:
        image_hw = (maps[0].shape[2] * strides[0], maps[0].shape[3] * strides[0])
    ih, iw = image_hw
    results = []
    for b in range(n):
        dets = []
        for m, s in zip(maps, strides):
            scores = _sigmoid(m[b, :num_classes].astype(np.float64))
            off = np.maximum(m[b, num_classes:num_classes + 4].astype(np.float64), 0.0)
            cs, ii, jj = np.nonzero(scores >= score_threshold)
            for c, i, j in zip(cs, ii, jj):
                cx, cy = (j + 0.5) * s, (i + 0.5) * s
                x1 = min(max(cx - off[0, i, j] * s, 0.0), iw)
                y1 = min(max(cy - off[1, i, j] * s, 0.0), ih)
                x2 = min(max(cx + off[2, i, j] * s, 0.0), iw)
                y2 = min(max(cy + off[3, i, j] * s, 0.0), ih)
                if x2 > x1 and y2 > y1:
                    dets.append(Detection((float(x1), float(y1), float(x2), float(y2)), int(c),
                                          float(scores[c, i, j])))
        kept = nms(dets, nms_iou)
        if max_detections is not None:
            kept = kept[:max_detections]
        results.append(kept)
    return results


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------

def _smooth_l1(d, beta=1.0):
    ad = np.abs(d)
    return np.where(ad < beta, 0.5 * d * d / beta, ad - 0.5 * beta), np.where(ad < beta, d / beta, np.sign(d))


def detection_loss(maps: Sequence[Tensor], gts_per_image, image_hw, num_classes: int, reg_weight: float = 1.0,
                   strides=STRIDES):
    """Sum of per-cell binary cross-entropy and positive-cell smooth-L1, over max(1, #positives).

    Returns ``(loss, {"cls": ..., "reg": ..., "total": ...})``.
    """
    targets = assign_targets(gts_per_image, image_hw, num_classes, strides)
    norm = max(1, int(sum(p.sum() for _, _, p in targets)))
    cls_sum = 0.0
    reg_sum = 0.0
    grads = []
    for m, (cls_t, reg_t, pos) in zip(maps, targets):
        z = m.data[:, :num_classes].astype(np.float64)
        off = m.data[:, num_classes:num_classes + 4].astype(np.float64)
        bce = np.maximum(z, 0.0) - z * cls_t + np.log1p(np.exp(-np.abs(z)))
        cls_sum += float(bce.sum())
        mask = pos[:, None].astype(np.float64)
        val, dval = _smooth_l1(off - reg_t)
        reg_sum += float((val * mask).sum())
        g = np.concatenate([_sigmoid(z) - cls_t, reg_weight * dval * mask], axis=1) / norm
        grads.append(g.astype(m.dtype))
    cls = cls_sum / norm
    reg = reg_sum / norm
    total = cls + reg_weight * reg
    dtype = maps[0].dtype
    out = Tensor(np.asarray(total, dtype=dtype).reshape(()))

    def backward(g):
        return tuple(gi * g for gi in grads)

    return record("detection_loss", out, tuple(maps), backward), {"total": total, "cls": cls, "reg": reg}


def to_ground_truth(annotations, class_index) -> list[GroundTruthBox]:
    return [GroundTruthBox(tuple(float(v) for v in a["box"]), class_index[a["class"]]) for a in annotations]


def model_forward(model: Detector, images):
    return model(images)


def flops_input_shape(cfg: ExperimentConfig, batch: int = 1):
    return (batch, 3, cfg.data.image_size, cfg.data.image_size)


__all__ = [
    "Detector", "DetectHead", "STRIDES", "assign_targets", "build_model", "decode", "detection_loss",
    "encode", "level_for", "model_forward", "nms", "to_ground_truth",
]
