"""Training and evaluation drivers for the toy detector.

Everything random is drawn from generators seeded with ``(seed, epoch)``, so
an interrupted run resumed from its checkpoint replays the same batches and
a repeated run writes a bitwise-identical metric log.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import checkpoint
from .config import ExperimentConfig
from .data.manifest import DatasetManifest
from .data.pnm import read_pnm
from .detect import Detector, build_model, decode, detection_loss, to_ground_truth
from .errors import ConfigError
from .metrics import EvalReport, GroundTruthBox, map50
from .optim import AdamW
from .tensor.core import Tape, Tensor, backward, no_grad

log = logging.getLogger(__name__)

LOG_FIELDS = ("epoch", "loss_total", "loss_cls", "loss_reg", "precision", "recall", "map50")


@dataclass
class Batchable:
    """Images as [N,3,H,W] in [-1, 1] plus per-image ground truth."""

    images: np.ndarray
    targets: list = field(default_factory=list)

    def __len__(self):
        return len(self.targets)


def load_split(manifest: DatasetManifest, split: str | None, dtype=np.float32) -> Batchable:
    records = manifest.records if split is None else [r for r in manifest.records if r.split == split]
    index = manifest.class_index()
    if not records:
        return Batchable(np.zeros((0, 3, 1, 1), dtype=dtype), [])
    imgs = []
    for r in records:
        pix = read_pnm(Path(manifest.root) / r.image)
        if pix.ndim == 2:
            pix = np.repeat(pix[..., None], 3, axis=2)
        imgs.append(pix.transpose(2, 0, 1))
    images = (np.stack(imgs).astype(np.float64) / 127.5 - 1.0).astype(dtype)
    targets = [to_ground_truth([{"class": a.cls, "box": a.box} for a in r.annotations], index) for r in records]
    return Batchable(images, targets)


def hflip(images: np.ndarray, targets, width: int):
    flipped = [[GroundTruthBox((width - g.box[2], g.box[1], width - g.box[0], g.box[3]), g.class_id) for g in t]
               for t in targets]
    return images[..., ::-1].copy(), flipped


def predict(model: Detector, images: np.ndarray, cfg: ExperimentConfig, score_threshold: float,
            batch_size: int | None = None):
    """Eval-mode forward and decode; returns per-image detection lists."""
    model.eval()
    bs = batch_size or cfg.train.batch_size
    out = []
    with no_grad():
        for i in range(0, len(images), bs):
            maps = model(Tensor(images[i:i + bs]))
            out.extend(decode(maps, cfg.head.num_classes, score_threshold, cfg.head.nms_iou,
                              image_hw=images.shape[2:], max_detections=cfg.head.max_detections))
    return out


def evaluate(model: Detector, data: Batchable, cfg: ExperimentConfig, class_names=None) -> EvalReport:
    """AP from detections above the low eval threshold; P/R at the operating threshold."""
    if len(data) == 0:
        return map50([], cfg.head.num_classes, 0.5, cfg.head.score_threshold, class_names)
    dets = predict(model, data.images, cfg, cfg.head.eval_score_threshold)
    return map50(list(zip(dets, data.targets)), cfg.head.num_classes, 0.5, cfg.head.score_threshold, class_names)


def snapshot(cfg: ExperimentConfig, epoch: int, history: list, best: float, stale: int) -> dict:
    return {"config": cfg.to_dict(), "epoch": epoch, "history": history, "best_map50": best, "stale": stale}


def save_checkpoint(path, model: Detector, opt: AdamW | None, cfg: ExperimentConfig, epoch: int = 0,
                    history=(), best: float = -1.0, stale: int = 0) -> None:
    checkpoint.save(path, snapshot(cfg, epoch, list(history), best, stale), model.state(),
                    opt.state() if opt is not None else None)


def load_model(path) -> tuple[Detector, ExperimentConfig, checkpoint.Checkpoint]:
    ck = checkpoint.load(path)
    cfg = ExperimentConfig.from_dict(ck.snapshot["config"])
    model = build_model(cfg)
    model.load_state(ck.tensors)
    return model, cfg, ck


def _write_log(path, history) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_FIELDS)
        for row in history:
            w.writerow([row["epoch"]] + [repr(float(row[k])) for k in LOG_FIELDS[1:]])


def train_loop(manifest: DatasetManifest, cfg: ExperimentConfig, ckpt_path=None, log_path=None,
               resume: bool = False, on_epoch: Callable | None = None) -> tuple[Detector, list]:
    """Train on the ``train`` split, validating on ``val`` after every epoch.

    Returns the model and the per-epoch history rows. The checkpoint (when
    ``ckpt_path`` is given) is rewritten after each epoch so ``resume`` picks
    up at the next one.
    """
    dtype = np.dtype(cfg.train.dtype)
    train_set = load_split(manifest, "train", dtype)
    val_set = load_split(manifest, "val", dtype)
    if len(train_set) == 0:
        raise ConfigError("manifest has no training images")
    image_hw = train_set.images.shape[2:]
    names = list(manifest.classes)

    model = build_model(cfg)
    opt = AdamW.from_config(model.named_parameters(), cfg.train)
    history, start, best, stale = [], 1, -1.0, 0
    if resume and ckpt_path is not None and Path(ckpt_path).exists():
        ck = checkpoint.load(ckpt_path)
        model.load_state(ck.tensors)
        if ck.optimizer is not None:
            opt.load_state(ck.optimizer["step"], ck.optimizer["m"], ck.optimizer["v"])
        history = list(ck.snapshot["history"])
        start = int(ck.snapshot["epoch"]) + 1
        best, stale = float(ck.snapshot["best_map50"]), int(ck.snapshot["stale"])
        log.info("resuming at epoch %d", start)

    bs = cfg.train.batch_size
    n = len(train_set)
    for epoch in range(start, cfg.train.epochs + 1):
        rng = np.random.default_rng([cfg.train.seed, epoch])
        order = rng.permutation(n)
        model.train()
        sums = np.zeros(3)
        for i in range(0, n, bs):
            idx = order[i:i + bs]
            images = train_set.images[idx]
            targets = [train_set.targets[j] for j in idx]
            if cfg.train.flip_augment and rng.random() < 0.5:
                images, targets = hflip(images, targets, image_hw[1])
            opt.zero_grad()
            with Tape() as tape:
                maps = model(Tensor(images))
                loss, parts = detection_loss(maps, targets, image_hw, cfg.head.num_classes, cfg.head.reg_weight)
            backward(tape, loss)
            opt.step()
            sums += len(idx) * np.array([parts["total"], parts["cls"], parts["reg"]])
        means = sums / n
        report = evaluate(model, val_set, cfg, names)
        row = {"epoch": epoch, "loss_total": means[0], "loss_cls": means[1], "loss_reg": means[2],
               "precision": report.precision, "recall": report.recall, "map50": report.map50}
        history.append(row)
        log.info("epoch %d loss %.4f val mAP50 %.4f", epoch, means[0], report.map50)
        if report.map50 > best:
            best, stale = report.map50, 0
        else:
            stale += 1
        if log_path is not None:
            _write_log(log_path, history)
        if ckpt_path is not None:
            save_checkpoint(ckpt_path, model, opt, cfg, epoch, history, best, stale)
        if on_epoch is not None:
            on_epoch(row)
        if cfg.train.early_stop_patience and stale >= cfg.train.early_stop_patience:
            log.info("early stop after epoch %d", epoch)
            break
    if log_path is not None and not history:
        _write_log(log_path, history)
    return model, history
