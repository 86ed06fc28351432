import csv

import numpy as np
import pytest

from mrcdetr.config import ExperimentConfig
from mrcdetr.data import GenConfig, generate_dataset, load_manifest
from mrcdetr.errors import ConfigError
from mrcdetr.mrdcb import BackboneConfig
from mrcdetr.train import LOG_FIELDS, hflip, load_model, train_loop


def tiny_cfg(epochs=1):
    cfg = ExperimentConfig()
    cfg.backbone = BackboneConfig(base_channels=8, groups=2)
    cfg.aspn.width = 8
    cfg.train.epochs = epochs
    cfg.train.batch_size = 4
    cfg.train.lr = 1e-3
    cfg.train.flip_augment = True
    return cfg


@pytest.fixture(scope="module")
def tiny_set(tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny")
    generate_dataset(GenConfig(count=10, seed=5), out)
    return load_manifest(out)


def test_one_epoch_writes_one_log_row(tiny_set, tmp_path):
    model, history = train_loop(tiny_set, tiny_cfg(), tmp_path / "m.ckpt", tmp_path / "m.csv")
    rows = list(csv.DictReader(open(tmp_path / "m.csv")))
    assert len(history) == len(rows) == 1 and tuple(rows[0]) == LOG_FIELDS
    assert np.isfinite(float(rows[0]["loss_total"]))
    loaded, cfg, _ = load_model(tmp_path / "m.ckpt")
    assert cfg.to_dict() == tiny_cfg().to_dict()


def test_empty_training_split_is_a_config_error(tiny_set):
    val_only = tiny_set.subset("val")
    with pytest.raises(ConfigError, match="no training images"):
        train_loop(val_only, tiny_cfg())


def test_repeated_runs_write_identical_logs(tiny_set, tmp_path):
    train_loop(tiny_set, tiny_cfg(2), log_path=tmp_path / "a.csv")
    train_loop(tiny_set, tiny_cfg(2), log_path=tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_resume_replays_the_uninterrupted_run(tiny_set, tmp_path):
    _, straight = train_loop(tiny_set, tiny_cfg(2), log_path=tmp_path / "straight.csv")
    ckpt = tmp_path / "r.ckpt"
    train_loop(tiny_set, tiny_cfg(1), ckpt, tmp_path / "r.csv")
    _, resumed = train_loop(tiny_set, tiny_cfg(2), ckpt, tmp_path / "r.csv", resume=True)
    assert resumed == straight
    assert (tmp_path / "r.csv").read_bytes() == (tmp_path / "straight.csv").read_bytes()


def test_hflip_mirrors_boxes(rng):
    from mrcdetr.metrics import GroundTruthBox

    imgs = rng.standard_normal((1, 3, 4, 8))
    out, (boxes,) = hflip(imgs, [[GroundTruthBox((1.0, 0.0, 3.0, 2.0), 1)]], 8)
    assert np.array_equal(out[0, :, :, 0], imgs[0, :, :, 7])
    assert boxes[0].box == (5.0, 0.0, 7.0, 2.0) and boxes[0].class_id == 1
