import numpy as np
import pytest

import rcil


def tiny(tmp_path):
    cfg = rcil.Config()
    for kv in [
        "schedule.notation=2-1",
        "data.n_classes=4",
        "data.image_size=16",
        "data.train_scenes=24",
        "data.val_scenes=8",
        "model.stage_channels=4,8",
        "model.blocks_per_stage=1",
        "model.decoder_channels=8",
        "distill.spatial_kernels=2,4",
        "train.batch_size=4",
        "train.epochs=1",
    ]:
        cfg.apply_override(kv)
    cfg.outdir = str(tmp_path)
    return cfg


def test_config_round_trip():
    cfg = rcil.Config()
    cfg.apply_override("train.epochs=3")
    back = rcil.Config.parse(cfg.to_text())
    assert back.hash() == cfg.hash()
    assert back.epochs == 3
    assert len(cfg.steps()) == 5


def test_bad_field_raises():
    cfg = rcil.Config()
    with pytest.raises(rcil.ConfigError, match="train.epochs"):
        cfg.apply_override("train.epochs=many")
    with pytest.raises(ValueError):
        cfg.apply_override("no.such.key=1")


def test_verify_suite_passes():
    results = rcil.verify(7)
    assert results
    assert all(ok for _, ok, _ in results), [r for r in results if not r[1]]


def test_pcd_loss_zero_and_positive():
    rng = np.random.default_rng(0)
    t = [rng.normal(size=(2, 4, 8, 8)), rng.normal(size=(2, 6, 5, 5))]
    assert rcil.pcd_loss(t, t, spatial_kernels=[2, 4]) == 0.0
    s = [a + 0.1 for a in t]
    assert rcil.pcd_loss(t, s, spatial_kernels=[2, 4]) > 0.0
    assert rcil.pcd_loss(t, s, variant="strip") > 0.0
    with pytest.raises(ValueError):
        rcil.pcd_loss([np.zeros((2, 2))], [np.zeros((2, 2))])


def test_tiny_run(tmp_path):
    cfg = tiny(tmp_path)
    r = rcil.run(cfg, ["method.name=rc_pcd"])
    assert len(r["steps"]) == 3
    assert "skd" in r["executed_terms"]
    for s in r["steps"]:
        assert 0.0 <= s["miou_all"] <= 1.0
    assert r["steps"][0]["inference_macs"] == r["steps"][-1]["inference_macs"]
    again = rcil.run(cfg, ["method.name=rc_pcd"])
    assert again["steps"][-1]["miou_all"] == r["steps"][-1]["miou_all"]
