import json
import os

import numpy as np
import pytest

from glassdepth import io_formats
from glassdepth.cli import main
from glassdepth.datasets import DatasetManifest


def run(argv):
    return main(argv)


@pytest.fixture(scope="module")
def tiny_dataset(tmp_path_factory):
    """Render a very small dataset once for the CLI round-trip tests."""
    root = tmp_path_factory.mktemp("data")
    out = str(root / "train")
    cfg = {"scenes": 2, "frames": 5, "resolution": [16, 16], "spp": 1,
           "seed": 3, "split": "train", "m_range": [2, 3],
           "asset_kinds": ["sphere", "box"]}
    cfg_path = str(root / "render.json")
    with open(cfg_path, "w") as f:
        json.dump(cfg, f)
    assert run(["render", "--config", cfg_path, "--out", out]) == 0
    return out


def test_usage_error_exit_code():
    assert run(["no-such-command"]) == 1


def test_missing_config_is_data_error(tmp_path):
    assert run(["render", "--config", str(tmp_path / "nope.json"),
                "--out", str(tmp_path / "o")]) == 2


def test_render_validate_resume(tiny_dataset, capsys):
    manifest_path = os.path.join(tiny_dataset, "manifest.json")
    manifest = DatasetManifest.load(manifest_path)
    assert len(manifest.sequences) == 2
    assert run(["validate", "--manifest", manifest_path]) == 0

    # rerender with the same out dir: all sequences skipped, still valid
    cfg = {"scenes": 2, "frames": 5, "resolution": [16, 16], "spp": 1,
           "seed": 3, "split": "train", "m_range": [2, 3],
           "asset_kinds": ["sphere", "box"]}
    cfg_path = os.path.join(tiny_dataset, "rerender.json")
    with open(cfg_path, "w") as f:
        json.dump(cfg, f)
    before = {}
    for rec in manifest.sequences:
        p = os.path.join(tiny_dataset, rec.depth[0])
        before[p] = os.path.getmtime(p)
    assert run(["render", "--config", cfg_path, "--out", tiny_dataset]) == 0
    out = capsys.readouterr().out
    assert "rendered 0 new" in out
    for p, t in before.items():
        assert os.path.getmtime(p) == t     # idempotent resume: no re-render


def test_validate_flags_corruption(tiny_dataset):
    manifest_path = os.path.join(tiny_dataset, "manifest.json")
    manifest = DatasetManifest.load(manifest_path)
    victim = os.path.join(tiny_dataset, manifest.sequences[0].mask[1])
    backup = victim + ".bak"
    os.rename(victim, backup)
    try:
        assert run(["validate", "--manifest", manifest_path]) == 2
    finally:
        os.rename(backup, victim)
    assert run(["validate", "--manifest", manifest_path]) == 0


def test_train_infer_eval_merge_roundtrip(tiny_dataset, tmp_path):
    run_dir = str(tmp_path / "run")
    train_cfg = {
        "data": {"video": [os.path.join(tiny_dataset, "manifest.json")]},
        "trainer": {"steps": 3, "batch_size": 2, "seed": 0, "patch": 4,
                    "n_blocks": 1, "model_dim": 32, "n_heads": 4,
                    "mlp_ratio": 2, "lora_rank": 4, "n_support_max": 1,
                    "checkpoint_every": 0, "log_every": 1,
                    "out_dir": run_dir},
    }
    cfg_path = str(tmp_path / "train.json")
    with open(cfg_path, "w") as f:
        json.dump(train_cfg, f)
    assert run(["train", "--config", cfg_path]) == 0
    ckpt = os.path.join(run_dir, "final.ckpt")
    assert os.path.exists(ckpt)
    assert os.path.exists(os.path.join(run_dir, "metrics.csv"))

    pred_dir = str(tmp_path / "pred")
    assert run(["infer", "--input", os.path.join(tiny_dataset, "manifest.json"),
                "--checkpoint", ckpt, "--steps", "2", "--segment", "5",
                "--overlap", "4", "--out", pred_dir]) == 0
    manifest = DatasetManifest.load(os.path.join(tiny_dataset, "manifest.json"))
    for rec in manifest.sequences:
        d = os.path.join(pred_dir, rec.seq_id, "disparity")
        assert len(os.listdir(d)) == rec.frames
        first = io_formats.read_pfm(os.path.join(d, "f000.pfm"))
        assert first.shape == (16, 16)
        assert np.isfinite(first).all()

    eval_dir = str(tmp_path / "eval")
    assert run(["eval", "--pred", pred_dir, "--gt",
                os.path.join(tiny_dataset, "manifest.json"),
                "--out", eval_dir, "--profile-row", "8"]) == 0
    csv_path = os.path.join(eval_dir, "pred.csv")
    lines = open(csv_path).read().strip().splitlines()
    assert lines[0].startswith("id,REL,RMSE_cm,delta_1.05")
    assert lines[-1].startswith("MEAN")

    # normal-target inference against a depth checkpoint must be refused
    assert run(["infer", "--input", os.path.join(tiny_dataset, "manifest.json"),
                "--checkpoint", ckpt, "--target", "normal",
                "--out", str(tmp_path / "npred")]) == 1

    merged = str(tmp_path / "merged.ckpt")
    assert run(["merge-lora", "--checkpoint", ckpt, "--out", merged]) == 0
    pred2_dir = str(tmp_path / "pred_merged")
    assert run(["infer", "--input", os.path.join(tiny_dataset, "manifest.json"),
                "--checkpoint", merged, "--steps", "2", "--segment", "5",
                "--overlap", "4", "--out", pred2_dir]) == 0
    # merged model predictions stay close to the adapter model's
    for rec in manifest.sequences:
        a = io_formats.read_pfm(os.path.join(pred_dir, rec.seq_id,
                                             "disparity", "f000.pfm"))
        b = io_formats.read_pfm(os.path.join(pred2_dir, rec.seq_id,
                                             "disparity", "f000.pfm"))
        assert np.abs(a - b).max() < 1e-4


def test_eval_reports_id_mismatch(tiny_dataset, tmp_path):
    pred_dir = tmp_path / "pred"
    (pred_dir / "wrong_id" / "disparity").mkdir(parents=True)
    io_formats.write_pfm(str(pred_dir / "wrong_id" / "disparity" / "f000.pfm"),
                         np.ones((16, 16), np.float32))
    assert run(["eval", "--pred", str(pred_dir),
                "--gt", os.path.join(tiny_dataset, "manifest.json"),
                "--out", str(tmp_path / "eval")]) == 2
