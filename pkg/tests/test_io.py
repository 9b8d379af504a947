import os

import numpy as np
import pytest

from glassdepth import datasets, io_formats
from glassdepth import raytrace as rt
from glassdepth import synthscene as ss
from glassdepth.errors import DataError


def test_pfm_roundtrip_single_channel(tmp_path):
    data = np.random.default_rng(0).normal(size=(7, 5)).astype(np.float32)
    path = str(tmp_path / "d.pfm")
    io_formats.write_pfm(path, data)
    np.testing.assert_array_equal(io_formats.read_pfm(path), data)


def test_pfm_roundtrip_three_channel(tmp_path):
    data = np.random.default_rng(1).normal(size=(4, 6, 3)).astype(np.float32)
    path = str(tmp_path / "n.pfm")
    io_formats.write_pfm(path, data)
    np.testing.assert_array_equal(io_formats.read_pfm(path), data)


def test_pfm_rejects_garbage(tmp_path):
    path = str(tmp_path / "x.pfm")
    with open(path, "wb") as f:
        f.write(b"JUNK\n1 1\n-1.0\n\x00\x00\x00\x00")
    with pytest.raises(DataError):
        io_formats.read_pfm(path)


def test_png_rgb_and_mask_roundtrip(tmp_path):
    rgb = np.random.default_rng(2).uniform(0, 1, size=(5, 5, 3)).astype(np.float32)
    p = str(tmp_path / "a.png")
    io_formats.write_png(p, rgb)
    back = io_formats.read_png(p)
    assert np.abs(back - rgb).max() <= 0.5 / 255 + 1e-6
    mask = np.random.default_rng(3).uniform(size=(5, 5)) > 0.5
    m = str(tmp_path / "m.png")
    io_formats.write_mask_png(m, mask)
    np.testing.assert_array_equal(io_formats.read_png(m), mask)


def test_colorize_shapes_and_mask():
    vals = np.linspace(0, 1, 16).reshape(4, 4)
    mask = vals > 0.2
    rgb = io_formats.colorize(vals, mask)
    assert rgb.shape == (4, 4, 3)
    assert (rgb[~mask] == 0).all()
    assert rgb.min() >= 0 and rgb.max() <= 1


def render_tiny(seed=0, frames=5, res=16):
    scene = ss.sample_scene(ss.AssetBank(kinds=("sphere", "box")), (2, 3), seed=seed)
    traj = ss.sample_scene_trajectory(scene, frames=frames, seed=seed)
    return scene, rt.render_sequence(scene, traj, (res, res), spp=1, seed=seed)


def test_dataset_write_load_validate(tmp_path):
    root = str(tmp_path)
    scene, pair = render_tiny()
    rec = datasets.write_scene_pair(root, "seq_000", pair, scene)
    manifest = datasets.DatasetManifest(split="train", sequences=[rec])
    mpath = os.path.join(root, "manifest.json")
    manifest.save(mpath)

    again = datasets.DatasetManifest.load(mpath)
    assert again.ids() == ["seq_000"]
    problems = datasets.validate_manifest(root, again)
    assert problems == []

    loaded = datasets.load_sequence(root, again.sequences[0])
    assert loaded.rgb.shape == (5, 16, 16, 3)
    np.testing.assert_array_equal(loaded.depth, pair.depth)
    np.testing.assert_array_equal(loaded.normal, pair.normal)
    np.testing.assert_array_equal(loaded.valid, pair.valid)
    assert np.abs(loaded.rgb - pair.rgb).max() <= 0.5 / 255 + 1e-6


def test_validate_flags_corrupt_frame(tmp_path):
    root = str(tmp_path)
    scene, pair = render_tiny(seed=1)
    rec = datasets.write_scene_pair(root, "seq_000", pair, scene)
    manifest = datasets.DatasetManifest(split="train", sequences=[rec])
    # corrupt one depth frame
    with open(os.path.join(root, rec.depth[0]), "wb") as f:
        f.write(b"Pf\n99 99\n-1.0\nshort")
    problems = datasets.validate_manifest(root, manifest)
    assert any("seq_000" in p for p in problems)


def test_validate_flags_missing_and_duplicates(tmp_path):
    root = str(tmp_path)
    scene, pair = render_tiny(seed=2)
    rec = datasets.write_scene_pair(root, "seq_000", pair, scene)
    os.remove(os.path.join(root, rec.rgb[2]))
    manifest = datasets.DatasetManifest(split="train", sequences=[rec, rec])
    problems = datasets.validate_manifest(root, manifest)
    assert any("missing file" in p for p in problems)
    assert any("duplicate id" in p for p in problems)


def test_rerender_from_scene_json_is_bit_exact(tmp_path):
    root = str(tmp_path)
    scene, pair = render_tiny(seed=3, frames=5, res=12)
    datasets.write_scene_pair(root, "seq_000", pair, scene)
    again = datasets.rerender_from_scene_json(
        os.path.join(root, "scenes", "seq_000", "scene.json"))
    np.testing.assert_array_equal(again.rgb, pair.rgb)
    np.testing.assert_array_equal(again.depth, pair.depth)
    np.testing.assert_array_equal(again.normal, pair.normal)
