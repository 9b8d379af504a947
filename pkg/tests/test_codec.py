import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glassdepth import codec
from glassdepth.errors import DataError, ShapeError


def make_video(f, h, w, c, seed=0):
    return np.random.default_rng(seed).uniform(-1, 1, size=(f, h, w, c)).astype(np.float32)


# ---------------------------------------------------------------------------
# packing codec
# ---------------------------------------------------------------------------

def test_latent_shape_arithmetic():
    desc = codec.PackingDescriptor(patch=8, channels=3)
    grid = codec.encode(make_video(21, 64, 64, 3), desc)
    assert grid.shape == (6, 8, 8, 3 * 8 * 8 * 4)


def test_single_frame_is_image_case():
    desc = codec.PackingDescriptor(patch=4, channels=3)
    grid = codec.encode(make_video(1, 16, 16, 3), desc)
    assert grid.shape[0] == 1
    np.testing.assert_array_equal(codec.decode(grid), make_video(1, 16, 16, 3))


def test_roundtrip_bit_exact():
    desc = codec.PackingDescriptor(patch=8, channels=3)
    video = make_video(21, 64, 64, 3, seed=3)
    np.testing.assert_array_equal(codec.decode(codec.encode(video, desc)), video)


def test_bad_geometry_errors_name_constraint():
    desc = codec.PackingDescriptor(patch=8, channels=3)
    with pytest.raises(ShapeError, match="mod"):
        codec.encode(make_video(20, 64, 64, 3), desc)
    with pytest.raises(ShapeError, match="divisible"):
        codec.encode(make_video(21, 60, 64, 3), desc)


@settings(max_examples=40, deadline=None)
@given(
    n_groups=st.integers(0, 5),
    h=st.integers(1, 3),
    w=st.integers(1, 3),
    patch=st.sampled_from([2, 4]),
    channels=st.sampled_from([1, 3]),
    seed=st.integers(0, 2**31 - 1),
)
def test_roundtrip_property(n_groups, h, w, patch, channels, seed):
    desc = codec.PackingDescriptor(patch=patch, channels=channels)
    video = make_video(1 + 4 * n_groups, h * patch, w * patch, channels, seed=seed)
    grid = codec.encode(video, desc)
    assert grid.shape == desc.latent_shape(*video.shape[:3])
    np.testing.assert_array_equal(codec.decode(grid), video)


def test_temporal_locality():
    # changing frame k only changes latent time index ceil(k/4)
    desc = codec.PackingDescriptor(patch=4, channels=1)
    video = make_video(9, 8, 8, 1, seed=1)
    base = codec.encode(video, desc).data
    for k in range(9):
        bumped = video.copy()
        bumped[k] += 1.0
        enc = codec.encode(bumped, desc).data
        changed = [t for t in range(enc.shape[0])
                   if not np.array_equal(enc[t], base[t])]
        assert changed == [(k + 3) // 4]


# ---------------------------------------------------------------------------
# disparity
# ---------------------------------------------------------------------------

def test_disparity_hand_example():
    # oracle: depths {0.5, 1, 2} -> disparities {2, 1, 0.5}; the min-max map
    # x -> 2*(x - 0.5)/1.5 - 1 sends them to {1, -1/3, -1}
    depth = np.array([0.5, 1.0, 2.0], dtype=np.float32).reshape(1, 1, 3)
    dv = codec.depth_to_normalized_disparity(depth)
    np.testing.assert_allclose(dv.values.ravel(), [1.0, -1.0 / 3.0, -1.0], atol=1e-6)
    assert dv.d_min == pytest.approx(0.5)
    assert dv.d_max == pytest.approx(2.0)


def test_disparity_constant_depth_maps_to_zero():
    depth = np.full((2, 3, 3), 1.7, dtype=np.float32)
    dv = codec.depth_to_normalized_disparity(depth)
    np.testing.assert_array_equal(dv.values, np.zeros_like(depth))


def test_disparity_invalid_fill_and_errors():
    depth = np.array([[[1.0, 0.0], [2.0, 4.0]]], dtype=np.float32)
    dv = codec.depth_to_normalized_disparity(depth)
    assert dv.values[0, 0, 1] == codec.INVALID_DISPARITY
    assert not dv.mask[0, 0, 1]
    with pytest.raises(DataError):
        codec.depth_to_normalized_disparity(np.zeros((1, 2, 2), dtype=np.float32))


def test_disparity_roundtrip():
    rng = np.random.default_rng(7)
    depth = rng.uniform(0.4, 5.0, size=(3, 6, 6)).astype(np.float32)
    depth[0, 0, 0] = 0.0  # one hole
    dv = codec.depth_to_normalized_disparity(depth)
    rec = dv.to_depth()
    ok = dv.mask
    np.testing.assert_allclose(rec[ok], depth[ok], rtol=1e-5)
    assert rec[0, 0, 0] == 0.0


def test_disparity_monotone_decreasing_in_depth():
    rng = np.random.default_rng(11)
    depth = np.sort(rng.uniform(0.3, 4.0, size=64).astype(np.float32))
    dv = codec.depth_to_normalized_disparity(depth.reshape(1, 8, 8))
    vals = dv.values.ravel()
    assert np.all(np.diff(vals) < 0)


# ---------------------------------------------------------------------------
# normal signal
# ---------------------------------------------------------------------------

def test_normals_identity_and_fill():
    n = np.zeros((1, 1, 2, 3), dtype=np.float32)
    n[0, 0, 0] = (0.0, 0.0, 1.0)
    sig = codec.normals_to_signal(n)
    np.testing.assert_array_equal(sig[0, 0, 0], [0.0, 0.0, 1.0])
    np.testing.assert_array_equal(sig[0, 0, 1], codec.INVALID_NORMAL)


def test_normals_roundtrip_renormalization():
    rng = np.random.default_rng(5)
    raw = rng.normal(size=(5, 4, 4, 3))
    unit = (raw / np.linalg.norm(raw, axis=-1, keepdims=True)).astype(np.float32)
    desc = codec.PackingDescriptor(patch=4, channels=3)
    sig = codec.normals_to_signal(unit)
    decoded = codec.decode(codec.encode(sig, desc))
    rec, disp = codec.signal_to_normals(decoded)
    assert np.abs(np.linalg.norm(rec, axis=-1) - 1.0).max() < 1e-4
    assert np.abs(rec - unit).max() < 1e-4
    assert disp < 1e-4


def test_rgb_signal_roundtrip():
    rgb = np.random.default_rng(2).uniform(0, 1, size=(2, 4, 4, 3)).astype(np.float32)
    np.testing.assert_allclose(codec.signal_to_rgb(codec.rgb_to_signal(rgb)), rgb, atol=1e-6)


def test_replicate_average_channels():
    mono = np.random.default_rng(3).uniform(-1, 1, size=(2, 4, 4)).astype(np.float32)
    rep = codec.replicate_channels(mono)
    assert rep.shape == (2, 4, 4, 3)
    np.testing.assert_allclose(codec.average_channels(rep), mono, atol=1e-7)
