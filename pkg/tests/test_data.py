import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from coltran import data as D
from coltran.errors import ConfigError, DimensionError, ResolutionError, VocabularyError


def test_round_half_up_values():
    npt.assert_array_equal(D.round_half_up(np.array([0.5, 1.5, 2.5, 76.5, -0.5, 2.4])),
                           [1.0, 2.0, 3.0, 77.0, 0.0, 2.0])


def test_luma_primaries():
    assert D.to_grayscale(np.array([255, 0, 0])) == 76
    assert D.to_grayscale(np.array([0, 255, 0])) == 150
    assert D.to_grayscale(np.array([0, 0, 255])) == 29
    assert D.to_grayscale(np.array([255, 255, 255])) == 255
    assert D.to_grayscale(np.array([0, 0, 0])) == 0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 255))
def test_luma_of_gray_is_identity(v):
    assert D.to_grayscale(np.array([v, v, v])) == v


@settings(max_examples=30, deadline=None)
@given(arrays(np.int64, (4, 5, 3), elements=st.integers(0, 255)))
def test_luma_stays_in_range(rgb):
    y = D.to_grayscale(rgb)
    assert y.shape == (4, 5)
    assert y.min() >= 0 and y.max() <= 255


def test_to_grayscale_shape_error():
    with pytest.raises(DimensionError):
        D.to_grayscale(np.zeros((4, 4, 4)))


def test_quantize_hand_values():
    assert D.quantize_coarse(np.array([255, 128, 0])) == 480
    assert D.quantize_coarse(np.array([255, 0, 0])) == 448
    assert D.quantize_coarse(np.array([255, 255, 255])) == 511
    assert D.quantize_coarse(np.array([0, 0, 0])) == 0
    assert D.quantize_coarse(np.array([31, 32, 33])) == 0 * 64 + 1 * 8 + 1


def test_quantize_range_errors():
    with pytest.raises(VocabularyError):
        D.quantize_coarse(np.array([256, 0, 0]))
    with pytest.raises(VocabularyError):
        D.quantize_coarse(np.array([-1, 0, 0]))
    with pytest.raises(DimensionError):
        D.quantize_coarse(np.zeros((2, 2)))


def test_packed_roundtrip_exhaustive():
    idx = np.arange(512)
    npt.assert_array_equal(D.levels_to_coarse(D.coarse_to_levels(idx)), idx)
    npt.assert_array_equal(D.quantize_coarse(D.dequantize_coarse(idx)), idx)


def test_dequantize_centers():
    npt.assert_array_equal(D.dequantize_coarse(np.array(0)), [16, 16, 16])
    npt.assert_array_equal(D.dequantize_coarse(np.array(511)), [240, 240, 240])
    npt.assert_array_equal(D.dequantize_coarse(np.array(480)), [240, 144, 16])


@settings(max_examples=50, deadline=None)
@given(arrays(np.int64, (3, 3, 3), elements=st.integers(0, 255)))
def test_dequantize_error_at_most_16(rgb):
    back = D.dequantize_coarse(D.quantize_coarse(rgb))
    assert np.abs(back - rgb).max() <= 16


def test_levels_range_errors():
    with pytest.raises(VocabularyError):
        D.coarse_to_levels(np.array([512]))
    with pytest.raises(VocabularyError):
        D.levels_to_coarse(np.array([8, 0, 0]))


def test_area_downsample_hand_values():
    img = np.array([[0, 0], [255, 255]])
    npt.assert_array_equal(D.area_downsample(img, 2), [[128]])  # mean 127.5 rounds up
    img2 = np.arange(16).reshape(4, 4)
    out = D.area_downsample(img2, 2)
    npt.assert_array_equal(out, [[3, 5], [11, 13]])  # block means are x.5, round up


def test_area_downsample_channels_and_errors():
    rgb = np.stack([np.full((4, 4), 10), np.full((4, 4), 20), np.full((4, 4), 30)], axis=-1)
    out = D.area_downsample(rgb, 2)
    assert out.shape == (2, 2, 3)
    npt.assert_array_equal(out[0, 0], [10, 20, 30])
    with pytest.raises(ResolutionError):
        D.area_downsample(np.zeros((5, 4)), 2)
    with pytest.raises(ResolutionError):
        D.area_downsample(np.zeros((4, 4)), 0)
    with pytest.raises(DimensionError):
        D.area_downsample(np.zeros(4), 2)


@settings(max_examples=20, deadline=None)
@given(arrays(np.int64, (4, 6), elements=st.integers(0, 255)))
def test_area_downsample_preserves_mean_within_rounding(img):
    out = D.area_downsample(img, 2)
    assert abs(out.mean() - img.mean()) <= 0.5


def test_nearest_upsample_replicates():
    img = np.array([[1, 2], [3, 4]])
    out = D.nearest_upsample(img, 2, 3)
    assert out.shape == (4, 6)
    npt.assert_array_equal(out[:2, :3], np.ones((2, 3), dtype=int))
    npt.assert_array_equal(D.area_downsample(out, 2, 3), img)
    with pytest.raises(ResolutionError):
        D.nearest_upsample(img, 0)


def test_png_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    rgb = rng.integers(0, 256, (5, 7, 3))
    path = tmp_path / "img.png"
    D.save_png(path, rgb)
    npt.assert_array_equal(D.load_png(path), rgb)
    assert not (tmp_path / "img.png.tmp").exists()
    gray = rng.integers(0, 256, (5, 7))
    D.save_png(tmp_path / "g.png", gray)
    back = D.load_png(tmp_path / "g.png")  # loads as RGB
    npt.assert_array_equal(back[..., 0], gray)


def test_save_png_rejects_bad_input(tmp_path):
    with pytest.raises(VocabularyError):
        D.save_png(tmp_path / "bad.png", np.array([[300]]))
    with pytest.raises(DimensionError):
        D.save_png(tmp_path / "bad.png", np.zeros((2, 2, 2)))


def test_make_training_example_consistency():
    rng = np.random.default_rng(1)
    rgb = rng.integers(0, 256, (8, 8, 3))
    ex = D.make_training_example(rgb, 4, 4, name="x")
    assert ex.gray_hi.shape == (8, 8)
    assert ex.rgb_lo.shape == (4, 4, 3)
    npt.assert_array_equal(ex.coarse, D.quantize_coarse(ex.rgb_lo))
    npt.assert_array_equal(ex.gray_lo, D.area_downsample(ex.gray_hi, 2))
    with pytest.raises(ResolutionError):
        D.make_training_example(rgb, 3, 4)
    with pytest.raises(DimensionError):
        D.make_training_example(rgb[..., :2], 4, 4)


def _write_corpus(tmp_path, n, shape=(8, 8)):
    rng = np.random.default_rng(7)
    names = []
    for i in range(n):
        name = f"img_{i:02d}.png"
        D.save_png(tmp_path / name, rng.integers(0, 256, (*shape, 3)))
        names.append(name)
    return names


def test_dataset_listing_glob_and_manifest(tmp_path):
    names = _write_corpus(tmp_path, 4)
    spec = D.DatasetSpec(directory=tmp_path, split="all")
    files = D.list_dataset_files(spec)
    assert [f.name for f in files] == sorted(names)
    (tmp_path / "manifest.txt").write_text("\n".join([names[2], names[0]]) + "\n")
    files = D.list_dataset_files(spec)
    assert [f.name for f in files] == [names[2], names[0]]
    (tmp_path / "manifest.txt").write_text("missing.png\n")
    with pytest.raises(ConfigError):
        D.list_dataset_files(spec)


def test_dataset_split_is_deterministic_and_disjoint(tmp_path):
    _write_corpus(tmp_path, 10)
    train = D.DatasetSpec(directory=tmp_path, split="train", holdout_fraction=0.2, seed=3)
    hold = D.DatasetSpec(directory=tmp_path, split="holdout", holdout_fraction=0.2, seed=3)
    files = D.list_dataset_files(train)
    a = D.split_files(files, train)
    b = D.split_files(files, hold)
    assert len(b) == 2 and len(a) == 8
    assert set(a).isdisjoint(b)
    assert sorted(p.name for p in a + b) == sorted(p.name for p in files)
    assert [p.name for p in D.split_files(files, hold)] == [p.name for p in b]


def test_load_dataset_validates_resolution(tmp_path):
    _write_corpus(tmp_path, 2, shape=(8, 8))
    spec = D.DatasetSpec(directory=tmp_path, split="all")
    out = D.load_dataset(spec, 4, 4, 8, 8)
    assert len(out) == 2 and out[0].coarse.shape == (4, 4)
    with pytest.raises(ResolutionError):
        D.load_dataset(spec, 4, 4, 16, 16)
    with pytest.raises(ConfigError):
        D.load_dataset(D.DatasetSpec(directory=tmp_path / "nope"), 4, 4, 8, 8)


def test_dataset_spec_validation(tmp_path):
    with pytest.raises(ConfigError):
        D.DatasetSpec(directory=tmp_path, split="test")
    with pytest.raises(ConfigError):
        D.DatasetSpec(directory=tmp_path, holdout_fraction=1.0)


def test_empty_dataset_errors(tmp_path):
    with pytest.raises(ConfigError):
        D.list_dataset_files(D.DatasetSpec(directory=tmp_path))
