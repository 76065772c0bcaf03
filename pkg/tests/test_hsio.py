import numpy as np
import pytest
import scipy.io
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from hsidiff.hsio import (
    BENCHMARKS,
    CubeError,
    LabeledCube,
    SampleSplit,
    extract_patch,
    extract_patches,
    load_cube,
    normalize,
    sample_unlabeled_patches,
    save_cube,
    split_samples,
)

from conftest import ramp_cube


def one_band(values):
    v = np.asarray(values, dtype=np.float32).reshape(1, -1, 1)
    return LabeledCube(v, np.zeros(v.shape[:2], dtype=int), [], "band")


# -- loading ---------------------------------------------------------------


def test_npz_round_trip(tmp_path):
    cube = ramp_cube()
    path = save_cube(cube, tmp_path / "c.npz", tmp_path / "names.txt")
    back = load_cube(path, class_names_path=tmp_path / "names.txt")
    np.testing.assert_array_equal(back.data, cube.data)
    np.testing.assert_array_equal(back.labels, cube.labels)
    assert back.class_names == cube.class_names
    assert back.n_bands == 3


def test_save_is_byte_stable(tmp_path):
    cube = ramp_cube()
    a = save_cube(cube, tmp_path / "a.npz").read_bytes()
    b = save_cube(cube, tmp_path / "b.npz").read_bytes()
    assert a == b


def test_mat_container_with_separate_labels(tmp_path):
    rng = np.random.default_rng(1)
    data = rng.random((7, 9, 4))
    gt = rng.integers(0, 3, size=(7, 9)).astype(np.uint8)
    scipy.io.savemat(tmp_path / "scene.mat", {"scene": data})
    scipy.io.savemat(tmp_path / "scene_gt.mat", {"scene_gt": gt})
    cube = load_cube(tmp_path / "scene.mat", tmp_path / "scene_gt.mat")
    assert cube.data.shape == (7, 9, 4)
    np.testing.assert_array_equal(cube.labels, gt)


def test_all_zero_labels_load(tmp_path):
    cube = LabeledCube(np.ones((4, 4, 2), np.float32), np.zeros((4, 4), int), [], "empty")
    back = load_cube(save_cube(cube, tmp_path / "e.npz"))
    assert (back.labels == 0).all()
    assert back.data.shape == (4, 4, 2)


def test_shape_mismatch_rejected(tmp_path):
    np.savez(tmp_path / "bad.npz", data=np.zeros((4, 4, 2)), labels=np.zeros((4, 5), int))
    with pytest.raises(CubeError, match="shape mismatch"):
        load_cube(tmp_path / "bad.npz")


def test_negative_label_rejected():
    with pytest.raises(CubeError):
        LabeledCube(np.zeros((2, 2, 1), np.float32), np.array([[0, -1], [1, 1]]), ["a"], "x")


def test_missing_file_raises(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_cube(tmp_path / "nope.npz")


def test_benchmark_metadata_shapes():
    assert BENCHMARKS["indian_pines"]["shape"] == (145, 145, 220)
    assert len(BENCHMARKS["indian_pines"]["class_names"]) == 16
    assert BENCHMARKS["pavia_university"]["shape"] == (610, 340, 103)
    assert len(BENCHMARKS["pavia_university"]["class_names"]) == 9
    assert BENCHMARKS["salinas"]["shape"] == (512, 217, 204)


# -- normalization ------------------------------------------------------------


def test_minmax_endpoints():
    out = normalize(one_band([2, 4, 6]), "per-band-minmax")
    np.testing.assert_allclose(out.data.ravel(), [0, 0.5, 1])


def test_constant_band_maps_to_zero():
    out = normalize(one_band([5, 5, 5]), "per-band-minmax")
    np.testing.assert_array_equal(out.data.ravel(), [0, 0, 0])


def test_zscore_value():
    # mean 10, population std 2
    out = normalize(one_band([8, 12, 8, 12]), "zscore")
    assert out.data.ravel()[1] == pytest.approx(1.0)


def test_nonfinite_band_reported():
    cube = ramp_cube()
    data = cube.data.copy()
    data[0, 0, 2] = np.nan
    with pytest.raises(CubeError, match=r"bands \[2\]"):
        normalize(LabeledCube(data, cube.labels, cube.class_names, "x"))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_minmax_range_property(seed):
    rng = np.random.default_rng(seed)
    cube = LabeledCube((rng.standard_normal((5, 4, 3)) * 100).astype(np.float32), np.zeros((5, 4), int), [], "r")
    out = normalize(cube, "per-band-minmax").data
    assert out.min() >= 0 and out.max() <= 1


# -- splitting -----------------------------------------------------------------


def test_fraction_one_puts_everything_in_train():
    cube = ramp_cube()
    sp = split_samples(cube, 1.0, seed=3)
    assert sp.test == []
    assert sp.n_train == int((cube.labels > 0).sum())


def test_count_shortfall_message():
    cube = ramp_cube()
    n1 = int((cube.labels == 1).sum())
    with pytest.raises(CubeError, match=f"shortfall {n1 + 5 - n1}"):
        split_samples(cube, [n1 + 5, 0, 0], seed=0)


def test_counts_mapping_and_sequence_agree():
    cube = ramp_cube()
    a = split_samples(cube, [1, 2, 1], seed=4)
    b = split_samples(cube, {1: 1, 2: 2, 3: 1}, seed=4)
    assert a.to_text() == b.to_text()


def test_split_text_round_trip(tmp_path):
    sp = split_samples(ramp_cube(), 0.3, seed=11)
    back = SampleSplit.load(sp.save(tmp_path / "s.csv"))
    assert back.train == sp.train and back.test == sp.test and back.seed == 11
    assert back.per_class_counts == sp.per_class_counts


@settings(max_examples=120, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_split_properties_over_seeds(seed):
    cube = ramp_cube(H=9, W=8, seed=5)
    counts = [2, 3, 1]
    sp = split_samples(cube, counts, seed)
    train = {(r, c) for r, c, _ in sp.train}
    test = {(r, c) for r, c, _ in sp.test}
    assert not train & test
    assert all(k != 0 for _, _, k in sp.train + sp.test)
    for k, (ntr, nte) in sp.per_class_counts.items():
        assert ntr == counts[k - 1]
        assert ntr + nte == int((cube.labels == k).sum())
    assert sum(a for a, _ in sp.per_class_counts.values()) == sp.n_train
    assert sum(b for _, b in sp.per_class_counts.values()) == sp.n_test
    # determinism, byte for byte
    assert split_samples(cube, counts, seed).to_text() == sp.to_text()


# -- patches ----------------------------------------------------------------------


def rc_cube(H=5, W=5):
    r, c = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    return LabeledCube((r + c).astype(np.float32)[:, :, None], np.zeros((H, W), int), [], "rc")


def test_interior_patch_is_plain_crop():
    cube = ramp_cube(H=7, W=7)
    p = extract_patch(cube, (3, 3), 3)
    np.testing.assert_array_equal(p.values, cube.data[2:5, 2:5])


def test_corner_patch_mirrors_without_repeating_edge():
    p = extract_patch(rc_cube(), (0, 0), 3).values[:, :, 0]
    # the center row is cube row 0: columns -1, 0, 1 read 1, 0, 1
    np.testing.assert_array_equal(p[1], [1, 0, 1])
    np.testing.assert_array_equal(p, [[2, 1, 2], [1, 0, 1], [2, 1, 2]])


def test_p1_is_the_pixel():
    cube = ramp_cube()
    np.testing.assert_array_equal(extract_patch(cube, (0, 0), 1).values[0, 0], cube.data[0, 0])


def test_patch_too_large_rejected():
    with pytest.raises(CubeError):
        extract_patches(ramp_cube(H=4, W=4), [(0, 0)], 9)


@settings(max_examples=60, deadline=None)
@given(
    st.integers(2, 7), st.integers(2, 7), st.integers(1, 6), st.integers(0, 1000),
)
def test_mirror_padding_matches_pad_then_crop(H, W, P, seed):
    P = min(P, 2 * min(H, W) - 1)
    rng = np.random.default_rng(seed)
    cube = LabeledCube(rng.random((H, W, 2)).astype(np.float32), np.zeros((H, W), int), [], "x")
    half = P // 2
    padded = np.pad(cube.data, ((half, P), (half, P), (0, 0)), mode="reflect")
    r, c = int(rng.integers(H)), int(rng.integers(W))
    got = extract_patch(cube, (r, c), P).values
    np.testing.assert_array_equal(got, padded[r:r + P, c:c + P])


def test_unlabeled_sampling_edge_cases():
    cube = ramp_cube()
    assert sample_unlabeled_patches(cube, 0, 3, seed=1) == []
    a = [p.center for p in sample_unlabeled_patches(cube, 20, 3, seed=1)]
    b = [p.center for p in sample_unlabeled_patches(cube, 20, 3, seed=1)]
    assert a == b


def test_unlabeled_centers_are_uniform():
    cube = LabeledCube(np.zeros((145, 145, 1), np.float32), np.zeros((145, 145), int), [], "ip-shaped")
    centers = np.array([p.center for p in sample_unlabeled_patches(cube, 10_000, 1, seed=123)])
    # 5x5 blocks of 29x29 pixels each, 400 expected per block
    blocks = (centers[:, 0] // 29) * 5 + centers[:, 1] // 29
    counts = np.bincount(blocks, minlength=25)
    assert stats.chisquare(counts).pvalue > 0.01
