import struct

import numpy as np
import pytest

from deepens.data import (
    UNKNOWN_LABEL,
    DataError,
    Dataset,
    FoldSpec,
    bootstrap_sample,
    class_split,
    heteroscedastic,
    load_csv,
    load_idx,
    make_folds,
    standardize,
    toy_cubic,
    write_idx,
)


@pytest.fixture
def csv_file(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text("a,b,y\n1,2,3\n4.5,-1,0.25\n0,0,7\n")
    return path


def test_load_csv_exact(csv_file):
    ds = load_csv(csv_file, target_column="y")
    np.testing.assert_array_equal(ds.features, [[1, 2], [4.5, -1], [0, 0]])
    np.testing.assert_array_equal(ds.targets, [3, 0.25, 7])
    np.testing.assert_array_equal(ds.feature_min, [0, -1])
    np.testing.assert_array_equal(ds.feature_max, [4.5, 2])
    assert load_csv(csv_file, target_column=0).targets.tolist() == [1, 4.5, 0]


def test_load_csv_quoted_header(tmp_path):
    path = tmp_path / "q.csv"
    path.write_text('"CRIM","MEDV"\n0.1,24\n0.2,21.6\n')
    assert load_csv(path, target_column="MEDV").targets.tolist() == [24, 21.6]


def test_load_csv_nan_names_row(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,y\n1,2\nnan,3\n")
    with pytest.raises(DataError, match="row 3"):
        load_csv(path)


def test_load_csv_non_numeric_names_row(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,y\n1,2\n3,4\nfoo,5\n")
    with pytest.raises(DataError, match="row 4"):
        load_csv(path)


@pytest.mark.parametrize("text", ["a,y\n", ""])
def test_load_csv_empty(tmp_path, text):
    path = tmp_path / "e.csv"
    path.write_text(text)
    with pytest.raises(DataError):
        load_csv(path)


def test_load_csv_missing(tmp_path):
    with pytest.raises(DataError, match="no such file"):
        load_csv(tmp_path / "nope.csv")


def test_load_csv_classification(tmp_path):
    path = tmp_path / "c.csv"
    path.write_text("x,label\n0.5,0\n0.1,2\n")
    ds = load_csv(path, "label", task="classification")
    assert ds.n_classes == 3 and ds.targets.dtype == np.int64


def idx_pair(tmp_path, images, labels):
    ip, lp = tmp_path / "img.idx", tmp_path / "lbl.idx"
    write_idx(images, labels, ip, lp)
    return ip, lp


def test_load_idx_single_image(tmp_path):
    img = np.arange(784, dtype=np.uint8).reshape(1, 28, 28)
    ip, lp = idx_pair(tmp_path, img, [7])
    raw = ip.read_bytes()
    assert raw[:4] == b"\x00\x00\x08\x03"
    ds = load_idx(ip, lp)
    assert ds.features.shape == (1, 784)
    np.testing.assert_array_equal(ds.features[0], np.frombuffer(raw[16:], dtype=np.uint8))
    assert ds.targets.tolist() == [7]


def test_load_idx_limit(tmp_path):
    imgs = np.zeros((5, 2, 2), dtype=np.uint8)
    ip, lp = idx_pair(tmp_path, imgs, [0, 1, 2, 3, 4])
    assert len(load_idx(ip, lp, limit=3)) == 3
    with pytest.raises(DataError):
        load_idx(ip, lp, limit=0)


def test_load_idx_bad_magic(tmp_path):
    ip, lp = idx_pair(tmp_path, np.zeros((1, 2, 2), np.uint8), [1])
    ip.write_bytes(struct.pack(">I", 0x0801) + ip.read_bytes()[4:])
    with pytest.raises(DataError, match="magic"):
        load_idx(ip, lp)


def test_load_idx_truncated(tmp_path):
    ip, lp = idx_pair(tmp_path, np.zeros((2, 3, 3), np.uint8), [1, 2])
    ip.write_bytes(ip.read_bytes()[:-1])
    with pytest.raises(DataError, match="truncated"):
        load_idx(ip, lp)
    ip.write_bytes(ip.read_bytes()[:10])
    with pytest.raises(DataError, match="truncated"):
        load_idx(ip, lp)


def test_load_idx_count_mismatch(tmp_path):
    ip, lp = idx_pair(tmp_path, np.zeros((2, 3, 3), np.uint8), [1, 2, 3])
    with pytest.raises(DataError, match="labels"):
        load_idx(ip, lp)


def test_make_folds_partition():
    folds = make_folds(10, FoldSpec(20, 0.1, 4))
    assert len(folds) == 20
    for train, test in folds:
        assert len(test) == 1
        assert sorted(np.concatenate([train, test]).tolist()) == list(range(10))
    again = make_folds(10, FoldSpec(20, 0.1, 4))
    assert all(np.array_equal(a[1], b[1]) for a, b in zip(folds, again))
    assert len({int(t[0]) for _, t in folds}) > 1


def test_make_folds_too_small():
    with pytest.raises(DataError):
        make_folds(1, FoldSpec(1, 0.5))
    with pytest.raises(DataError):
        make_folds(5, FoldSpec(1, 0.05))


def test_standardize_round_trip_and_leakage():
    rng = np.random.default_rng(0)
    train = Dataset(rng.normal(3, 2, (50, 3)), rng.normal(10, 5, 50))
    test = Dataset(rng.normal(0, 1, (20, 3)), rng.normal(0, 1, 20))
    (s_tr, s_te), params = standardize(train, test)
    np.testing.assert_allclose(s_tr.features.mean(axis=0), 0, atol=1e-12)
    np.testing.assert_allclose(s_tr.features.std(axis=0), 1, atol=1e-12)
    np.testing.assert_allclose(params.inverse_x(s_te.features), test.features, atol=1e-12)
    np.testing.assert_allclose(params.inverse_y(s_te.targets), test.targets, atol=1e-12)
    # statistics come from the training split only
    np.testing.assert_allclose(params.x_mean, train.features.mean(axis=0))
    np.testing.assert_array_equal(s_te.feature_min, train.feature_min)


def test_standardize_hand_example_and_constant_column():
    ds = Dataset(np.array([[1.0, 5.0], [3.0, 5.0]]), np.array([0.0, 1.0]))
    (s,), params = standardize(ds)
    np.testing.assert_array_equal(s.features[:, 0], [-1.0, 1.0])
    assert params.x_std[1] == 1.0
    np.testing.assert_array_equal(s.features[:, 1], [0.0, 0.0])


def test_toy_cubic():
    ds = toy_cubic()
    assert len(ds) == 20
    assert np.all(np.abs(ds.features) <= 4)
    clean = toy_cubic(n=50, noise_sd=0.0, seed=1)
    np.testing.assert_allclose(clean.targets, clean.features[:, 0] ** 3)
    np.testing.assert_array_equal(toy_cubic(seed=3).targets, toy_cubic(seed=3).targets)


def test_toy_cubic_noise_moment():
    ds = toy_cubic(n=100_000, seed=9)
    resid = ds.targets - ds.features[:, 0] ** 3
    assert abs(resid.var() - 9.0) < 0.3


def test_bootstrap():
    assert bootstrap_sample(1, 5).tolist() == [0]
    s = bootstrap_sample(10_000, 0)
    assert len(s) == 10_000
    assert 0.622 <= len(np.unique(s)) / 10_000 <= 0.642
    np.testing.assert_array_equal(s, bootstrap_sample(10_000, 0))
    with pytest.raises(DataError):
        bootstrap_sample(0, 0)


def test_class_split():
    y = np.array([0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 0, 0, 7])
    ds = Dataset(np.arange(len(y), dtype=float)[:, None], y, task="classification", n_classes=10)
    known, unknown = class_split(ds, range(5))
    assert len(known) + len(unknown) == len(ds)
    assert len(known) == 7 and len(unknown) == 6
    assert set(known.features[:, 0]).isdisjoint(unknown.features[:, 0])
    assert np.all(unknown.targets == UNKNOWN_LABEL)
    assert known.n_classes == 5
    assert np.bincount(known.targets).tolist() == [3, 1, 1, 1, 1]


def test_class_split_renumbers_and_rejects():
    y = np.array([2, 5, 7, 5])
    ds = Dataset(np.zeros((4, 1)), y, task="classification", n_classes=10)
    known, _ = class_split(ds, [5, 7])
    assert known.targets.tolist() == [0, 1, 0]
    with pytest.raises(DataError):
        class_split(ds, range(10))
    with pytest.raises(DataError):
        class_split(ds, [])


def test_dataset_validation():
    with pytest.raises(DataError):
        Dataset(np.array([[np.inf]]), np.array([1.0]))
    with pytest.raises(DataError):
        Dataset(np.zeros((2, 1)), np.array([0, 3]), task="classification", n_classes=3)
    with pytest.raises(DataError):
        Dataset(np.zeros((0, 1)), np.zeros(0))


def test_heteroscedastic_noise_grows():
    ds = heteroscedastic(n=20_000, seed=1)
    x = ds.features[:, 0]
    resid = ds.targets - (np.sin(2 * x) + 0.5 * x)
    assert resid[np.abs(x) > 2].std() > 3 * resid[np.abs(x) < 0.5].std()
