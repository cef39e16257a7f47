import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from condgrad.datasets import (
    Circles, CsvFile, LowRankMulticlass, SplitSpec, generate, load_csv, planted_low_rank, random_qp_kernel,
    read_table, split, split_sizes, write_csv,
)
from condgrad.errors import FormatError, InvalidArgumentError
from condgrad.softmax import MulticlassDataset
from condgrad.svm import LabeledDataset


def test_noiseless_circles_radii():
    data = generate(Circles(n=4, inner=1.0, outer=2.0, noise=0.0, seed=3))
    radii = np.hypot(data.x[:, 0], data.x[:, 1])
    np.testing.assert_allclose(np.sort(radii), [1, 1, 2, 2], rtol=1e-15)
    for r, y in zip(radii, data.y):
        assert (r < 1.5) == (y == -1)


def test_circles_balanced_and_deterministic():
    a = generate(Circles(201, seed=5))
    b = generate(Circles(201, seed=5))
    np.testing.assert_array_equal(a.x, b.x)
    np.testing.assert_array_equal(a.y, b.y)
    assert (a.y == -1).sum() == 100
    assert not np.array_equal(a.x, generate(Circles(201, seed=6)).x)


def test_invalid_specs():
    with pytest.raises(InvalidArgumentError):
        generate(Circles(10, inner=2.0, outer=1.0))
    with pytest.raises(InvalidArgumentError):
        generate(LowRankMulticlass(10, features=3, classes=2, rank=4))
    with pytest.raises(InvalidArgumentError):
        generate("circles")


def test_planted_weights_classify_perfectly():
    data, w = planted_low_rank(LowRankMulticlass(500, 20, 4, 2, seed=1))
    assert np.linalg.matrix_rank(w) == 2
    assert np.mean(np.argmax(data.x @ w.T, axis=1) == data.labels) == 1.0
    again = generate(LowRankMulticlass(500, 20, 4, 2, seed=1))
    np.testing.assert_array_equal(again.x, data.x)


def test_random_qp_kernel_psd():
    K = random_qp_kernel(8, 0, rank=3)
    np.testing.assert_array_equal(K, K.T)
    assert np.linalg.matrix_rank(K) == 3
    np.testing.assert_array_equal(K, random_qp_kernel(8, 0, rank=3))


def test_split_rejects_zero_part():
    with pytest.raises(InvalidArgumentError):
        split_sizes(10, (1.0, 0.0, 0.0))
    with pytest.raises(InvalidArgumentError):
        split_sizes(2, (1 / 3, 1 / 3, 1 / 3))
    with pytest.raises(InvalidArgumentError):
        split_sizes(10, (0.5, 0.5, 0.5))


def test_split_thirds():
    assert split_sizes(9, (1 / 3, 1 / 3, 1 / 3)) == (3, 3, 3)


@settings(max_examples=50, deadline=None)
@given(st.integers(3, 300), st.integers(0, 2**31), st.floats(0.1, 0.8))
def test_split_disjoint_and_covering(n, seed, first):
    fractions = (first, (1 - first) / 2, (1 - first) / 2)
    try:
        split_sizes(n, fractions)
    except InvalidArgumentError:
        return
    x = np.arange(n, dtype=float)[:, None]
    data = LabeledDataset(x, np.where(np.arange(n) % 2, 1.0, -1.0))
    parts = split(data, SplitSpec(fractions, seed))
    ids = np.concatenate([p.x[:, 0] for p in parts])
    assert sorted(ids) == list(range(n))
    for p in parts:
        np.testing.assert_array_equal(p.y, np.where(p.x[:, 0] % 2, 1.0, -1.0))


def test_csv_round_trip_binary(tmp_path):
    data = generate(Circles(25, seed=2))
    path = tmp_path / "c.csv"
    write_csv(data, path)
    text = path.read_bytes()
    assert b"\r" not in text and text.startswith(b"feature_0,feature_1,label\n")
    back = generate(CsvFile(str(path)))
    np.testing.assert_array_equal(back.x, data.x)
    np.testing.assert_array_equal(back.y, data.y)


def test_csv_round_trip_multiclass(tmp_path):
    data = generate(LowRankMulticlass(30, 4, 3, 1, seed=0))
    path = tmp_path / "m.csv"
    write_csv(data, path)
    back = load_csv(path)
    assert isinstance(back, MulticlassDataset)
    np.testing.assert_array_equal(back.x, data.x)
    np.testing.assert_array_equal(back.labels, data.labels)


def test_csv_errors(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("feature_0,label\n1.0,1\nabc,-1\n")
    with pytest.raises(FormatError, match="line 3"):
        load_csv(path)
    path.write_text("feature_0,label\n1.0,1\n1.0\n")
    with pytest.raises(FormatError, match="line 3"):
        load_csv(path)
    path.write_text("")
    with pytest.raises(FormatError):
        load_csv(path)
    path.write_text("feature_0,label\n1.0,0.5\n")
    with pytest.raises(FormatError):
        load_csv(path)
    path.write_text("feature_0\n1.0\n")
    with pytest.raises(FormatError):
        load_csv(path)


def test_unlabeled_table(tmp_path):
    path = tmp_path / "u.csv"
    path.write_text("feature_0,feature_1\n1,2\n3,4\n")
    x, labels = read_table(path, require_label=False)
    assert labels is None and x.shape == (2, 2)
