import json

import numpy as np
import pytest
from scipy.stats import norm

from llpdc.datagen import (
    BagSpec,
    CsvSchema,
    DataError,
    Dataset,
    load_csv,
    make_gaussian_mixture,
    partition_into_bags,
    read_bag_manifest,
    standardize,
    train_test_split,
    write_bag_manifest,
)
from llpdc.proportion_assign import counts_from_proportions


def test_mixture_shape_and_balance():
    ds = make_gaussian_mixture(3, 4, 100, 2.0, seed=0)
    assert ds.features.shape == (300, 4)
    assert np.bincount(ds.labels).tolist() == [100, 100, 100]


def test_mixture_deterministic():
    a = make_gaussian_mixture(5, 3, 20, 1.0, seed=7)
    b = make_gaussian_mixture(5, 3, 20, 1.0, seed=7)
    assert np.array_equal(a.features, b.features)


def test_zero_separation_is_uninformative():
    ds = make_gaussian_mixture(2, 2, 2000, 0.0, seed=1)
    m0 = ds.features[ds.labels == 0].mean(axis=0)
    m1 = ds.features[ds.labels == 1].mean(axis=0)
    assert np.linalg.norm(m0 - m1) < 0.15


def test_separation_eight_is_nearly_separable():
    # Centres 8*e1 and 8*e2 are 8*sqrt(2) apart; the Bayes error of two
    # unit Gaussians is Phi(-distance/2).
    bayes_error = norm.cdf(-8 * np.sqrt(2) / 2)
    assert 1 - bayes_error > 0.999
    ds = make_gaussian_mixture(2, 2, 500, 8.0, seed=2)
    pred = (ds.features[:, 1] > ds.features[:, 0]).astype(int)
    assert (pred == ds.labels).mean() > 0.999


def test_partition_small():
    ds = make_gaussian_mixture(2, 2, 4, 1.0)
    bags = partition_into_bags(ds, BagSpec(bag_size=4, seed=0))
    assert len(bags) == 2
    union = np.concatenate([b.indices for b in bags])
    assert sorted(union.tolist()) == list(range(8))


def test_pure_dataset_bags_are_one_hot():
    ds = Dataset(np.zeros((12, 2)), np.ones(12, dtype=int), 3)
    for bag in partition_into_bags(ds, BagSpec(bag_size=5, seed=1)):
        assert bag.alpha.tolist() == [0.0, 1.0, 0.0]


def test_remainder_policy():
    ds = make_gaussian_mixture(2, 2, 500, 1.0)
    bags = partition_into_bags(ds, BagSpec(bag_size=64, seed=0))
    assert [b.size for b in bags] == [64] * 15 + [40]
    strict = partition_into_bags(ds, BagSpec(bag_size=64, seed=0, drop_remainder=True))
    assert len(strict) == 15


def test_partition_invariants():
    ds = make_gaussian_mixture(4, 3, 250, 1.0, seed=3)
    bags = partition_into_bags(ds, BagSpec(bag_size=32, seed=5))
    idx = np.concatenate([b.indices for b in bags])
    assert idx.size == ds.n and np.unique(idx).size == ds.n
    for bag in bags:
        truth = np.bincount(ds.labels[bag.indices], minlength=4)
        assert np.array_equal(bag.counts, truth)
        assert np.array_equal(counts_from_proportions(bag.alpha, bag.size), truth)
    again = partition_into_bags(ds, BagSpec(bag_size=32, seed=5))
    assert all(np.array_equal(a.indices, b.indices) for a, b in zip(bags, again))


def test_variable_sizes():
    ds = make_gaussian_mixture(2, 2, 5, 1.0)
    bags = partition_into_bags(ds, BagSpec(sizes=(1, 3, 6)))
    assert [b.size for b in bags] == [1, 3, 6]
    with pytest.raises(DataError):
        partition_into_bags(ds, BagSpec(sizes=(1, 2)))


def test_bag_larger_than_dataset():
    ds = make_gaussian_mixture(2, 2, 2, 1.0)
    with pytest.raises(DataError):
        partition_into_bags(ds, BagSpec(bag_size=5))


def test_large_bags_concentrate():
    ds = make_gaussian_mixture(4, 2, 2048, 1.0, seed=0)
    prior = np.full(4, 0.25)

    def median_dev(m):
        bags = partition_into_bags(ds, BagSpec(bag_size=m, seed=1, drop_remainder=True))
        return np.median([np.abs(b.alpha - prior).max() for b in bags])

    assert median_dev(128) < median_dev(16)


def test_standardize_once_and_train_only():
    ds = make_gaussian_mixture(2, 3, 50, 3.0)
    train, test = train_test_split(ds, 0.2, seed=0)
    assert train.n == 80 and test.n == 20
    train_s, test_s = standardize(train, test)
    assert np.allclose(train_s.features.mean(axis=0), 0)
    assert np.allclose(train_s.features.std(axis=0), 1)
    assert np.array_equal(test_s.mean, train_s.mean)
    with pytest.raises(DataError, match="already"):
        standardize(train_s)


def write(path, text):
    path.write_text(text)
    return path


def test_load_csv_ok(tmp_path):
    p = write(tmp_path / "d.csv", "1.0,2.0,1\n3.0,4.0,2\n5.0,0.5,1\n")
    ds = load_csv(p, CsvSchema(n_classes=2))
    assert ds.n == 3 and ds.labels.tolist() == [0, 1, 0]
    assert ds.standardized
    raw = load_csv(p, CsvSchema(n_classes=2), standardize_features=False)
    assert raw.features[1].tolist() == [3.0, 4.0]


def test_load_csv_header_and_label_first(tmp_path):
    p = write(tmp_path / "d.csv", "y,a,b\n0,1.0,2.0\n1,3.0,4.0\n")
    ds = load_csv(p, CsvSchema(n_classes=2, label_column=0, label_base=0, has_header=True))
    assert ds.labels.tolist() == [0, 1]


def test_load_csv_non_numeric(tmp_path):
    p = write(tmp_path / "d.csv", "1.0,2.0,1\nabc,4.0,2\n")
    with pytest.raises(DataError, match="row 2"):
        load_csv(p, CsvSchema(n_classes=2))


def test_load_csv_label_range(tmp_path):
    p = write(tmp_path / "d.csv", "1.0,2.0,1\n3.0,4.0,3\n")
    with pytest.raises(DataError, match="row 2: label 3 outside"):
        load_csv(p, CsvSchema(n_classes=2))


def test_load_csv_empty(tmp_path):
    with pytest.raises(DataError, match="no rows"):
        load_csv(write(tmp_path / "e.csv", ""), CsvSchema(n_classes=2))


def test_load_csv_with_stats(tmp_path):
    p = write(tmp_path / "d.csv", "1.0,1\n3.0,2\n")
    ds = load_csv(p, CsvSchema(n_classes=2), stats=(np.array([1.0]), np.array([2.0])))
    assert ds.features.ravel().tolist() == [0.0, 1.0]


def test_manifest_roundtrip(tmp_path):
    ds = make_gaussian_mixture(3, 2, 10, 1.0)
    bags = partition_into_bags(ds, BagSpec(bag_size=7, seed=2))
    write_bag_manifest(bags, tmp_path / "bags.jsonl")
    lines = (tmp_path / "bags.jsonl").read_text().splitlines()
    assert len(lines) == len(bags)
    assert set(json.loads(lines[0])) == {"indices", "alpha"}
    back = read_bag_manifest(tmp_path / "bags.jsonl")
    for a, b in zip(bags, back):
        assert np.array_equal(a.indices, b.indices)
        assert np.array_equal(a.counts, b.counts)
