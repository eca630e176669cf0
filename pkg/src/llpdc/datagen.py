"""Datasets and bag construction.

Bags are built the usual LLP way: shuffle the instances, cut the shuffled
order into consecutive non-overlapping groups, and record each group's
label proportions computed from the true labels. The learner only ever
sees the proportions; the labels stay on the :class:`Dataset` for
evaluation.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

__all__ = [
    "Dataset",
    "Bag",
    "BagSpec",
    "CsvSchema",
    "DataError",
    "make_gaussian_mixture",
    "train_test_split",
    "standardize",
    "partition_into_bags",
    "load_csv",
    "write_bag_manifest",
    "read_bag_manifest",
]


class DataError(ValueError):
    pass


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    n_classes: int
    mean: np.ndarray | None = None
    std: np.ndarray | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.shape[0]:
            raise DataError("features must be n x d with one label per row")
        if not np.all(np.isfinite(self.features)):
            raise DataError("features must be finite")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise DataError(f"labels must lie in [0, {self.n_classes})")

    @property
    def n(self) -> int:
        return int(self.labels.shape[0])

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])

    @property
    def standardized(self) -> bool:
        return self.mean is not None

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return replace(self, features=self.features[idx], labels=self.labels[idx])


@dataclass(frozen=True)
class Bag:
    indices: np.ndarray
    alpha: np.ndarray
    counts: np.ndarray

    @property
    def size(self) -> int:
        return int(self.indices.shape[0])


@dataclass(frozen=True)
class BagSpec:
    """Bag layout: a fixed ``bag_size`` or an explicit list of ``sizes``.

    With a fixed size and ``n % bag_size != 0`` the trailing smaller bag is
    kept, unless ``drop_remainder`` is set.
    """

    bag_size: int | None = None
    seed: int = 0
    sizes: tuple[int, ...] | None = None
    drop_remainder: bool = False

    def __post_init__(self):
        if self.sizes is None and self.bag_size is None:
            raise DataError("BagSpec needs bag_size or sizes")
        if self.sizes is not None and any(s < 1 for s in self.sizes):
            raise DataError("bag sizes must be >= 1")
        if self.bag_size is not None and self.bag_size < 1:
            raise DataError("bag size must be >= 1")


@dataclass(frozen=True)
class CsvSchema:
    n_classes: int
    label_column: int = -1
    label_base: int = 1
    has_header: bool = False
    delimiter: str = ","


def make_gaussian_mixture(
    n_classes: int, dim: int, n_per_class: int, separation: float, seed: int = 0
) -> Dataset:
    """Unit-covariance Gaussian classes centred at ``separation * u_c``.

    ``u_c`` is the c-th standard basis vector when ``n_classes <= dim``;
    otherwise seeded random unit vectors. Rows are ordered by class.
    """
    if min(n_classes, dim, n_per_class) <= 0 or separation < 0:
        raise DataError("class count, dimension and size must be positive")
    rng = np.random.default_rng(seed)
    if n_classes <= dim:
        directions = np.eye(dim)[:n_classes]
    else:
        directions = rng.normal(size=(n_classes, dim))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    labels = np.repeat(np.arange(n_classes), n_per_class)
    features = separation * directions[labels] + rng.normal(size=(labels.size, dim))
    return Dataset(features, labels, n_classes)


def train_test_split(dataset: Dataset, test_fraction: float, seed: int = 0):
    """Random split; the test part is held out before any bagging."""
    if not 0.0 < test_fraction < 1.0:
        raise DataError("test_fraction must lie in (0, 1)")
    perm = np.random.default_rng(seed).permutation(dataset.n)
    n_test = int(round(test_fraction * dataset.n))
    return dataset.subset(np.sort(perm[n_test:])), dataset.subset(np.sort(perm[:n_test]))


def standardize(train: Dataset, *others: Dataset):
    """Z-score every dataset with statistics of ``train`` only.

    Returns the transformed datasets in the order given. Each dataset can
    be standardised once.
    """
    for ds in (train, *others):
        if ds.standardized:
            raise DataError("dataset is already standardized")
    mean = train.features.mean(axis=0)
    std = train.features.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    out = [
        replace(ds, features=(ds.features - mean) / std, mean=mean, std=std)
        for ds in (train, *others)
    ]
    return out[0] if not others else tuple(out)


def _sizes(n: int, spec: BagSpec) -> list[int]:
    if spec.sizes is not None:
        if sum(spec.sizes) != n:
            raise DataError(f"bag sizes sum to {sum(spec.sizes)}, dataset has {n} rows")
        return list(spec.sizes)
    m = spec.bag_size
    if m > n:
        raise DataError(f"bag size {m} exceeds dataset size {n}")
    full, rest = divmod(n, m)
    sizes = [m] * full
    if rest and not spec.drop_remainder:
        sizes.append(rest)
    return sizes


def partition_into_bags(dataset: Dataset, spec: BagSpec) -> list[Bag]:
    perm = np.random.default_rng(spec.seed).permutation(dataset.n)
    bags = []
    start = 0
    for size in _sizes(dataset.n, spec):
        idx = perm[start : start + size]
        start += size
        counts = np.bincount(dataset.labels[idx], minlength=dataset.n_classes)
        bags.append(Bag(indices=idx, alpha=counts / size, counts=counts))
    return bags


def load_csv(
    path,
    schema: CsvSchema,
    standardize_features: bool = True,
    stats: tuple[np.ndarray, np.ndarray] | None = None,
) -> Dataset:
    """Read a CSV of real features plus one integer label column.

    ``stats`` applies an existing (mean, std) pair, e.g. a training file's,
    instead of computing new statistics. Error messages cite 1-based file
    line numbers.
    """
    features, labels = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter=schema.delimiter)
        for lineno, row in enumerate(reader, start=1):
            if schema.has_header and lineno == 1:
                continue
            if not row or all(not c.strip() for c in row):
                continue
            cells = list(row)
            try:
                raw_label = cells.pop(schema.label_column)
                label = int(raw_label.strip())
            except (IndexError, ValueError):
                raise DataError(f"row {lineno}: label is not an integer") from None
            try:
                values = [float(c) for c in cells]
            except ValueError:
                raise DataError(f"row {lineno}: non-numeric feature") from None
            if features and len(values) != len(features[0]):
                raise DataError(f"row {lineno}: expected {len(features[0])} features, got {len(values)}")
            label -= schema.label_base
            if not 0 <= label < schema.n_classes:
                raise DataError(
                    f"row {lineno}: label {label + schema.label_base} outside "
                    f"[{schema.label_base}, {schema.n_classes + schema.label_base - 1}]"
                )
            if not all(np.isfinite(values)):
                raise DataError(f"row {lineno}: non-finite feature")
            features.append(values)
            labels.append(label)
    if not features:
        raise DataError("no rows")
    ds = Dataset(np.array(features), np.array(labels), schema.n_classes)
    if stats is not None:
        mean, std = stats
        return replace(ds, features=(ds.features - mean) / std, mean=mean, std=std)
    return standardize(ds) if standardize_features else ds


def write_bag_manifest(bags, path) -> None:
    """One JSON object per line: ``{"indices": [...], "alpha": [...]}``."""
    with open(path, "w") as fh:
        for bag in bags:
            fh.write(json.dumps({"indices": bag.indices.tolist(), "alpha": bag.alpha.tolist()}) + "\n")


def read_bag_manifest(path) -> list[Bag]:
    from .proportion_assign import counts_from_proportions

    bags = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        idx = np.asarray(rec["indices"], dtype=np.int64)
        alpha = np.asarray(rec["alpha"], dtype=np.float64)
        bags.append(Bag(idx, alpha, counts_from_proportions(alpha, idx.size)))
    return bags
