"""Synthetic group-biased datasets, CSV ingestion, domain partitioning and batching.

CSV schema (UTF-8, newline-terminated)::

    id,a,y,f0,...,f{d-1}

with ``a`` in {0, 1} and ``y`` in [0, U).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

TEST_FRACTION = 0.2


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetSpec:
    num_classes: int = 3
    feature_dim: int = 16
    samples_per_cell: int = 400  # group-0 count per class; group 1 follows from rho
    rho: float = 0.8
    separation: float = 3.0
    group_shift: float = 1.5
    noise: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.rho < 1:
            raise DataError(f"rho must be in (0, 1), got {self.rho}")
        if self.noise <= 0:
            raise DataError(f"noise must be > 0, got {self.noise}")
        if self.num_classes < 2:
            raise DataError("need at least 2 classes")
        if self.feature_dim < self.num_classes:
            raise DataError(
                f"feature_dim ({self.feature_dim}) must be >= num_classes ({self.num_classes})"
            )

    def cell_counts(self) -> tuple[int, int]:
        n0 = self.samples_per_cell
        n1 = int(round(n0 * (1 - self.rho) / self.rho))
        return n0, n1


@dataclass
class Dataset:
    x: np.ndarray
    a: np.ndarray
    y: np.ndarray
    ids: np.ndarray
    is_test: np.ndarray = field(default=None)
    num_classes: int = 0

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.a = np.asarray(self.a, dtype=int)
        self.y = np.asarray(self.y, dtype=int)
        self.ids = np.asarray(self.ids, dtype=int)
        n = self.x.shape[0]
        if self.is_test is None:
            self.is_test = np.zeros(n, dtype=bool)
        self.is_test = np.asarray(self.is_test, dtype=bool)
        if not (self.a.shape == self.y.shape == self.ids.shape == self.is_test.shape == (n,)):
            raise DataError("features, attributes, labels, ids and split must have equal length")
        if not self.num_classes:
            self.num_classes = int(self.y.max()) + 1 if n else 0

    def __len__(self) -> int:
        return self.x.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.x.shape[1]

    def subset(self, mask) -> "Dataset":
        mask = np.asarray(mask)
        return Dataset(self.x[mask], self.a[mask], self.y[mask], self.ids[mask],
                       self.is_test[mask], self.num_classes)

    def train(self) -> "Dataset":
        return self.subset(~self.is_test)

    def test(self) -> "Dataset":
        return self.subset(self.is_test)

    def groups(self) -> list[int]:
        return sorted(int(g) for g in np.unique(self.a))


def _class_means(spec: DatasetSpec) -> np.ndarray:
    # regular simplex: scaled, centered one-hot vertices, pairwise distance = separation
    u, d = spec.num_classes, spec.feature_dim
    means = np.zeros((u, d))
    means[:, :u] = (np.eye(u) - 1.0 / u) * spec.separation / np.sqrt(2.0)
    return means


def shift_direction(spec: DatasetSpec, rng: np.random.Generator) -> np.ndarray:
    """Random unit vector in the plane spanned by the class-mean differences.

    A shift orthogonal to that plane would leave every class-mean classifier
    unchanged, so the group offset is drawn inside it.
    """
    u = spec.num_classes
    v = np.zeros(spec.feature_dim)
    v[:u] = rng.normal(size=u)
    v[:u] -= v[:u].mean()
    return v / np.linalg.norm(v)


def stratified_split(a: np.ndarray, y: np.ndarray, rng: np.random.Generator,
                     test_fraction: float = TEST_FRACTION) -> np.ndarray:
    """Boolean test mask; every (class, group) cell lands in both splits."""
    is_test = np.zeros(len(y), dtype=bool)
    for g in np.unique(a):
        for c in np.unique(y):
            idx = np.flatnonzero((a == g) & (y == c))
            if len(idx) == 0:
                continue
            if len(idx) < 2:
                raise DataError(f"cell (class={c}, group={g}) has {len(idx)} sample; need >= 2 to split")
            k = min(max(1, int(round(test_fraction * len(idx)))), len(idx) - 1)
            is_test[rng.permutation(idx)[:k]] = True
    return is_test


def generate(spec: DatasetSpec) -> Dataset:
    n0, n1 = spec.cell_counts()
    if n0 < 2 or n1 < 2:
        raise DataError(f"infeasible cell counts: group0={n0}, group1={n1} (need >= 2 each)")
    rng = np.random.default_rng(spec.seed)
    means = _class_means(spec)
    shift = spec.group_shift * shift_direction(spec, rng)

    xs, as_, ys = [], [], []
    for c in range(spec.num_classes):
        for g, n in ((0, n0), (1, n1)):
            pts = means[c] + rng.normal(scale=spec.noise, size=(n, spec.feature_dim))
            if g == 1:
                pts = pts + shift
            xs.append(pts)
            as_.append(np.full(n, g))
            ys.append(np.full(n, c))
    x = np.concatenate(xs)
    a = np.concatenate(as_)
    y = np.concatenate(ys)
    is_test = stratified_split(a, y, rng)
    return Dataset(x, a, y, np.arange(len(y)), is_test, spec.num_classes)


def binarize(values, threshold: float) -> np.ndarray:
    """Map a raw sensitive attribute (e.g. skin type, age) to {0, 1} at ``threshold``."""
    return (np.asarray(values, dtype=np.float64) >= threshold).astype(int)


# CSV ---------------------------------------------------------------------


def write_csv(path: str | Path, x, a, y, ids) -> None:
    x = np.asarray(x, dtype=np.float64)
    d = x.shape[1] if x.ndim == 2 else 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "a", "y", *(f"f{i}" for i in range(d))])
        for i in range(x.shape[0]):
            w.writerow([int(ids[i]), int(a[i]), int(y[i]), *(repr(float(v)) for v in x[i])])


def write_dataset(ds: Dataset, directory: str | Path) -> tuple[Path, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = directory / "train.csv", directory / "test.csv"
    for part, p in zip((ds.train(), ds.test()), paths):
        write_csv(p, part.x, part.a, part.y, part.ids)
    return paths


def ingest_csv(path: str | Path, num_classes: int | None = None) -> Dataset:
    """Read one CSV in the dataset schema. Errors name the offending line numbers."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    header = rows[0]
    d = len(header) - 3
    expected = ["id", "a", "y", *(f"f{i}" for i in range(d))]
    if header != expected or d < 1:
        raise DataError(f"{path}:1: bad header {header!r}; expected id,a,y,f0,...")

    errors = []
    ids, a, y, x = [], [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != d + 3:
            errors.append(f"line {lineno}: expected {d + 3} fields, got {len(row)}")
            continue
        try:
            i, ai, yi = int(row[0]), int(row[1]), int(row[2])
            feats = [float(v) for v in row[3:]]
        except ValueError as exc:
            errors.append(f"line {lineno}: {exc}")
            continue
        if ai not in (0, 1):
            errors.append(f"line {lineno}: attribute a={ai} not in {{0,1}}")
            continue
        if yi < 0 or (num_classes is not None and yi >= num_classes):
            errors.append(f"line {lineno}: label y={yi} out of range")
            continue
        if not np.all(np.isfinite(feats)):
            errors.append(f"line {lineno}: non-finite feature")
            continue
        ids.append(i)
        a.append(ai)
        y.append(yi)
        x.append(feats)
    if errors:
        raise DataError(f"{path}: malformed rows\n  " + "\n  ".join(errors))
    if not ids:
        raise DataError(f"{path}: no data rows")
    u = num_classes or (max(y) + 1)
    return Dataset(np.array(x), a, y, ids, None, u)


def load_dataset(train_path: str | Path, test_path: str | Path | None = None,
                 num_classes: int | None = None, seed: int = 0) -> Dataset:
    """Load train (+ optional test) CSVs; a lone file is split 80/20 stratified."""
    train = ingest_csv(train_path, num_classes)
    if test_path is None:
        train.is_test = stratified_split(train.a, train.y, np.random.default_rng(seed))
        return train
    test = ingest_csv(test_path, num_classes)
    if test.feature_dim != train.feature_dim:
        raise DataError("train and test feature widths differ")
    u = num_classes or max(train.num_classes, test.num_classes)
    return Dataset(
        np.concatenate([train.x, test.x]),
        np.concatenate([train.a, test.a]),
        np.concatenate([train.y, test.y]),
        np.concatenate([train.ids, test.ids]),
        np.concatenate([np.zeros(len(train), bool), np.ones(len(test), bool)]),
        u,
    )


# domains and batches -----------------------------------------------------


def partition_by_attribute(ds: Dataset) -> list[tuple[int, Dataset]]:
    return [(g, ds.subset(ds.a == g)) for g in ds.groups()]


def batches(domain: Dataset, batch_size: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    """Yield index arrays into ``domain`` covering a fresh permutation."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = rng.permutation(len(domain))
    for start in range(0, len(order), batch_size):
        yield order[start : start + batch_size]
