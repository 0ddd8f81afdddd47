"""Dataset container and the CSV interchange format.

CSV layout (header required): t, y_factual, [y_cfactual, mu0, mu1,] x1..xp.
The middle block is present when the file carries ground truth for
evaluation (synthetic / semi-synthetic sources). All numeric output is
written with 17 significant digits and '.' as the decimal separator.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

Array = np.ndarray

TRUTH_COLUMNS = ("y_cfactual", "mu0", "mu1")


class DatasetError(ValueError):
    """Malformed dataset or dataset file."""


def fmt(x: float) -> str:
    """17-significant-digit decimal representation (round-trips float64)."""
    return format(float(x), ".17g")


@dataclass
class Dataset:
    """Observational sample: covariates, binary treatment, factual outcome.

    mu0/mu1 (true conditional means) and ycf (counterfactual outcome) are
    carried only for evaluation on synthetic or semi-synthetic data.
    """

    x: Array
    t: Array
    y: Array
    mu0: Optional[Array] = None
    mu1: Optional[Array] = None
    ycf: Optional[Array] = None

    def __post_init__(self) -> None:
        self.x = np.asarray(self.x, dtype=np.float64)
        self.t = np.asarray(self.t)
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.x.ndim != 2:
            raise DatasetError(f"x must be 2-D, got shape {self.x.shape}")
        n = self.x.shape[0]
        if self.t.shape != (n,) or self.y.shape != (n,):
            raise DatasetError("t and y must align with the rows of x")
        if not np.all(np.isin(self.t, (0, 1))):
            raise DatasetError("treatment indicator must be binary")
        self.t = self.t.astype(np.int64)
        for name in ("mu0", "mu1", "ycf"):
            v = getattr(self, name)
            if v is not None:
                v = np.asarray(v, dtype=np.float64)
                if v.shape != (n,):
                    raise DatasetError(f"{name} must have length {n}")
                setattr(self, name, v)
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.y))):
            raise DatasetError("non-finite values in covariates or outcomes")
        if self.n_treated < 1 or self.n_control < 1:
            raise DatasetError("dataset must contain both treatment arms")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def n_treated(self) -> int:
        return int(self.t.sum())

    @property
    def n_control(self) -> int:
        return self.n - self.n_treated

    @property
    def has_truth(self) -> bool:
        return self.mu0 is not None and self.mu1 is not None

    def tau_true(self) -> Array:
        if not self.has_truth:
            raise DatasetError("dataset carries no ground-truth conditional means")
        return self.mu1 - self.mu0

    def arm_indices(self, t: int) -> Array:
        return np.flatnonzero(self.t == t)

    def subset(self, idx: Array) -> "Dataset":
        pick = lambda v: None if v is None else v[idx]
        return Dataset(self.x[idx], self.t[idx], self.y[idx],
                       pick(self.mu0), pick(self.mu1), pick(self.ycf))


def load_csv_dataset(path: str, has_counterfactuals: bool = True) -> Dataset:
    """Parse a dataset CSV, failing fast with the offending row/column named."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError(f"{path}: empty file")
        rows = list(reader)

    expected = ["t", "y_factual"]
    if has_counterfactuals:
        expected += list(TRUTH_COLUMNS)
    n_meta = len(expected)
    if header[:n_meta] != expected:
        raise DatasetError(
            f"{path}: header must start with {expected}, got {header[:n_meta]}"
        )
    x_names = header[n_meta:]
    if not x_names:
        raise DatasetError(f"{path}: no covariate columns after {expected[-1]}")
    for j, name in enumerate(x_names):
        if name != f"x{j + 1}":
            raise DatasetError(f"{path}: covariate column {n_meta + j + 1} named "
                               f"{name!r}, expected 'x{j + 1}'")

    n, width = len(rows), len(header)
    if n == 0:
        raise DatasetError(f"{path}: no data rows")
    values = np.empty((n, width))
    for i, row in enumerate(rows):
        if len(row) != width:
            raise DatasetError(
                f"{path}: row {i + 2} has {len(row)} cells, header has {width}"
            )
        for j, cell in enumerate(row):
            try:
                v = float(cell)
            except ValueError:
                raise DatasetError(
                    f"{path}: row {i + 2}, column {header[j]!r}: not a number: {cell!r}"
                )
            if not np.isfinite(v):
                raise DatasetError(
                    f"{path}: row {i + 2}, column {header[j]!r}: non-finite value"
                )
            values[i, j] = v

    t_raw = values[:, 0]
    if not np.all(np.isin(t_raw, (0.0, 1.0))):
        bad = int(np.flatnonzero(~np.isin(t_raw, (0.0, 1.0)))[0])
        raise DatasetError(f"{path}: row {bad + 2}, column 't': not binary")
    kwargs = {}
    if has_counterfactuals:
        kwargs = {"ycf": values[:, 2], "mu0": values[:, 3], "mu1": values[:, 4]}
    return Dataset(values[:, n_meta:], t_raw.astype(np.int64), values[:, 1], **kwargs)


def save_csv_dataset(path: str, ds: Dataset) -> None:
    """Write a dataset in the interchange layout (truth columns when present)."""
    with_truth = ds.has_truth and ds.ycf is not None
    header = ["t", "y_factual"]
    if with_truth:
        header += list(TRUTH_COLUMNS)
    header += [f"x{j + 1}" for j in range(ds.p)]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(ds.n):
            row = [str(int(ds.t[i])), fmt(ds.y[i])]
            if with_truth:
                row += [fmt(ds.ycf[i]), fmt(ds.mu0[i]), fmt(ds.mu1[i])]
            row += [fmt(v) for v in ds.x[i]]
            writer.writerow(row)


@dataclass
class Standardizer:
    """Per-column affine transform fitted on training covariates."""

    mean: Array
    std: Array

    @classmethod
    def fit(cls, train: Dataset) -> "Standardizer":
        mean = train.x.mean(axis=0)
        std = train.x.std(axis=0)
        std = np.where(std > 0, std, 1.0)
        return cls(mean, std)

    def transform(self, ds: Dataset) -> Dataset:
        return replace(ds, x=(ds.x - self.mean) / self.std)


def standardize_splits(
    train: Dataset, *others: Optional[Dataset]
) -> tuple[Dataset, ...]:
    """Standardize covariates with train-split statistics applied everywhere."""
    scaler = Standardizer.fit(train)
    out = [scaler.transform(train)]
    out.extend(None if ds is None else scaler.transform(ds) for ds in others)
    return tuple(out)


def drop_covariates(ds: Dataset, names: list[str]) -> Dataset:
    """Remove covariate columns by their CSV names (e.g. categorical flags)."""
    drop = set()
    for name in names:
        if not name.startswith("x"):
            raise DatasetError(f"covariate name {name!r} must look like 'x<k>'")
        j = int(name[1:]) - 1
        if not 0 <= j < ds.p:
            raise DatasetError(f"covariate {name!r} out of range for p={ds.p}")
        drop.add(j)
    keep = [j for j in range(ds.p) if j not in drop]
    return replace(ds, x=ds.x[:, keep])


def split_dataset(
    ds: Dataset, n_train: int, n_val: int, rng: np.random.Generator
) -> tuple[Dataset, Dataset, Dataset]:
    """Random train/val/test partition; the remainder becomes the test split."""
    if n_train + n_val >= ds.n:
        raise DatasetError("split sizes leave no test rows")
    perm = rng.permutation(ds.n)
    return (
        ds.subset(perm[:n_train]),
        ds.subset(perm[n_train : n_train + n_val]),
        ds.subset(perm[n_train + n_val :]),
    )
