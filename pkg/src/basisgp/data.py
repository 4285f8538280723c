"""Datasets: synthetic generation, CSV ingestion, normalization, splits.

All sampling runs through the portable generator in `rng`, with one
substream per purpose ("inputs", "noise", "split"), so datasets are
byte-reproducible from a seed and independent of each other's draw
counts.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

from . import rng


class DataError(Exception):
    pass


class MissingColumn(DataError):
    pass


class EmptyData(DataError):
    pass


class ConstantTarget(DataError):
    pass


class ParseError(DataError):
    def __init__(self, row: int, column: str, message: str = ""):
        self.row = row
        self.column = column
        detail = f": {message}" if message else ""
        super().__init__(f"cannot parse row {row}, column {column!r}{detail}")


class ConstantColumnWarning(UserWarning):
    """A feature column with zero spread was dropped during normalization."""


@dataclass
class NormStats:
    """Affine maps fitted on training data: inputs to [-1, 1], targets to z-scores."""

    x_min: np.ndarray
    x_max: np.ndarray
    y_mean: float
    y_std: float
    kept_columns: list[int]


@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray
    feature_names: list[str]
    normalization: NormStats | None = None
    f_gt: np.ndarray | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.x.ndim != 2 or self.y.ndim != 1 or self.x.shape[0] != self.y.shape[0]:
            raise DataError(
                f"inconsistent dataset shapes x={self.x.shape} y={self.y.shape}"
            )

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    def take(self, indices) -> "Dataset":
        return replace(
            self,
            x=self.x[indices],
            y=self.y[indices],
            f_gt=None if self.f_gt is None else self.f_gt[indices],
        )


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def f_step1d(x) -> np.ndarray:
    """Smoothed piecewise-constant signal plus a small oscillation.

    Plateaus near 0.3, 0.9, -0.6 and 0 with steep sigmoid transitions at
    x = -0.6, 0 and 0.4, modulated by 0.01 sin(50 sin(10 x)).
    """
    x = np.asarray(x, dtype=np.float64)
    s1 = _sigmoid(200.0 * (x + 0.6))
    s2 = _sigmoid(200.0 * x)
    s3 = _sigmoid(200.0 * (x - 0.4))
    base = 0.3 * (1.0 - s1) + 0.9 * (s1 - s2) - 0.6 * (s2 - s3)
    return base + 0.01 * np.sin(50.0 * np.sin(10.0 * x))


def gen_step1d(
    n: int,
    noise_var: float,
    seed: int,
    exclude: tuple[float, float] | None = None,
) -> Dataset:
    """Sample the 1-D benchmark: x uniform on [-1, 1], y = f(x) + noise.

    `exclude` rejects inputs inside an open interval, carving a gap used
    for extrapolation studies. The noiseless f values ride along in
    `f_gt` so tests can score against the ground truth.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    inputs = rng.substream(seed, "inputs")
    xs = []
    while len(xs) < n:
        value = inputs.uniform(-1.0, 1.0)
        if exclude is not None and exclude[0] < value < exclude[1]:
            continue
        xs.append(value)
    x = np.array(xs)[:, None]
    f = f_step1d(x[:, 0])
    if noise_var > 0.0:
        noise_stream = rng.substream(seed, "noise")
        y = f + math.sqrt(noise_var) * noise_stream.normals(n)
    else:
        y = f.copy()
    return Dataset(x=x, y=y, feature_names=["x0"], f_gt=f)


def _format_float(value: float) -> str:
    """Shortest representation that round-trips the exact float64 bits."""
    return repr(float(value))


def write_csv(path, columns: dict[str, np.ndarray]) -> None:
    """Write named columns as a plain UTF-8 CSV with a header row."""
    names = list(columns)
    arrays = [np.asarray(columns[name]) for name in names]
    n = arrays[0].shape[0]
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(names)
        for i in range(n):
            writer.writerow([_format_float(a[i]) for a in arrays])


def dataset_to_csv(path, data: Dataset) -> None:
    columns = {name: data.x[:, j] for j, name in enumerate(data.feature_names)}
    columns["y"] = data.y
    if data.f_gt is not None:
        columns["f_gt"] = data.f_gt
    write_csv(path, columns)


def load_csv(path, target_column: str, ignore_columns: tuple[str, ...] = ()) -> Dataset:
    """Load a CSV with a header row into a Dataset.

    Every numeric column other than the target (and any ignored names)
    becomes a feature, in header order; a column counts as numeric if its
    first data cell parses as a float. Unparseable or non-finite cells in
    numeric columns abort the load with the offending row and column.
    """
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyData(f"{path} has no header row") from None
        rows = list(reader)
    if not rows:
        raise EmptyData(f"{path} has no data rows")
    if target_column not in header:
        raise MissingColumn(f"target column {target_column!r} not in {header}")

    def parses(cell: str) -> bool:
        try:
            float(cell)
            return True
        except ValueError:
            return False

    feature_names = [
        name
        for j, name in enumerate(header)
        if name != target_column
        and name not in ignore_columns
        and parses(rows[0][j])
    ]
    indices = {name: header.index(name) for name in feature_names}
    target_idx = header.index(target_column)

    def parse_cell(row_i: int, row: list[str], col: str, idx: int) -> float:
        try:
            value = float(row[idx])
        except (ValueError, IndexError) as exc:
            raise ParseError(row_i, col, str(exc)) from None
        if not math.isfinite(value):
            raise ParseError(row_i, col, f"non-finite value {row[idx]!r}")
        return value

    x = np.empty((len(rows), len(feature_names)))
    y = np.empty(len(rows))
    for i, row in enumerate(rows):
        for j, name in enumerate(feature_names):
            x[i, j] = parse_cell(i, row, name, indices[name])
        y[i] = parse_cell(i, row, target_column, target_idx)
    return Dataset(x=x, y=y, feature_names=feature_names)


def load_features_csv(path, ignore_columns: tuple[str, ...] = ()):
    """Load only feature columns (no target): returns (x, feature_names)."""
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyData(f"{path} has no header row") from None
        rows = list(reader)
    if not rows:
        raise EmptyData(f"{path} has no data rows")

    def parses(cell: str) -> bool:
        try:
            float(cell)
            return True
        except ValueError:
            return False

    names = [
        name
        for j, name in enumerate(header)
        if name not in ignore_columns and parses(rows[0][j])
    ]
    indices = [header.index(name) for name in names]
    x = np.empty((len(rows), len(names)))
    for i, row in enumerate(rows):
        for j, idx in enumerate(indices):
            try:
                value = float(row[idx])
            except (ValueError, IndexError) as exc:
                raise ParseError(i, names[j], str(exc)) from None
            if not math.isfinite(value):
                raise ParseError(i, names[j], f"non-finite value {row[idx]!r}")
            x[i, j] = value
    return x, names


def normalize(data: Dataset) -> tuple[Dataset, NormStats]:
    """Fit normalization on a dataset and apply it.

    Inputs map affinely to [-1, 1] per dimension; constant columns are
    dropped with a warning. Targets are standardized with the population
    (divide-by-n) standard deviation; a constant target is an error.
    """
    if data.n < 2:
        raise DataError("normalization requires at least 2 rows")
    x_min = data.x.min(axis=0)
    x_max = data.x.max(axis=0)
    kept = [j for j in range(data.d) if x_max[j] > x_min[j]]
    dropped = [data.feature_names[j] for j in range(data.d) if j not in kept]
    if dropped:
        warnings.warn(
            f"dropping constant feature columns: {dropped}", ConstantColumnWarning
        )
    if not kept:
        raise DataError("all feature columns are constant")
    y_mean = float(np.mean(data.y))
    y_std = float(np.sqrt(np.mean((data.y - y_mean) ** 2)))
    if y_std == 0.0:
        raise ConstantTarget("target column has zero variance")
    stats = NormStats(
        x_min=x_min[kept],
        x_max=x_max[kept],
        y_mean=y_mean,
        y_std=y_std,
        kept_columns=kept,
    )
    return apply_normalization(data, stats), stats


def apply_normalization(data: Dataset, stats: NormStats) -> Dataset:
    x = data.x[:, stats.kept_columns]
    span = stats.x_max - stats.x_min
    x = 2.0 * (x - stats.x_min) / span - 1.0
    y = (data.y - stats.y_mean) / stats.y_std
    names = [data.feature_names[j] for j in stats.kept_columns]
    return Dataset(
        x=x,
        y=y,
        feature_names=names,
        normalization=stats,
        f_gt=None if data.f_gt is None else (data.f_gt - stats.y_mean) / stats.y_std,
    )


def denormalize_prediction(pred, stats: NormStats):
    """Map a normalized-scale prediction back to original target units."""
    from .predictive import PredictiveDistribution

    return PredictiveDistribution(
        mean=pred.mean * stats.y_std + stats.y_mean,
        variance=pred.variance * stats.y_std**2,
    )


def split(
    data: Dataset,
    fractions: tuple[float, float, float],
    seed: int,
    with_normalization: bool = True,
):
    """Deterministic shuffled partition into (train, val, test).

    Train and validation sizes round down; test takes the remainder.
    When with_normalization is set, statistics are fitted on the training
    split only and applied to all three, so nothing leaks from the
    held-out rows.
    """
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise DataError(f"fractions must sum to 1, got {fractions}")
    perm = rng.substream(seed, "split").permutation(data.n)
    n_train = int(math.floor(fractions[0] * data.n))
    n_val = int(math.floor(fractions[1] * data.n))
    train = data.take(perm[:n_train])
    val = data.take(perm[n_train : n_train + n_val])
    test = data.take(perm[n_train + n_val :])
    if not with_normalization:
        return train, val, test
    train, stats = normalize(train)
    return train, apply_normalization(val, stats), apply_normalization(test, stats)
