"""Mixed-type tabular data: schemas, datasets, CSV I/O and the numeric encoding.

Rows are stored as a float matrix with one cell per column. Continuous cells
hold real values, categorical cells hold the integer index of the category in
the column's ordered category list.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import (
    ConstantColumnError,
    DataError,
    DimensionMismatchError,
    MissingFileError,
    MissingValueError,
    SchemaError,
)

CONTINUOUS = "continuous"
CATEGORICAL = "categorical"
FEATURE = "feature"
TARGET = "target"

STD_EPS = 1e-8
SCHEMA_VERSION = 1


@dataclass(frozen=True)
class ColumnSchema:
    name: str
    kind: str
    categories: tuple[str, ...] = ()
    target_role: str = FEATURE

    def __post_init__(self):
        if self.kind not in (CONTINUOUS, CATEGORICAL):
            raise SchemaError(f"column {self.name!r}: unknown kind {self.kind!r}")
        if self.target_role not in (FEATURE, TARGET):
            raise SchemaError(f"column {self.name!r}: unknown target_role {self.target_role!r}")
        object.__setattr__(self, "categories", tuple(str(c) for c in self.categories))
        if self.kind == CATEGORICAL:
            if len(self.categories) < 2:
                raise SchemaError(f"column {self.name!r}: categorical needs >= 2 categories")
            if len(set(self.categories)) != len(self.categories):
                raise SchemaError(f"column {self.name!r}: duplicate categories")
        elif self.categories:
            raise SchemaError(f"column {self.name!r}: continuous column cannot list categories")

    @property
    def is_categorical(self) -> bool:
        return self.kind == CATEGORICAL

    @property
    def n_categories(self) -> int:
        return len(self.categories)

    def to_dict(self) -> dict:
        d = {"name": self.name, "kind": self.kind}
        if self.is_categorical:
            d["categories"] = list(self.categories)
        d["target_role"] = self.target_role
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ColumnSchema":
        return cls(
            name=d["name"],
            kind=d["kind"],
            categories=tuple(d.get("categories", ())),
            target_role=d.get("target_role", FEATURE),
        )


@dataclass(frozen=True)
class TableSchema:
    columns: tuple[ColumnSchema, ...]
    version: int = SCHEMA_VERSION

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(self.columns))
        names = [c.name for c in self.columns]
        if not names:
            raise SchemaError("schema has no columns")
        if len(set(names)) != len(names):
            raise SchemaError("column names must be unique")
        if sum(c.target_role == TARGET for c in self.columns) > 1:
            raise SchemaError("at most one column may have target_role 'target'")

    def __len__(self):
        return len(self.columns)

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    @property
    def target(self) -> ColumnSchema | None:
        for c in self.columns:
            if c.target_role == TARGET:
                return c
        return None

    def index(self, name: str) -> int:
        for i, c in enumerate(self.columns):
            if c.name == name:
                return i
        raise SchemaError(f"no column named {name!r}")

    def with_target(self, name: str | None) -> "TableSchema":
        if name is not None:
            self.index(name)
        cols = [
            ColumnSchema(c.name, c.kind, c.categories, TARGET if c.name == name else FEATURE)
            for c in self.columns
        ]
        return TableSchema(tuple(cols), self.version)

    def to_dict(self) -> dict:
        return {"version": self.version, "columns": [c.to_dict() for c in self.columns]}

    @classmethod
    def from_dict(cls, d: dict) -> "TableSchema":
        return cls(tuple(ColumnSchema.from_dict(c) for c in d["columns"]), int(d.get("version", SCHEMA_VERSION)))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "TableSchema":
        path = Path(path)
        if not path.exists():
            raise MissingFileError(f"schema file not found: {path}")
        try:
            return cls.from_dict(json.loads(path.read_text(encoding="utf-8")))
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise SchemaError(f"malformed schema file {path}: {exc}") from exc


@dataclass(frozen=True, eq=False)
class Dataset:
    """Rows under a schema; ``values`` is an ``(n_rows, n_columns)`` float array."""

    schema: TableSchema
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, copy=True)
        if values.ndim == 1 and values.size == 0:
            values = values.reshape(0, len(self.schema))
        if values.ndim != 2 or values.shape[1] != len(self.schema):
            raise DimensionMismatchError(
                f"rows must have {len(self.schema)} cells, got array of shape {values.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise MissingValueError("dataset contains missing or non-finite cells")
        for j, col in enumerate(self.schema.columns):
            if col.is_categorical:
                v = values[:, j]
                if np.any(v != np.round(v)) or np.any(v < 0) or np.any(v >= col.n_categories):
                    raise DataError(f"column {col.name!r}: category index out of range")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __len__(self):
        return self.values.shape[0]

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def rows(self) -> list[list[float | int]]:
        out = []
        cat = [c.is_categorical for c in self.schema.columns]
        for r in self.values:
            out.append([int(v) if is_cat else float(v) for v, is_cat in zip(r, cat)])
        return out

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.schema.index(name)]

    def take(self, indices) -> "Dataset":
        return Dataset(self.schema, self.values[np.asarray(indices, dtype=int)])

    def with_values(self, values) -> "Dataset":
        return Dataset(self.schema, values)

    def equals(self, other: "Dataset") -> bool:
        return self.schema == other.schema and np.array_equal(self.values, other.values)

    @classmethod
    def from_rows(cls, schema: TableSchema, rows: Iterable[Sequence]) -> "Dataset":
        rows = list(rows)
        return cls(schema, np.array(rows, dtype=np.float64).reshape(len(rows), len(schema)))

    @classmethod
    def concat(cls, parts: Sequence["Dataset"]) -> "Dataset":
        schema = parts[0].schema
        for p in parts[1:]:
            if p.schema != schema:
                raise SchemaError("cannot concatenate datasets with different schemas")
        return cls(schema, np.vstack([p.values for p in parts]))


def _read_raw(path) -> tuple[list[str], list[list[str]]]:
    path = Path(path)
    if not path.exists():
        raise MissingFileError(f"data file not found: {path}")
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            body = [r for r in reader if r]
    except (OSError, UnicodeDecodeError, csv.Error) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not header:
        raise DataError(f"{path}: missing header row")
    if not body:
        raise DataError(f"{path}: table has no data rows")
    for i, r in enumerate(body):
        if len(r) != len(header):
            raise DataError(f"{path}: row {i + 1} has {len(r)} cells, header has {len(header)}")
        if any(cell.strip() == "" for cell in r):
            raise MissingValueError(f"{path}: row {i + 1} has a missing cell")
    return [h.strip() for h in header], body


def _as_float(cells: Sequence[str]) -> np.ndarray | None:
    try:
        out = np.array([float(c) for c in cells])
    except ValueError:
        return None
    return out if np.all(np.isfinite(out)) else None


def infer_schema(csv_path, distinct_threshold: int = 20, target: str | None = None) -> TableSchema:
    """Infer column kinds from a CSV file.

    A column is categorical when it is non-numeric or has at most
    ``distinct_threshold`` distinct values. Categories are sorted
    lexicographically as text. Constant columns are rejected.
    """
    header, body = _read_raw(csv_path)
    columns, constant = [], []
    for j, name in enumerate(header):
        cells = [r[j].strip() for r in body]
        distinct = sorted(set(cells))
        numeric = _as_float(cells)
        if numeric is not None and len(np.unique(numeric)) == 1 or len(distinct) == 1:
            constant.append(name)
            continue
        if numeric is None or len(distinct) <= distinct_threshold:
            columns.append(ColumnSchema(name, CATEGORICAL, tuple(distinct)))
        else:
            columns.append(ColumnSchema(name, CONTINUOUS))
    if constant:
        raise ConstantColumnError(constant)
    return TableSchema(tuple(columns)).with_target(target)


def read_csv(csv_path, schema: TableSchema) -> Dataset:
    """Load a CSV file under a known schema (columns matched by name)."""
    header, body = _read_raw(csv_path)
    missing = [n for n in schema.names if n not in header]
    if missing:
        raise SchemaError(f"{csv_path}: columns missing from file: {', '.join(missing)}")
    values = np.empty((len(body), len(schema)))
    for j, col in enumerate(schema.columns):
        src = header.index(col.name)
        cells = [r[src].strip() for r in body]
        if col.is_categorical:
            lookup = {c: i for i, c in enumerate(col.categories)}
            try:
                values[:, j] = [lookup[c] for c in cells]
            except KeyError as exc:
                raise SchemaError(f"column {col.name!r}: unknown category {exc.args[0]!r}") from exc
        else:
            numeric = _as_float(cells)
            if numeric is None:
                raise SchemaError(f"column {col.name!r}: non-numeric value in continuous column")
            values[:, j] = numeric
    return Dataset(schema, values)


def load_table(csv_path, schema_path=None, distinct_threshold: int = 20, target: str | None = None):
    """Read a CSV, inferring the schema when no schema file is given."""
    if schema_path is not None:
        schema = TableSchema.load(schema_path)
        if target is not None:
            schema = schema.with_target(target)
    else:
        schema = infer_schema(csv_path, distinct_threshold, target)
    return read_csv(csv_path, schema)


def write_csv(data: Dataset, path) -> None:
    cols = data.schema.columns
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([c.name for c in cols])
        for r in data.values:
            w.writerow(
                [c.categories[int(v)] if c.is_categorical else repr(float(v)) for c, v in zip(cols, r)]
            )


class TabularEncoder(TransformerMixin, BaseEstimator):
    """Z-score continuous columns and one-hot encode categorical ones.

    The encoded layout follows schema order; each column occupies the slice
    ``blocks_[j]`` of the encoded vector.
    """

    def fit(self, X: Dataset, y=None):
        if len(X) == 0:
            raise DataError("cannot fit an encoder on an empty dataset")
        self.schema_ = X.schema
        self.means_ = np.zeros(len(X.schema))
        self.stds_ = np.ones(len(X.schema))
        blocks, offset = [], 0
        for j, col in enumerate(X.schema.columns):
            if col.is_categorical:
                width = col.n_categories
            else:
                v = X.values[:, j]
                self.means_[j] = v.mean()
                self.stds_[j] = max(v.std(), STD_EPS)
                width = 1
            blocks.append(slice(offset, offset + width))
            offset += width
        self.blocks_ = blocks
        self.width_ = offset
        return self

    def _check_values(self, X) -> np.ndarray:
        check_is_fitted(self, "blocks_")
        if isinstance(X, Dataset):
            if X.schema.names != self.schema_.names:
                raise SchemaError("dataset schema does not match the fitted encoder")
            return X.values
        values = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if values.shape[1] != len(self.schema_):
            raise DimensionMismatchError(f"expected {len(self.schema_)} cells per row, got {values.shape[1]}")
        return values

    def transform(self, X) -> np.ndarray:
        values = self._check_values(X)
        out = np.zeros((values.shape[0], self.width_))
        for j, col in enumerate(self.schema_.columns):
            b = self.blocks_[j]
            if col.is_categorical:
                out[np.arange(len(values)), b.start + values[:, j].astype(int)] = 1.0
            else:
                out[:, b.start] = (values[:, j] - self.means_[j]) / self.stds_[j]
        return out

    def inverse_transform(self, X) -> np.ndarray:
        """Map encoded vectors back to cell values (argmax per one-hot block, ties to lowest index)."""
        check_is_fitted(self, "blocks_")
        enc = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if enc.shape[1] != self.width_:
            raise DimensionMismatchError(f"expected encoded width {self.width_}, got {enc.shape[1]}")
        out = np.zeros((enc.shape[0], len(self.schema_)))
        for j, col in enumerate(self.schema_.columns):
            b = self.blocks_[j]
            if col.is_categorical:
                out[:, j] = np.argmax(enc[:, b], axis=1)
            else:
                out[:, j] = enc[:, b.start] * self.stds_[j] + self.means_[j]
        return out

    def encode(self, row: Sequence) -> np.ndarray:
        return self.transform(np.asarray(row, dtype=np.float64)[None, :])[0]

    def decode(self, vector: Sequence) -> list:
        cells = self.inverse_transform(np.asarray(vector, dtype=np.float64)[None, :])[0]
        return [int(v) if c.is_categorical else float(v) for v, c in zip(cells, self.schema_.columns)]

    def to_dataset(self, encoded) -> Dataset:
        return Dataset(self.schema_, self.inverse_transform(encoded))

    def column_dims(self, exclude: Iterable[str] = ()) -> np.ndarray:
        """Encoded dimension indices of every column not in ``exclude``."""
        check_is_fitted(self, "blocks_")
        exclude = set(exclude)
        dims = [
            np.arange(b.start, b.stop)
            for c, b in zip(self.schema_.columns, self.blocks_)
            if c.name not in exclude
        ]
        return np.concatenate(dims) if dims else np.zeros(0, dtype=int)

    @property
    def continuous_dims_(self) -> np.ndarray:
        return np.array(
            [b.start for c, b in zip(self.schema_.columns, self.blocks_) if not c.is_categorical], dtype=int
        )

    @property
    def categorical_blocks_(self) -> list[slice]:
        return [b for c, b in zip(self.schema_.columns, self.blocks_) if c.is_categorical]

    def to_dict(self) -> dict:
        return {
            "means": [float(v) for v in self.means_],
            "stds": [float(v) for v in self.stds_],
        }

    @classmethod
    def from_dict(cls, schema: TableSchema, d: dict) -> "TabularEncoder":
        enc = cls()
        enc.schema_ = schema
        enc.means_ = np.array(d["means"], dtype=np.float64)
        enc.stds_ = np.array(d["stds"], dtype=np.float64)
        blocks, offset = [], 0
        for col in schema.columns:
            width = col.n_categories if col.is_categorical else 1
            blocks.append(slice(offset, offset + width))
            offset += width
        enc.blocks_ = blocks
        enc.width_ = offset
        return enc


def fit_encoder(data: Dataset) -> TabularEncoder:
    return TabularEncoder().fit(data)


def split(data: Dataset, train_fraction: float = 0.8, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Shuffle by ``seed`` and cut into ``floor(train_fraction * n)`` train rows and the rest."""
    if not 0.0 < train_fraction < 1.0:
        raise DataError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    n_train = int(np.floor(train_fraction * len(data)))
    if n_train < 1:
        raise DataError("train_fraction * n must be at least 1")
    perm = np.random.default_rng(seed).permutation(len(data))
    return data.take(perm[:n_train]), data.take(perm[n_train:])
