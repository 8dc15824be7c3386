"""Rating-with-context data handling.

Parses delimiter-separated rating files whose columns are described by a
:class:`ContextSchema`, producing immutable :class:`Dataset` objects with
dense user/item index maps, summary statistics, and seeded record-level
train/test splits.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import NamedTuple

import numpy as np

__all__ = [
    "DataError",
    "ContextField",
    "ContextSchema",
    "RatingRecord",
    "Dataset",
    "DatasetStats",
    "default_comoda_schema",
    "load_schema",
    "load_dataset",
    "dataset_from_records",
    "dataset_stats",
    "split_train_test",
]

_DELIMITERS = (",", ";", "\t")


class DataError(Exception):
    """Unreadable, malformed, or out-of-range input data."""


@dataclass(frozen=True)
class ContextField:
    """One integer-valued context column and its declared value range."""

    name: str
    min_value: int
    max_value: int
    column_index: int

    def __post_init__(self) -> None:
        if not self.name:
            raise ValueError("context field needs a non-empty name")
        if not self.max_value >= self.min_value >= 1:
            raise ValueError(
                f"field {self.name!r}: need max_value >= min_value >= 1, "
                f"got [{self.min_value}, {self.max_value}]")
        if self.column_index < 0:
            raise ValueError(f"field {self.name!r}: negative column index")


@dataclass(frozen=True)
class ContextSchema:
    """Column layout and value ranges for one rating file format."""

    fields: tuple[ContextField, ...]
    user_column: int
    item_column: int
    rating_column: int
    max_rating: float
    missing_sentinel: int = -1

    def __post_init__(self) -> None:
        object.__setattr__(self, "fields", tuple(self.fields))
        if self.max_rating <= 0:
            raise ValueError("max_rating must be positive")
        names = [f.name for f in self.fields]
        if len(set(names)) != len(names):
            raise ValueError("context field names must be unique")
        columns = [self.user_column, self.item_column, self.rating_column]
        columns += [f.column_index for f in self.fields]
        if any(c < 0 for c in columns):
            raise ValueError("column indices must be non-negative")
        if len(set(columns)) != len(columns):
            raise ValueError("column indices must be pairwise distinct")

    def field_by_name(self, name: str) -> ContextField:
        for f in self.fields:
            if f.name == name:
                return f
        raise KeyError(f"schema has no context field named {name!r}")

    @property
    def max_column(self) -> int:
        return max(self.user_column, self.item_column, self.rating_column,
                   *(f.column_index for f in self.fields))


@dataclass(frozen=True)
class RatingRecord:
    """A single observed rating with whatever context accompanied it.

    ``context`` maps field name to its integer value; fields whose raw cell
    equalled the schema's missing sentinel are simply absent.
    """

    user_id: str
    item_id: str
    rating: float
    context: dict[str, int] = field(default_factory=dict)


@dataclass(frozen=True)
class Dataset:
    """Immutable collection of records plus dense user/item index maps."""

    records: tuple[RatingRecord, ...]
    user_index: dict[str, int]
    item_index: dict[str, int]
    schema: ContextSchema

    def __post_init__(self) -> None:
        object.__setattr__(self, "records", tuple(self.records))

    @property
    def num_users(self) -> int:
        return len(self.user_index)

    @property
    def num_items(self) -> int:
        return len(self.item_index)

    @property
    def num_records(self) -> int:
        return len(self.records)


class DatasetStats(NamedTuple):
    num_users: int
    num_items: int
    num_records: int
    rating_histogram: dict[float, int]

    def to_dict(self) -> dict:
        histogram = {f"{r:g}": c for r, c in sorted(
            self.rating_histogram.items())}
        return {
            "num_users": self.num_users,
            "num_items": self.num_items,
            "num_records": self.num_records,
            "rating_histogram": histogram,
        }


def default_comoda_schema() -> ContextSchema:
    """Schema for the LDOS-CoMoDa export bundled with the package."""
    text = resources.files("moviemat.data").joinpath(
        "comoda_schema.json").read_text()
    return _schema_from_dict(json.loads(text), source="bundled schema")


def load_schema(path: str | Path) -> ContextSchema:
    """Load a ContextSchema from a JSON file.

    The document needs ``user_column``, ``item_column``, ``rating_column``,
    ``max_rating``, and a ``fields`` list of objects with ``name``,
    ``column_index``, ``min_value``, ``max_value``. ``missing_sentinel``
    is optional and defaults to -1.
    """
    p = Path(path)
    try:
        obj = json.loads(p.read_text())
    except OSError as exc:
        raise DataError(f"cannot read schema {p}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"schema {p} is not valid JSON: {exc}") from exc
    return _schema_from_dict(obj, source=str(p))


def _schema_from_dict(obj: dict, source: str) -> ContextSchema:
    try:
        fields = tuple(
            ContextField(name=str(f["name"]),
                         min_value=int(f["min_value"]),
                         max_value=int(f["max_value"]),
                         column_index=int(f["column_index"]))
            for f in obj.get("fields", ()))
        return ContextSchema(
            fields=fields,
            user_column=int(obj["user_column"]),
            item_column=int(obj["item_column"]),
            rating_column=int(obj["rating_column"]),
            max_rating=float(obj["max_rating"]),
            missing_sentinel=int(obj.get("missing_sentinel", -1)))
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"invalid schema ({source}): {exc}") from exc


def _detect_delimiter(line: str) -> str:
    counts = {d: line.count(d) for d in _DELIMITERS}
    best = max(counts, key=counts.get)
    if counts[best] == 0:
        raise DataError("cannot detect delimiter: first line has no "
                        "comma, semicolon, or tab")
    return best


def _parse_int(raw: str, lineno: int, what: str) -> int:
    try:
        return int(raw.strip())
    except ValueError:
        raise DataError(
            f"line {lineno}: {what} {raw.strip()!r} is not an integer") \
            from None


def load_dataset(path: str | Path, schema: ContextSchema,
                 delimiter: str | None = None) -> Dataset:
    """Parse a delimiter-separated rating file into a Dataset.

    The delimiter is auto-detected from the first non-empty line among
    comma, semicolon, and tab unless given. That first line is treated as a
    header and skipped when its rating cell is missing or non-numeric.
    Records whose rating equals the missing sentinel are dropped; context
    cells equal to the sentinel leave that field absent from the record.

    Raises:
        DataError: On I/O failure, malformed rows, or out-of-range values
            (reported with 1-based line numbers).
    """
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise DataError(f"cannot read dataset {p}: {exc}") from exc

    records: list[RatingRecord] = []
    first_content_line = True
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        if first_content_line and delimiter is None:
            delimiter = _detect_delimiter(line)
        parts = line.split(delimiter)
        if first_content_line:
            first_content_line = False
            if _looks_like_header(parts, schema):
                continue
        records.append(_parse_row(parts, schema, lineno))
    kept = [r for r in records if r is not None]
    return dataset_from_records(kept, schema)


def _looks_like_header(parts: list[str], schema: ContextSchema) -> bool:
    if schema.rating_column >= len(parts):
        return True
    try:
        float(parts[schema.rating_column].strip())
    except ValueError:
        return True
    return False


def _parse_row(parts: list[str], schema: ContextSchema,
               lineno: int) -> RatingRecord | None:
    needed = schema.max_column + 1
    if len(parts) < needed:
        raise DataError(f"line {lineno}: expected at least {needed} "
                        f"columns, got {len(parts)}")
    raw_rating = parts[schema.rating_column].strip()
    try:
        rating = float(raw_rating)
    except ValueError:
        raise DataError(
            f"line {lineno}: rating {raw_rating!r} is not numeric") from None
    if rating == schema.missing_sentinel:
        return None
    if not 1 <= rating <= schema.max_rating:
        raise DataError(
            f"line {lineno}: rating {rating:g} outside "
            f"[1, {schema.max_rating:g}]")
    user_id = parts[schema.user_column].strip()
    item_id = parts[schema.item_column].strip()
    if not user_id or not item_id:
        raise DataError(f"line {lineno}: empty user or item id")
    context: dict[str, int] = {}
    for f in schema.fields:
        value = _parse_int(parts[f.column_index], lineno,
                           f"context field {f.name!r}")
        if value == schema.missing_sentinel:
            continue
        if not f.min_value <= value <= f.max_value:
            raise DataError(
                f"line {lineno}: {f.name} value {value} outside "
                f"[{f.min_value}, {f.max_value}]")
        context[f.name] = value
    return RatingRecord(user_id, item_id, rating, context)


def dataset_from_records(records, schema: ContextSchema) -> Dataset:
    """Build a Dataset, assigning dense indices in first-appearance order."""
    user_index: dict[str, int] = {}
    item_index: dict[str, int] = {}
    for r in records:
        if r.user_id not in user_index:
            user_index[r.user_id] = len(user_index)
        if r.item_id not in item_index:
            item_index[r.item_id] = len(item_index)
    return Dataset(tuple(records), user_index, item_index, schema)


def dataset_stats(ds: Dataset) -> DatasetStats:
    """Counts of users, items, and records, plus a rating histogram."""
    users = {r.user_id for r in ds.records}
    items = {r.item_id for r in ds.records}
    histogram: dict[float, int] = {}
    for r in ds.records:
        histogram[r.rating] = histogram.get(r.rating, 0) + 1
    return DatasetStats(len(users), len(items), len(ds.records), histogram)


def split_train_test(ds: Dataset, test_fraction: float,
                     seed: int) -> tuple[Dataset, Dataset]:
    """Record-level seeded holdout split.

    The test part receives ``round(N * test_fraction)`` records chosen by a
    seeded permutation; both children keep the parent's index maps so a
    model sized from either covers users/items of both.

    Raises:
        ValueError: If the fraction is outside (0, 1) or the dataset is
            empty.
    """
    if not 0 < test_fraction < 1:
        raise ValueError(f"test_fraction must be in (0, 1), "
                         f"got {test_fraction}")
    n = ds.num_records
    if n == 0:
        raise ValueError("cannot split an empty dataset")
    n_test = int(round(n * test_fraction))
    perm = np.random.default_rng(seed).permutation(n)
    test_pos = np.sort(perm[:n_test])
    train_pos = np.sort(perm[n_test:])

    def subset(positions) -> Dataset:
        recs = tuple(ds.records[int(p)] for p in positions)
        return Dataset(recs, ds.user_index, ds.item_index, ds.schema)

    return subset(train_pos), subset(test_pos)
