"""Table schemas, partition domains and the partition-to-bit layout.

The layout gives every partition domain of every sensitive column one bit of
the per-row reference vector.  Partitions are numbered in declaration order and
the first declared one receives the highest position, so for the students
table the ``Name`` range ``A-F`` is bit 19 (value 524288) and the catch-all
``Department`` bucket is bit 0.
"""
from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from decimal import Decimal
from functools import cached_property
from typing import Iterable, Mapping, Optional

from .errors import SchemaError, UncoveredValueError
from .values import (
    COMPARISON_OPS,
    NUMERIC,
    TEXT,
    coerce,
    compare,
    format_number,
    is_number,
    kind_of,
)

SINGLETON = "singleton"
BUCKET = "bucket"
LETTERS = "letters"
RANGE = "range"
PARTITION_KINDS = (SINGLETON, BUCKET, LETTERS, RANGE)

WORD_BITS = 64


def first_letter(value) -> Optional[str]:
    """Normalized first letter of a text value, or None if it is not A-Z."""
    if not isinstance(value, str) or not value:
        return None
    head = value[0].upper()
    if len(head) == 1 and "A" <= head <= "Z":
        return head
    return None


@dataclass(frozen=True)
class PartitionDomain:
    id: int
    kind: str
    values: tuple = ()
    lo: object = None
    hi: object = None
    label: Optional[str] = None

    @property
    def exact(self) -> bool:
        return self.kind == SINGLETON

    @property
    def name(self) -> str:
        if self.label:
            return self.label
        if self.kind == SINGLETON:
            return _render(self.values[0])
        if self.kind == BUCKET:
            return "{" + ",".join(_render(v) for v in self.values) + "}"
        return f"{_render(self.lo)}-{_render(self.hi)}"

    def contains(self, value) -> bool:
        if self.kind in (SINGLETON, BUCKET):
            return any(_same_kind(value, v) and compare("=", value, v) for v in self.values)
        if self.kind == LETTERS:
            letter = first_letter(value)
            return letter is not None and self.lo <= letter <= self.hi
        return is_number(value) and self.lo <= value <= self.hi

    def hull(self):
        """(low, high) bounds for ordered partitions, else None."""
        if self.kind in (LETTERS, RANGE):
            return self.lo, self.hi
        if self.kind == SINGLETON and is_number(self.values[0]):
            return self.values[0], self.values[0]
        return None

    def overlaps(self, other: "PartitionDomain") -> bool:
        """True when some value belongs to both partitions."""
        cat = (SINGLETON, BUCKET)
        if self.kind in cat and other.kind in cat:
            return any(other.contains(v) for v in self.values)
        if self.kind in cat:
            return any(other.contains(v) for v in self.values)
        if other.kind in cat:
            return any(self.contains(v) for v in other.values)
        if self.kind != other.kind:
            return False
        return not (self.hi < other.lo or other.hi < self.lo)

    def to_dict(self) -> dict:
        out: dict = {"type": self.kind}
        if self.kind == SINGLETON:
            out["value"] = _jsonable(self.values[0])
        elif self.kind == BUCKET:
            out["values"] = [_jsonable(v) for v in self.values]
        elif self.kind == LETTERS:
            out["from"], out["to"] = self.lo, self.hi
        else:
            out["lo"], out["hi"] = _jsonable(self.lo), _jsonable(self.hi)
        if self.label:
            out["label"] = self.label
        return out


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    sensitive: bool
    kind: str = TEXT
    partitions: tuple = ()

    def __post_init__(self):
        if not self.name or not isinstance(self.name, str):
            raise SchemaError("column name must be a non-empty string")
        if self.kind not in (TEXT, NUMERIC):
            raise SchemaError(f"column {self.name!r}: unknown kind {self.kind!r}")
        if self.sensitive and not self.partitions:
            raise SchemaError(f"sensitive column {self.name!r} declares no partitions")
        if not self.sensitive and self.partitions:
            raise SchemaError(f"non-sensitive column {self.name!r} must not declare partitions")
        for pd in self.partitions:
            if pd.kind == LETTERS and self.kind != TEXT:
                raise SchemaError(f"column {self.name!r}: letter ranges need a text column")
            if pd.kind == RANGE and self.kind != NUMERIC:
                raise SchemaError(f"column {self.name!r}: numeric ranges need a numeric column")
        for i, a in enumerate(self.partitions):
            for b in self.partitions[i + 1:]:
                if a.overlaps(b):
                    raise SchemaError(
                        f"column {self.name!r}: partitions {a.name!r} and {b.name!r} overlap"
                    )

    @property
    def ordered(self) -> bool:
        """Whether order comparisons can be mapped onto partitions."""
        if not self.partitions:
            return False
        if self.kind == TEXT:
            return all(pd.kind == LETTERS for pd in self.partitions)
        return all(pd.kind in (RANGE, SINGLETON) for pd in self.partitions)

    @property
    def exact(self) -> bool:
        return bool(self.partitions) and all(pd.exact for pd in self.partitions)

    @property
    def has_ranges(self) -> bool:
        return any(pd.kind in (LETTERS, RANGE) for pd in self.partitions)

    def locate(self, value) -> PartitionDomain:
        for pd in self.partitions:
            if pd.contains(value):
                return pd
        raise UncoveredValueError(self.name, value)

    def to_dict(self) -> dict:
        out = {"name": self.name, "sensitive": self.sensitive, "kind": self.kind}
        if self.partitions:
            out["partitions"] = [pd.to_dict() for pd in self.partitions]
        return out


@dataclass(frozen=True)
class BitLayout:
    total_bits: int
    entries: tuple  # (column index, partition id, bit position)

    @property
    def word_count(self) -> int:
        return -(-self.total_bits // WORD_BITS)

    @cached_property
    def _positions(self) -> dict:
        return {(c, p): pos for c, p, pos in self.entries}

    def position(self, column_index: int, partition_id: int) -> int:
        return self._positions[(column_index, partition_id)]

    def positions_of(self, column_index: int) -> list:
        return [pos for c, _, pos in self.entries if c == column_index]

    @staticmethod
    def word_and_offset(position: int) -> tuple:
        return position // WORD_BITS, position % WORD_BITS


@dataclass(frozen=True)
class TableSchema:
    name: str
    columns: tuple
    key_name: str = "default"

    def __post_init__(self):
        if not self.name or not isinstance(self.name, str):
            raise SchemaError("table name must be a non-empty string")
        seen = set()
        for col in self.columns:
            folded = col.name.casefold()
            if folded in seen:
                raise SchemaError(f"duplicate column name {col.name!r} in table {self.name!r}")
            seen.add(folded)

    @cached_property
    def _index(self) -> dict:
        return {c.name.casefold(): i for i, c in enumerate(self.columns)}

    @cached_property
    def layout(self) -> BitLayout:
        return build_layout(self)

    def index_of(self, column: str) -> int:
        try:
            return self._index[column.casefold()]
        except KeyError:
            raise SchemaError(f"table {self.name!r} has no column {column!r}") from None

    def column(self, column: str) -> ColumnSpec:
        return self.columns[self.index_of(column)]

    def has_column(self, column: str) -> bool:
        return column.casefold() in self._index

    @property
    def column_names(self) -> list:
        return [c.name for c in self.columns]

    @property
    def sensitive_columns(self) -> list:
        return [c for c in self.columns if c.sensitive]

    def to_dict(self) -> dict:
        out = {"table": self.name, "columns": [c.to_dict() for c in self.columns]}
        if self.key_name != "default":
            out["key"] = self.key_name
        return out


def _render(v) -> str:
    return format_number(v) if is_number(v) else str(v)


def _jsonable(v):
    return format_number(v) if isinstance(v, Decimal) else v


def _same_kind(a, b) -> bool:
    try:
        return kind_of(a) == kind_of(b)
    except TypeError:
        return False


def _letter(raw, column) -> str:
    if not isinstance(raw, str) or len(raw) != 1 or not ("A" <= raw.upper() <= "Z"):
        raise SchemaError(f"column {column!r}: letter range endpoints must be single letters A-Z")
    return raw.upper()


def _partition(pid: int, raw: Mapping, column: str, kind: str) -> PartitionDomain:
    ptype = raw.get("type")
    label = raw.get("label")
    try:
        if ptype == SINGLETON:
            return PartitionDomain(pid, SINGLETON, values=(coerce(raw["value"], kind),), label=label)
        if ptype == BUCKET:
            values = tuple(coerce(v, kind) for v in raw["values"])
            if not values:
                raise SchemaError(f"column {column!r}: empty bucket")
            return PartitionDomain(pid, BUCKET, values=values, label=label)
        if ptype == LETTERS:
            lo, hi = _letter(raw["from"], column), _letter(raw["to"], column)
            if lo > hi:
                raise SchemaError(f"column {column!r}: letter range {lo}-{hi} is reversed")
            return PartitionDomain(pid, LETTERS, lo=lo, hi=hi, label=label)
        if ptype == RANGE:
            lo, hi = coerce(raw["lo"], NUMERIC), coerce(raw["hi"], NUMERIC)
            if lo > hi:
                raise SchemaError(f"column {column!r}: range lo {lo} exceeds hi {hi}")
            return PartitionDomain(pid, RANGE, lo=lo, hi=hi, label=label)
    except KeyError as exc:
        raise SchemaError(f"column {column!r}: partition missing field {exc}") from None
    except ValueError as exc:
        if isinstance(exc, SchemaError):
            raise
        raise SchemaError(f"column {column!r}: {exc}") from None
    raise SchemaError(f"column {column!r}: unknown partition type {ptype!r}")


def define_table(definition) -> TableSchema:
    """Build and validate a TableSchema from JSON text or an equivalent mapping."""
    if isinstance(definition, (str, bytes)):
        try:
            definition = json.loads(definition, parse_float=Decimal)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"schema definition is not valid JSON: {exc}") from None
    if not isinstance(definition, Mapping):
        raise SchemaError("schema definition must be an object")
    try:
        name = definition["table"]
        raw_columns = definition["columns"]
    except KeyError as exc:
        raise SchemaError(f"schema definition missing {exc}") from None
    columns = []
    for raw in raw_columns:
        cname = raw.get("name")
        kind = raw.get("kind", TEXT)
        sensitive = bool(raw.get("sensitive", False))
        parts = tuple(
            _partition(i, p, cname, kind) for i, p in enumerate(raw.get("partitions") or ())
        )
        columns.append(ColumnSpec(cname, sensitive, kind, parts))
    return TableSchema(name, tuple(columns), definition.get("key", "default"))


def build_layout(schema: TableSchema) -> BitLayout:
    total = sum(len(c.partitions) for c in schema.columns)
    entries = []
    pos = total - 1
    for ci, col in enumerate(schema.columns):
        for pd in col.partitions:
            entries.append((ci, pd.id, pos))
            pos -= 1
    return BitLayout(total, tuple(entries))


def _sensitive(schema: TableSchema, column: str) -> tuple:
    ci = schema.index_of(column)
    col = schema.columns[ci]
    if not col.sensitive:
        raise SchemaError(f"column {column!r} is not sensitive")
    return ci, col


def locate_partition(schema: TableSchema, column: str, value) -> tuple:
    """Return ``(partition, bit_position)`` for the partition holding ``value``."""
    ci, col = _sensitive(schema, column)
    pd = col.locate(value)
    return pd, schema.layout.position(ci, pd.id)


def satisfying_partitions(col: ColumnSpec, op: str, value) -> list:
    """Partitions of ``col`` that may hold a value ``v`` with ``v op value``.

    Order operators take the containing partition plus every partition on the
    requested side of it.
    """
    if op not in COMPARISON_OPS:
        raise SchemaError(f"unsupported operator {op!r}")
    home = col.locate(value)
    if op == "=":
        return [home]
    if not col.ordered:
        raise SchemaError(f"column {col.name!r} has unordered partitions; {op!r} is not supported")
    lo, hi = home.hull()
    if op in (">", ">="):
        return [pd for pd in col.partitions if pd is home or pd.hull()[0] > hi]
    return [pd for pd in col.partitions if pd is home or pd.hull()[1] < lo]


def partitions_satisfying(schema: TableSchema, column: str, op: str, value) -> list:
    ci, col = _sensitive(schema, column)
    layout = schema.layout
    return [layout.position(ci, pd.id) for pd in satisfying_partitions(col, op, value)]


class SchemaRegistry:
    """Write-once catalogue of table schemas, looked up case-insensitively."""

    def __init__(self, schemas: Iterable[TableSchema] = ()):
        self._tables: dict = {}
        self._lock = threading.Lock()
        for s in schemas:
            self.register(s)

    def define(self, definition) -> TableSchema:
        return self.register(define_table(definition))

    def register(self, schema: TableSchema) -> TableSchema:
        key = schema.name.casefold()
        with self._lock:
            if key in self._tables:
                raise SchemaError(f"table {schema.name!r} is already defined")
            self._tables[key] = schema
        return schema

    def get(self, name: str) -> TableSchema:
        try:
            return self._tables[name.casefold()]
        except KeyError:
            raise SchemaError(f"unknown table {name!r}") from None

    def __contains__(self, name) -> bool:
        return isinstance(name, str) and name.casefold() in self._tables

    def __iter__(self):
        return iter(list(self._tables.values()))

    def __len__(self):
        return len(self._tables)


def describe_layout(schema: TableSchema) -> list:
    """Rows of (column, partition, bit position, mask) in layout order."""
    rows = []
    for ci, pid, pos in schema.layout.entries:
        col = schema.columns[ci]
        rows.append((col.name, col.partitions[pid].name, pos, 1 << pos))
    return rows

