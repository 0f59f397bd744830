"""In-process emulation of the untrusted cloud database server.

The store only ever sees table/column tokens, ciphertext cells, plaintext
non-sensitive cells and reference words.  Every query is a full scan that
evaluates a cloud predicate per row (vectorized over numpy arrays); there is
no index beyond the reference words themselves.
"""
from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .codec import BitVector, EncryptedRow
from .crypto import Ciphertext
from .errors import CorruptCiphertextError, StoreError
from .predicates import (
    And,
    Const,
    MaskAtom,
    MaskPairAtom,
    Or,
    PlainAtom,
    PlainColumnAtom,
)
from .values import format_number, parse_number, sort_key

_CMP = {
    "=": np.equal,
    "<>": np.not_equal,
    ">": np.greater,
    ">=": np.greater_equal,
    "<": np.less,
    "<=": np.less_equal,
}

# pair blocks are kept around this many elements while joining
_JOIN_BLOCK = 1 << 20


@dataclass
class StoredTable:
    token: str
    columns: tuple
    word_count: int
    encrypted: tuple
    numeric: tuple
    rows: list = field(default_factory=list)
    _refs: Optional[np.ndarray] = None
    _keys: dict = field(default_factory=dict)

    def column_index(self, column: str) -> int:
        try:
            return self.columns.index(column)
        except ValueError:
            raise StoreError(f"table has no column {column!r}") from None

    def refs(self) -> np.ndarray:
        if self._refs is None or len(self._refs) != len(self.rows):
            arr = np.zeros((len(self.rows), self.word_count), dtype=np.uint64)
            for i, row in enumerate(self.rows):
                if row.reference.words:
                    arr[i] = row.reference.words
            self._refs = arr
        return self._refs

    def plain_keys(self, column: str) -> np.ndarray:
        ci = self.column_index(column)
        if self.encrypted[ci]:
            raise StoreError("cannot compare an encrypted column in the cloud")
        cached = self._keys.get(ci)
        if cached is None or len(cached) != len(self.rows):
            cached = np.empty(len(self.rows), dtype=object)
            cached[:] = [sort_key(r.cells[ci]) for r in self.rows]
            self._keys[ci] = cached
        return cached


class _View:
    """Row-aligned arrays for one predicate slot (a table or a gathered join side)."""

    def __init__(self, table: StoredTable, index=None):
        self.table = table
        self.index = index

    def refs(self):
        arr = self.table.refs()
        return arr if self.index is None else arr[self.index]

    def keys(self, column):
        arr = self.table.plain_keys(column)
        return arr if self.index is None else arr[self.index]


def _evaluate(pred, views, size: int) -> np.ndarray:
    if isinstance(pred, Const):
        return np.full(size, pred.value, dtype=bool)
    if isinstance(pred, MaskAtom):
        view = views[pred.slot]
        if pred.word >= view.table.word_count:
            raise StoreError(f"reference word {pred.word} out of range")
        return (view.refs()[:, pred.word] & np.uint64(pred.mask)) != 0
    if isinstance(pred, MaskPairAtom):
        return _evaluate(pred.left, views, size) & _evaluate(pred.right, views, size)
    if isinstance(pred, PlainAtom):
        keys = views[pred.slot].keys(pred.column)
        return np.asarray(_CMP[pred.op](keys, sort_key(pred.value)), dtype=bool)
    if isinstance(pred, PlainColumnAtom):
        left = views[pred.left_slot].keys(pred.left_column)
        right = views[pred.right_slot].keys(pred.right_column)
        return np.asarray(_CMP[pred.op](left, right), dtype=bool)
    if isinstance(pred, And):
        out = np.ones(size, dtype=bool)
        for it in pred.items:
            out &= _evaluate(it, views, size)
        return out
    if isinstance(pred, Or):
        out = np.zeros(size, dtype=bool)
        for it in pred.items:
            out |= _evaluate(it, views, size)
        return out
    raise StoreError(f"unsupported predicate node {type(pred).__name__}")


def _slots(pred) -> set:
    if isinstance(pred, MaskAtom):
        return {pred.slot}
    if isinstance(pred, MaskPairAtom):
        return {pred.left.slot, pred.right.slot}
    if isinstance(pred, PlainAtom):
        return {pred.slot}
    if isinstance(pred, PlainColumnAtom):
        return {pred.left_slot, pred.right_slot}
    if isinstance(pred, (And, Or)):
        return set().union(*(_slots(it) for it in pred.items))
    return set()


def _project(table: StoredTable, row: EncryptedRow, keep) -> EncryptedRow:
    if keep is None:
        return row
    return EncryptedRow(tuple([c if k else None for c, k in zip(row.cells, keep)]), row.reference, row.row_id)


class CloudStore:
    """Encrypted tables addressed by token.

    Readers may run concurrently; ``insert`` takes the write lock so a bulk
    load is never observed half-way by a scan.
    """

    def __init__(self):
        self._tables: dict = {}
        self._lock = threading.RLock()

    # -- catalogue --------------------------------------------------------

    def create_table(self, token: str, columns, word_count: int, encrypted=None, numeric=None) -> str:
        columns = tuple(columns)
        with self._lock:
            if token in self._tables:
                raise StoreError("a table with this token already exists")
            if word_count < 0:
                raise StoreError("word_count must be non-negative")
            self._tables[token] = StoredTable(
                token,
                columns,
                word_count,
                tuple(encrypted) if encrypted is not None else (False,) * len(columns),
                tuple(numeric) if numeric is not None else (False,) * len(columns),
            )
        return token

    def drop_table(self, handle: str):
        with self._lock:
            self._tables.pop(handle, None)

    def has_table(self, handle: str) -> bool:
        return handle in self._tables

    def table(self, handle: str) -> StoredTable:
        try:
            return self._tables[handle]
        except KeyError:
            raise StoreError("unknown table handle") from None

    def tables(self) -> list:
        return list(self._tables)

    def size(self, handle: str) -> int:
        return len(self.table(handle).rows)

    # -- writes -----------------------------------------------------------

    def insert(self, handle: str, rows: Iterable[EncryptedRow]) -> int:
        table = self.table(handle)
        with self._lock:
            start = len(table.rows)
            for i, row in enumerate(rows):
                if len(row.cells) != len(table.columns):
                    raise StoreError("row width does not match table")
                if len(row.reference.words) != table.word_count:
                    raise StoreError("reference word count does not match table")
                table.rows.append(EncryptedRow(tuple(row.cells), row.reference, start + i))
            return len(table.rows) - start

    # -- reads ------------------------------------------------------------

    def _match(self, handle: str, predicate) -> np.ndarray:
        table = self.table(handle)
        with self._lock:
            n = len(table.rows)
            hits = _evaluate(predicate, [_View(table)], n)
        return np.flatnonzero(hits)

    def _keep(self, table: StoredTable, projection) -> Optional[list]:
        if projection is None:
            return None
        wanted = {table.column_index(c) for c in projection}
        return [i in wanted for i in range(len(table.columns))]

    def scan(self, handle: str, predicate, projection=None) -> list:
        """Rows satisfying ``predicate``; unprojected cells come back as None."""
        table = self.table(handle)
        keep = self._keep(table, projection)
        return [_project(table, table.rows[i], keep) for i in self._match(handle, predicate)]

    def scan_ids(self, handle: str, predicate) -> list:
        return [int(i) for i in self._match(handle, predicate)]

    def count(self, handle: str, predicate) -> int:
        return int(len(self._match(handle, predicate)))

    def ordered_scan(self, handle: str, predicate, groups, descending=False, projection=None) -> list:
        """Rows grouped by partition; ``groups`` are per-partition masks, lowest first."""
        table = self.table(handle)
        keep = self._keep(table, projection)
        with self._lock:
            n = len(table.rows)
            view = [_View(table)]
            hits = _evaluate(predicate, view, n)
            order = []
            taken = np.zeros(n, dtype=bool)
            for g in (reversed(groups) if descending else groups):
                sel = hits & _evaluate(g, view, n) & ~taken
                taken |= sel
                order.extend(np.flatnonzero(sel))
            order.extend(np.flatnonzero(hits & ~taken))
        return [_project(table, table.rows[i], keep) for i in order]

    def join_pairs(self, left: str, right: str, predicate) -> tuple:
        """Row-id arrays ``(li, ri)`` of pairs satisfying ``predicate``, left-major."""
        lt, rt = self.table(left), self.table(right)
        items = predicate.items if isinstance(predicate, And) else (predicate,)
        empty = np.zeros(0, dtype=np.int64)
        with self._lock:
            # conjuncts on one side narrow that side before pairing
            sides = []
            for slot, table in ((0, lt), (1, rt)):
                local = [it for it in items if _slots(it) == {slot}]
                n = len(table.rows)
                views = [None, None]
                views[slot] = _View(table)
                keep = np.ones(n, dtype=bool)
                for it in local:
                    keep &= _evaluate(it, views, n)
                sides.append(np.flatnonzero(keep))
            left_idx, right_idx = sides
            n, m = len(left_idx), len(right_idx)
            if not n or not m:
                return empty, empty
            lparts, rparts = [], []
            step = max(1, _JOIN_BLOCK // m)
            for start in range(0, n, step):
                li = np.repeat(left_idx[start:start + step], m)
                ri = np.tile(right_idx, len(li) // m)
                hits = _evaluate(predicate, [_View(lt, li), _View(rt, ri)], len(li))
                lparts.append(li[hits])
                rparts.append(ri[hits])
        return np.concatenate(lparts), np.concatenate(rparts)

    def fetch(self, handle: str, ids, projection=None) -> dict:
        """Rows by id, projected as in :meth:`scan`."""
        table = self.table(handle)
        keep = self._keep(table, projection)
        with self._lock:
            return {int(i): _project(table, table.rows[i], keep) for i in ids}

    def join(self, left: str, right: str, predicate, projection=None) -> list:
        """(left, right) row pairs satisfying ``predicate``, left-major order."""
        li, ri = self.join_pairs(left, right, predicate)
        lrows = self.fetch(left, np.unique(li), projection[0] if projection else None)
        rrows = self.fetch(right, np.unique(ri), projection[1] if projection else None)
        return [(lrows[a], rrows[b]) for a, b in zip(li.tolist(), ri.tolist())]

    # -- persistence ------------------------------------------------------

    def dump_table(self, handle: str) -> str:
        """JSON Lines: a header line, then one line per row."""
        table = self.table(handle)
        lines = [json.dumps({
            "table": table.token,
            "columns": list(table.columns),
            "word_count": table.word_count,
            "total_bits": table.rows[0].reference.total_bits if table.rows else table.word_count * 64,
            "encrypted": list(table.encrypted),
            "numeric": list(table.numeric),
        })]
        for row in table.rows:
            cells = []
            for enc, cell in zip(table.encrypted, row.cells):
                if enc:
                    cells.append(cell.to_text())
                elif isinstance(cell, Decimal):
                    cells.append(format_number(cell))
                else:
                    cells.append(cell)
            lines.append(json.dumps({
                "cells": cells,
                "reference": [f"{w:016x}" for w in row.reference.words],
            }))
        return "\n".join(lines) + "\n"

    def load_table(self, text: str) -> str:
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise StoreError("empty table dump")
        try:
            head = json.loads(lines[0])
            n_cols = len(head["columns"])
            encrypted = head.get("encrypted", [False] * n_cols)
            numeric = head.get("numeric", [False] * n_cols)
            wc = head["word_count"]
            bits = head.get("total_bits", wc * 64)
            rows = [self._load_row(json.loads(ln), encrypted, numeric, bits) for ln in lines[1:]]
        except (ValueError, KeyError, TypeError) as exc:
            raise StoreError(f"malformed table dump: {exc}") from None
        handle = self.create_table(head["table"], head["columns"], wc, encrypted, numeric)
        try:
            self.insert(handle, rows)
        except StoreError:
            self.drop_table(handle)
            raise
        return handle

    @staticmethod
    def _load_row(rec, encrypted, numeric, bits) -> EncryptedRow:
        cells = []
        for enc, num, cell in zip(encrypted, numeric, rec["cells"], strict=True):
            if enc:
                try:
                    cells.append(Ciphertext.from_text(cell))
                except CorruptCiphertextError as exc:
                    raise StoreError(f"corrupt ciphertext in dump: {exc}") from None
            elif num and isinstance(cell, str):
                cells.append(parse_number(cell))
            else:
                cells.append(cell)
        words = tuple(int(w, 16) for w in rec["reference"])
        return EncryptedRow(tuple(cells), BitVector(words, bits))

    def serialize(self) -> str:
        """Entire store state as text (every table dump concatenated)."""
        return "".join(self.dump_table(h) for h in sorted(self._tables))

    def save(self, directory):
        path = Path(directory)
        path.mkdir(parents=True, exist_ok=True)
        for handle in self._tables:
            tmp = path / f".{handle}.jsonl.tmp"
            tmp.write_text(self.dump_table(handle), encoding="utf-8")
            os.replace(tmp, path / f"{handle}.jsonl")

    @classmethod
    def open(cls, directory) -> "CloudStore":
        store = cls()
        path = Path(directory)
        if path.exists():
            for f in sorted(path.glob("*.jsonl")):
                store.load_table(f.read_text(encoding="utf-8"))
        return store
