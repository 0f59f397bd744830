"""Row encoding: plaintext rows to encrypted rows with reference bit vectors."""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Optional, Sequence

from . import crypto
from .crypto import Ciphertext, KeyMaterial
from .errors import SchemaError
from .schema import WORD_BITS, BitLayout, TableSchema
from .values import NUMERIC, coerce, format_number, parse_number

_WORD_MASK = (1 << WORD_BITS) - 1


@dataclass(frozen=True)
class BitVector:
    """Reference bits stored as 64-bit words; word 0 holds positions 0-63."""

    words: tuple
    total_bits: int

    def __post_init__(self):
        if len(self.words) != -(-self.total_bits // WORD_BITS):
            raise ValueError("word count does not match total_bits")
        for w in self.words:
            if not 0 <= w <= _WORD_MASK:
                raise ValueError("reference words must be unsigned 64-bit integers")
        spare = len(self.words) * WORD_BITS - self.total_bits
        if spare and self.words[-1] >> (WORD_BITS - spare):
            raise ValueError("bits beyond total_bits must be zero")

    @classmethod
    def from_positions(cls, positions: Iterable[int], total_bits: int) -> "BitVector":
        words = [0] * (-(-total_bits // WORD_BITS))
        for p in positions:
            if not 0 <= p < total_bits:
                raise ValueError(f"bit position {p} outside [0, {total_bits})")
            words[p // WORD_BITS] |= 1 << (p % WORD_BITS)
        return cls(tuple(words), total_bits)

    @classmethod
    def parse(cls, text: str) -> "BitVector":
        """Inverse of ``str()``: most significant position first."""
        if any(ch not in "01" for ch in text):
            raise ValueError("bit string may only contain 0 and 1")
        n = len(text)
        return cls.from_positions((n - 1 - i for i, ch in enumerate(text) if ch == "1"), n)

    def test(self, position: int) -> bool:
        return bool(self.words[position // WORD_BITS] >> (position % WORD_BITS) & 1)

    def positions(self) -> list:
        return [p for p in range(self.total_bits - 1, -1, -1) if self.test(p)]

    def popcount(self) -> int:
        return sum(bin(w).count("1") for w in self.words)

    def __str__(self) -> str:
        return "".join("1" if self.test(p) else "0" for p in range(self.total_bits - 1, -1, -1))


@dataclass(frozen=True)
class EncryptedRow:
    """Ciphertext for sensitive cells, plaintext for the rest, plus reference bits.

    ``row_id`` is assigned by the store on insert and only used for diagnostics.
    """

    cells: tuple
    reference: BitVector
    row_id: Optional[int] = None

    def with_cells(self, cells) -> "EncryptedRow":
        return replace(self, cells=tuple(cells))


def encode_value(value, kind: str) -> bytes:
    if kind == NUMERIC:
        return format_number(value).encode("ascii")
    return value.encode("utf-8")


def decode_value(data: bytes, kind: str):
    if kind == NUMERIC:
        return parse_number(data.decode("ascii"))
    return data.decode("utf-8")


def coerce_row(schema: TableSchema, row: Sequence) -> tuple:
    if len(row) != len(schema.columns):
        raise SchemaError(
            f"table {schema.name!r} expects {len(schema.columns)} values, got {len(row)}"
        )
    try:
        return tuple(coerce(v, c.kind) for v, c in zip(row, schema.columns))
    except ValueError as exc:
        raise SchemaError(str(exc)) from None


def encode_bits(schema: TableSchema, layout: BitLayout, row: Sequence) -> BitVector:
    positions = []
    for ci, (col, value) in enumerate(zip(schema.columns, row)):
        if col.sensitive:
            positions.append(layout.position(ci, col.locate(value).id))
    return BitVector.from_positions(positions, layout.total_bits)


def encrypt_row(schema: TableSchema, layout: BitLayout, keys: KeyMaterial, row: Sequence) -> EncryptedRow:
    row = coerce_row(schema, row)
    reference = encode_bits(schema, layout, row)
    cells = tuple(
        crypto.encrypt_value(keys, encode_value(v, c.kind)) if c.sensitive else v
        for c, v in zip(schema.columns, row)
    )
    return EncryptedRow(cells, reference)


def decrypt_cell(schema: TableSchema, keys: KeyMaterial, index: int, cell):
    col = schema.columns[index]
    if not col.sensitive:
        return cell
    return decode_value(crypto.decrypt_value(keys, cell), col.kind)


def decrypt_columns(schema: TableSchema, keys: KeyMaterial, row: EncryptedRow, columns) -> tuple:
    """Decrypt the named columns; other cells are returned untouched."""
    wanted = {schema.index_of(c) if isinstance(c, str) else int(c) for c in columns}
    return tuple(
        decrypt_cell(schema, keys, i, cell) if i in wanted else cell
        for i, cell in enumerate(row.cells)
    )


def is_ciphertext(cell) -> bool:
    return isinstance(cell, Ciphertext)
