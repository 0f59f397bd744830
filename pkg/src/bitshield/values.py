"""Value kinds, canonical serialization and the collation used everywhere.

Text compares case-insensitively (``str.casefold``), the way a default MySQL
collation would.  The same key drives WHERE comparisons, ORDER BY, MAX and MIN,
which keeps letter-range partitions ordered consistently with the values they
hold.  DISTINCT, UNION and INTERSECT compare raw values.
"""
from __future__ import annotations

import re
from decimal import Decimal, InvalidOperation
from typing import Union

Number = Union[int, Decimal]
Value = Union[int, Decimal, str]

TEXT = "text"
NUMERIC = "numeric"

COMPARISON_OPS = ("=", ">", ">=", "<", "<=")

_INT_RE = re.compile(r"[+-]?\d+")
_DEC_RE = re.compile(r"[+-]?(\d+\.\d*|\.\d+)")


def is_number(value) -> bool:
    return isinstance(value, (int, Decimal)) and not isinstance(value, bool)


def parse_number(text: str) -> Number:
    """Parse an integer or fixed-point decimal literal; floats are refused."""
    s = text.strip()
    if _INT_RE.fullmatch(s):
        return int(s)
    if _DEC_RE.fullmatch(s):
        try:
            return Decimal(s)
        except InvalidOperation:  # pragma: no cover - regex already filters
            pass
    raise ValueError(f"not an integer or fixed-point decimal: {text!r}")


def format_number(value: Number) -> str:
    if isinstance(value, Decimal):
        return format(value, "f")
    return str(int(value))


def coerce(value, kind: str) -> Value:
    """Convert a raw (e.g. CSV or JSON) value to the python type for ``kind``."""
    if kind == NUMERIC:
        if is_number(value):
            return value
        if isinstance(value, float):
            raise ValueError("floating point values are not supported; use a decimal string")
        return parse_number(str(value))
    if kind == TEXT:
        if not isinstance(value, str):
            raise ValueError(f"expected text, got {value!r}")
        return value
    raise ValueError(f"unknown value kind {kind!r}")


def kind_of(value) -> str:
    if is_number(value):
        return NUMERIC
    if isinstance(value, str):
        return TEXT
    raise TypeError(f"unsupported value {value!r}")


def sort_key(value):
    if isinstance(value, str):
        return value.casefold()
    return value


def compare(op: str, left, right) -> bool:
    """Evaluate ``left op right`` under the package collation."""
    if kind_of(left) != kind_of(right):
        raise TypeError(f"cannot compare {left!r} with {right!r}")
    a, b = sort_key(left), sort_key(right)
    if op == "=":
        return a == b
    if op == "<>":
        return a != b
    if op == ">":
        return a > b
    if op == ">=":
        return a >= b
    if op == "<":
        return a < b
    if op == "<=":
        return a <= b
    raise ValueError(f"unknown comparison {op!r}")


def flip(op: str) -> str:
    """Mirror an operator so that ``a op b`` becomes ``b flip(op) a``."""
    return {"=": "=", "<>": "<>", ">": "<", "<": ">", ">=": "<=", "<=": ">="}[op]


def negate(op: str) -> str:
    return {"=": "<>", "<>": "=", ">": "<=", "<=": ">", "<": ">=", ">=": "<"}[op]
