"""Cloud-side predicate trees and the rewritten-query plan.

Everything in a :class:`CloudPredicate` is safe to hand to the untrusted
store: bitmask tests over reference words and comparisons on non-sensitive
plaintext columns.  Tables are addressed by *slot*: 0 for the left/only table,
1 for the right table of a join.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Union

from .values import compare


@dataclass(frozen=True)
class MaskAtom:
    """``(reference{word} & mask) != 0`` on the table in ``slot``."""

    slot: int
    word: int
    mask: int

    def __post_init__(self):
        if self.mask == 0 or self.mask >> 64:
            raise ValueError("mask must be a non-zero 64-bit value")
        if self.word < 0:
            raise ValueError("word index must be non-negative")


@dataclass(frozen=True)
class MaskPairAtom:
    left: MaskAtom
    right: MaskAtom


@dataclass(frozen=True)
class PlainAtom:
    slot: int
    column: str
    op: str
    value: object


@dataclass(frozen=True)
class PlainColumnAtom:
    left_slot: int
    left_column: str
    op: str
    right_slot: int
    right_column: str


@dataclass(frozen=True)
class Const:
    value: bool


@dataclass(frozen=True)
class And:
    items: tuple


@dataclass(frozen=True)
class Or:
    items: tuple


TRUE = Const(True)
FALSE = Const(False)

CloudPredicate = Union[MaskAtom, MaskPairAtom, PlainAtom, PlainColumnAtom, Const, And, Or]


def make_or(items) -> CloudPredicate:
    """OR with flattening, constant folding and same-word mask merging."""
    flat = []
    for it in items:
        if isinstance(it, Or):
            flat.extend(it.items)
        else:
            flat.append(it)
    if any(it == TRUE for it in flat):
        return TRUE
    merged: dict = {}
    out = []
    for it in flat:
        if it == FALSE:
            continue
        if isinstance(it, MaskAtom):
            key = (it.slot, it.word)
            if key in merged:
                idx = merged[key]
                prev = out[idx]
                out[idx] = MaskAtom(prev.slot, prev.word, prev.mask | it.mask)
                continue
            merged[key] = len(out)
        if it not in out:
            out.append(it)
    if not out:
        return FALSE
    if len(out) == 1:
        return out[0]
    return Or(tuple(out))


def make_and(items) -> CloudPredicate:
    flat = []
    for it in items:
        if isinstance(it, And):
            flat.extend(it.items)
        else:
            flat.append(it)
    if any(it == FALSE for it in flat):
        return FALSE
    out = []
    for it in flat:
        if it != TRUE and it not in out:
            out.append(it)
    if not out:
        return TRUE
    if len(out) == 1:
        return out[0]
    return And(tuple(out))


def iter_atoms(pred):
    if isinstance(pred, (And, Or)):
        for it in pred.items:
            yield from iter_atoms(pred=it)
    elif isinstance(pred, MaskPairAtom):
        yield pred.left
        yield pred.right
    elif not isinstance(pred, Const):
        yield pred


def evaluate(pred, reference: Callable, plain: Callable) -> bool:
    """Reference evaluator: ``reference(slot)`` gives a word tuple and
    ``plain(slot, column)`` a plaintext cell."""
    if isinstance(pred, Const):
        return pred.value
    if isinstance(pred, MaskAtom):
        return bool(reference(pred.slot)[pred.word] & pred.mask)
    if isinstance(pred, MaskPairAtom):
        return evaluate(pred.left, reference, plain) and evaluate(pred.right, reference, plain)
    if isinstance(pred, PlainAtom):
        return compare(pred.op, plain(pred.slot, pred.column), pred.value)
    if isinstance(pred, PlainColumnAtom):
        return compare(
            pred.op,
            plain(pred.left_slot, pred.left_column),
            plain(pred.right_slot, pred.right_column),
        )
    if isinstance(pred, And):
        return all(evaluate(it, reference, plain) for it in pred.items)
    if isinstance(pred, Or):
        return any(evaluate(it, reference, plain) for it in pred.items)
    raise TypeError(f"not a cloud predicate: {pred!r}")


@dataclass(frozen=True)
class Residual:
    """Work left to the query manager after decryption."""

    postfilter: object = None  # plaintext condition to re-apply, or None
    distinct: bool = False
    sort: object = None  # OrderBy or None
    aggregate: object = None  # Aggregate or None

    @property
    def exact(self) -> bool:
        return self.postfilter is None


@dataclass(frozen=True)
class RewrittenQuery:
    """A query split into the part sent to the store and the part kept local.

    ``kind`` is one of scan, join, count, ordered_scan, union_scan,
    intersect_join.  ``tables`` holds table tokens per slot and
    ``projection`` the stored column ids to fetch per slot (None means every
    column).  ``groups`` lists the per-partition masks of an ordered scan or a
    max/min probe, lowest partition first.  ``parts`` carries the two operand
    plans of a set operation.
    """

    kind: str
    tables: tuple
    predicate: CloudPredicate = TRUE
    projection: Optional[tuple] = None
    residual: Residual = field(default_factory=Residual)
    groups: tuple = ()
    descending: bool = False
    parts: tuple = ()
    forwarded: bool = False  # no sensitive column involved
    fallback: bool = False  # intersect without a usable join condition

    @property
    def exact(self) -> bool:
        return self.residual.exact and all(p.exact for p in self.parts)
