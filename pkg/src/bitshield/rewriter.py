"""Translate plaintext conditions and queries into bitmask form.

Each sensitive atom becomes an OR of reference-bit tests over the partitions
that may satisfy it; non-sensitive atoms stay as plaintext comparisons the
store can run directly.  Whatever the bitmask form cannot decide exactly is
recorded as a residual filter for the query manager.
"""
from __future__ import annotations

from dataclasses import replace
from functools import lru_cache

from . import crypto
from .errors import KeyMismatchError, RewriteError
from .predicates import (
    TRUE,
    MaskAtom,
    MaskPairAtom,
    PlainAtom,
    PlainColumnAtom,
    Residual,
    RewrittenQuery,
    make_and,
    make_or,
)
from .schema import BitLayout, ColumnSpec, TableSchema, satisfying_partitions
from .sql import (
    And,
    ColumnAtom,
    ColumnRef,
    Not,
    Or,
    Select,
    SetOperation,
    ValueAtom,
    condition_columns,
    conjoin,
    output_columns,
)
from .values import TEXT, negate


def _mask(slot: int, layout: BitLayout, position: int) -> MaskAtom:
    word, offset = BitLayout.word_and_offset(position)
    return MaskAtom(slot, word, 1 << offset)


def _spec(schemas, ref: ColumnRef) -> tuple:
    schema = schemas[ref.slot or 0]
    ci = schema.index_of(ref.name)
    return schema, ci, schema.columns[ci]


# --------------------------------------------------------------------------
# condition kinds


def rewrite_value_condition(schema: TableSchema, layout: BitLayout, atom: ValueAtom, slot=None):
    """Column-versus-literal condition."""
    if slot is None:
        slot = atom.column.slot or 0
    ci = schema.index_of(atom.column.name)
    col = schema.columns[ci]
    if not col.sensitive:
        return PlainAtom(slot, col.name, atom.op, atom.value)
    if atom.op != "=" and not col.ordered:
        raise RewriteError(
            f"order comparison {atom.op!r} on column {col.name!r} whose partitions are unordered"
        )
    pds = satisfying_partitions(col, atom.op, atom.value)
    return make_or(_mask(slot, layout, layout.position(ci, pd.id)) for pd in pds)


def _pairs_for(op: str, a: ColumnSpec, b: ColumnSpec) -> list:
    if op == "=":
        return [(pa, pb) for pa in a.partitions for pb in b.partitions if pa.overlaps(pb)]
    if not (a.ordered and b.ordered):
        raise RewriteError(f"order comparison between {a.name!r} and {b.name!r} needs ordered partitions")
    text = a.kind == TEXT
    out = []
    for pa in a.partitions:
        alo, ahi = pa.hull()
        for pb in b.partitions:
            blo, bhi = pb.hull()
            if op in (">", ">="):
                ok = ahi >= blo if (text or op == ">=") else ahi > blo
            else:
                ok = alo <= bhi if (text or op == "<=") else alo < bhi
            if ok:
                out.append((pa, pb))
    return out


def rewrite_column_condition(schemas, layouts, atom: ColumnAtom):
    """Column-versus-column condition, paired partition by partition."""
    sa, ca, a = _spec(schemas, atom.left)
    sb, cb, b = _spec(schemas, atom.right)
    ls, rs = atom.left.slot or 0, atom.right.slot or 0
    if not a.sensitive and not b.sensitive:
        return PlainColumnAtom(ls, a.name, atom.op, rs, b.name)
    if a.sensitive != b.sensitive:
        return TRUE
    if a.kind != b.kind:
        raise RewriteError(f"columns {a.name!r} and {b.name!r} have incompatible partitions")
    la, lb = layouts[ls], layouts[rs]
    pairs = _pairs_for(atom.op, a, b)
    return make_or(
        MaskPairAtom(_mask(ls, la, la.position(ca, pa.id)), _mask(rs, lb, lb.position(cb, pb.id)))
        for pa, pb in pairs
    )


def to_nnf(expr, negated=False):
    """Push NOT down to the atoms."""
    if isinstance(expr, Not):
        return to_nnf(expr.item, not negated)
    if isinstance(expr, (And, Or)):
        items = tuple(to_nnf(e, negated) for e in expr.items)
        flipped = isinstance(expr, And) == negated
        return Or(items) if flipped else And(items)
    return Not(expr) if negated else expr


def _rewrite_negated(schemas, layouts, atom):
    if isinstance(atom, ValueAtom):
        schema, ci, col = _spec(schemas, atom.column)
        slot = atom.column.slot or 0
        if not col.sensitive:
            return PlainAtom(slot, col.name, negate(atom.op), atom.value)
        home = col.locate(atom.value)
        if atom.op == "=" and home.exact:
            layout = layouts[slot]
            return make_or(
                _mask(slot, layout, layout.position(ci, pd.id)) for pd in col.partitions if pd is not home
            )
        return TRUE
    _, _, a = _spec(schemas, atom.left)
    _, _, b = _spec(schemas, atom.right)
    if not a.sensitive and not b.sensitive:
        return PlainColumnAtom(atom.left.slot or 0, a.name, negate(atom.op), atom.right.slot or 0, b.name)
    return TRUE


def rewrite_compound(schemas, layouts, expr):
    """Rewrite an arbitrary condition tree; ``schemas``/``layouts`` are per slot."""
    if isinstance(schemas, TableSchema):
        schemas, layouts = (schemas,), (layouts,)

    def walk(e):
        if isinstance(e, ValueAtom):
            slot = e.column.slot or 0
            return rewrite_value_condition(schemas[slot], layouts[slot], e, slot)
        if isinstance(e, ColumnAtom):
            return rewrite_column_condition(schemas, layouts, e)
        if isinstance(e, Not):
            return _rewrite_negated(schemas, layouts, e.item)
        if isinstance(e, And):
            return make_and(walk(it) for it in e.items)
        if isinstance(e, Or):
            return make_or(walk(it) for it in e.items)
        raise TypeError(f"not a condition: {e!r}")

    if expr is None:
        return TRUE
    return walk(to_nnf(expr))


def is_exact(schemas, expr) -> bool:
    """Whether the rewritten predicate selects exactly the satisfying rows."""
    if isinstance(schemas, TableSchema):
        schemas = (schemas,)
    if expr is None:
        return True

    def atom_exact(atom, negated):
        if isinstance(atom, ValueAtom):
            _, _, col = _spec(schemas, atom.column)
            if not col.sensitive:
                return True
            return atom.op == "=" and col.locate(atom.value).exact
        _, _, a = _spec(schemas, atom.left)
        _, _, b = _spec(schemas, atom.right)
        if not a.sensitive and not b.sensitive:
            return True
        return not negated and a.sensitive and b.sensitive and a.exact and b.exact

    def walk(e):
        if isinstance(e, Not):
            return atom_exact(e.item, True)
        if isinstance(e, (And, Or)):
            return all(walk(it) for it in e.items)
        return atom_exact(e, False)

    return walk(to_nnf(expr))


# --------------------------------------------------------------------------
# whole queries


@lru_cache(maxsize=4096)
def _token(keys, name: str) -> str:
    return crypto.encrypt_name(keys, name)


class Keyring:
    """Maps a schema's key name to its KeyMaterial."""

    def __init__(self, keys):
        self._keys = dict(keys) if isinstance(keys, dict) else {"default": keys}

    def for_schema(self, schema: TableSchema):
        try:
            return self._keys[schema.key_name]
        except KeyError:
            raise KeyMismatchError(f"no key material named {schema.key_name!r}") from None

    def table_token(self, schema: TableSchema) -> str:
        return _token(self.for_schema(schema), schema.name)

    def column_id(self, schema: TableSchema, column: str) -> str:
        col = schema.column(column)
        return _token(self.for_schema(schema), col.name) if col.sensitive else col.name


def _reslot(expr, slot):
    if expr is None:
        return None
    if isinstance(expr, ValueAtom):
        return ValueAtom(replace(expr.column, slot=slot), expr.op, expr.value)
    if isinstance(expr, ColumnAtom):
        return ColumnAtom(replace(expr.left, slot=slot), expr.op, replace(expr.right, slot=slot))
    if isinstance(expr, Not):
        return Not(_reslot(expr.item, slot))
    return type(expr)(tuple(_reslot(e, slot) for e in expr.items))


def _touches_sensitive(schemas, refs) -> bool:
    return any(_spec(schemas, r)[2].sensitive for r in refs)


class QueryRewriter:
    """Turns resolved query ASTs into :class:`RewrittenQuery` plans."""

    def __init__(self, registry, keys):
        self.registry = registry
        self.keyring = keys if isinstance(keys, Keyring) else Keyring(keys)

    def _schemas(self, sel: Select) -> tuple:
        return tuple(self.registry.get(t.name) for t in sel.tables)

    def _projection(self, schemas, refs) -> tuple:
        per_slot = []
        for slot, schema in enumerate(schemas):
            wanted = {r.name.casefold() for r in refs if (r.slot or 0) == slot}
            per_slot.append(tuple(
                self.keyring.column_id(schema, c.name)
                for c in schema.columns if c.name.casefold() in wanted
            ))
        return tuple(per_slot)

    def _groups(self, schema: TableSchema, column: str, slot=0) -> tuple:
        """Per-partition masks of an ordered column, lowest partition first."""
        ci = schema.index_of(column)
        col = schema.columns[ci]
        layout = schema.layout
        ordered = sorted(col.partitions, key=lambda pd: pd.hull()[0])
        return tuple(_mask(slot, layout, layout.position(ci, pd.id)) for pd in ordered)

    def rewrite(self, ast) -> RewrittenQuery:
        if isinstance(ast, SetOperation):
            return self._set_operation(ast)
        if ast.join is not None:
            return self._join(ast)
        return self._select(ast)

    def _select(self, sel: Select) -> RewrittenQuery:
        schemas = self._schemas(sel)
        schema = schemas[0]
        cond = sel.where
        predicate = rewrite_compound(schemas, (schema.layout,), cond)
        exact = is_exact(schemas, cond)
        postfilter = None if exact else cond
        outputs = output_columns(sel, self.registry)
        refs = list(outputs)
        agg = sel.aggregate
        if agg is not None:
            refs = [agg.column] if agg.column is not None else []
        if sel.order_by is not None:
            refs.append(sel.order_by.column)
        cond_refs = condition_columns(cond)
        if postfilter is not None:
            refs.extend(cond_refs)
        forwarded = not _touches_sensitive(schemas, list(outputs) + refs + cond_refs)
        residual = Residual(postfilter, sel.distinct, sel.order_by, agg)
        table = (self.keyring.table_token(schema),)
        kind, groups, desc = "scan", (), False
        if agg is not None and agg.func == "count" and exact:
            return RewrittenQuery("count", table, predicate, None, residual, forwarded=forwarded)
        if agg is not None and agg.func in ("max", "min"):
            col = schema.column(agg.column.name)
            if col.sensitive and col.ordered:
                groups = self._groups(schema, col.name)
                desc = agg.func == "max"
        elif sel.order_by is not None:
            col = schema.column(sel.order_by.column.name)
            if col.sensitive and col.ordered:
                kind = "ordered_scan"
                groups = self._groups(schema, col.name)
                desc = sel.order_by.descending
        projection = self._projection(schemas, refs)
        return RewrittenQuery(
            kind, table, predicate, projection, residual, groups, desc, forwarded=forwarded
        )

    def _join(self, sel: Select) -> RewrittenQuery:
        schemas = self._schemas(sel)
        layouts = tuple(s.layout for s in schemas)
        cond = conjoin(sel.on, sel.where)
        predicate = rewrite_compound(schemas, layouts, cond)
        exact = is_exact(schemas, cond)
        outputs = output_columns(sel, self.registry)
        refs = list(outputs)
        if sel.order_by is not None:
            refs.append(sel.order_by.column)
        cond_refs = condition_columns(cond)
        refs.extend(cond_refs)
        forwarded = not _touches_sensitive(schemas, refs)
        residual = Residual(None if exact else cond, True, sel.order_by)
        tables = tuple(self.keyring.table_token(s) for s in schemas)
        return RewrittenQuery(
            "join", tables, predicate, self._projection(schemas, refs), residual, forwarded=forwarded
        )

    def _check_compatible(self, op: str, left: Select, right: Select):
        ls, rs = self.registry.get(left.source.name), self.registry.get(right.source.name)
        lcols = output_columns(left, self.registry)
        rcols = output_columns(right, self.registry)
        if len(lcols) != len(rcols):
            raise RewriteError(f"{op.upper()} operands must have the same number of columns")
        for a, b in zip(lcols, rcols):
            if ls.column(a.name).kind != rs.column(b.name).kind:
                raise RewriteError(
                    f"{op.upper()} column {a.name!r} and {b.name!r} have different domains"
                )
        if ls.key_name != rs.key_name:
            raise KeyMismatchError(f"{op.upper()} needs both tables encrypted under the same key")
        return ls, rs, lcols, rcols

    def _set_operation(self, ast: SetOperation) -> RewrittenQuery:
        ls, rs, lcols, rcols = self._check_compatible(ast.op, ast.left, ast.right)
        parts = (self._select(ast.left), self._select(ast.right))
        tables = (parts[0].tables[0], parts[1].tables[0])
        if ast.op == "union":
            return RewrittenQuery(
                "union_scan", tables, TRUE, None, Residual(distinct=True), parts=parts
            )
        schemas, layouts = (ls, rs), (ls.layout, rs.layout)
        pairs = []
        for a, b in zip(lcols, rcols):
            ca, cb = ls.column(a.name), rs.column(b.name)
            if ca.sensitive and cb.sensitive and not ca.has_ranges and not cb.has_ranges:
                pass
            elif not ca.sensitive and not cb.sensitive:
                pass
            else:
                continue
            pairs.append(rewrite_column_condition(
                schemas, layouts, ColumnAtom(replace(a, slot=0), "=", replace(b, slot=1))
            ))
        if not pairs:
            return RewrittenQuery(
                "intersect_join", tables, TRUE, None, Residual(distinct=True), parts=parts, fallback=True
            )
        predicate = make_and(
            pairs
            + [rewrite_compound(schemas, layouts, ast.left.where)]
            + [rewrite_compound(schemas, layouts, _reslot(ast.right.where, 1))]
        )
        projection = (parts[0].projection[0], parts[1].projection[0])
        return RewrittenQuery(
            "intersect_join", tables, predicate, projection, Residual(distinct=True), parts=parts
        )


def rewrite_query(ast, registry, keys) -> RewrittenQuery:
    return QueryRewriter(registry, keys).rewrite(ast)
