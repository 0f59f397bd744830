"""The query manager: parse, rewrite, run on the store, decrypt, finish locally.

Also hosts :func:`oracle_execute`, a plain relational evaluator over
plaintext tables used to check the encrypted path.

Result semantics shared by both paths:

* select/project/sort keep duplicates (multiset) unless DISTINCT is given;
* join, union and intersect results are duplicate-free;
* DISTINCT keeps the first occurrence, so row order is deterministic;
* ORDER BY is a stable sort under the package collation.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from decimal import Decimal
from typing import Optional

import numpy as np

from . import codec
from .crypto import CellDecryptor
from .errors import SchemaError
from .predicates import RewrittenQuery, make_and
from .rewriter import Keyring, QueryRewriter
from .schema import SchemaRegistry, TableSchema
from .sql import (
    And,
    ColumnAtom,
    Not,
    Or,
    QueryAst,
    Select,
    SetOperation,
    ValueAtom,
    conjoin,
    conjuncts,
    emit_sql,
    compile_condition,
    condition_columns,
    output_columns,
    parse,
)
from .values import sort_key


@dataclass
class CandidateStats:
    candidates_retrieved: int = 0
    table_size: int = 0
    decrypted_cells: int = 0
    matched: int = 0  # candidates that survived the residual filter
    full_decryptions: int = 0  # candidates whose output cells were decrypted
    cloud_exact: bool = False
    candidate_ids: set = field(default_factory=set)
    statements: list = field(default_factory=list)
    decrypt_seconds: float = 0.0
    elapsed_seconds: float = 0.0

    @property
    def fraction(self) -> float:
        if not self.table_size:
            return 0.0
        return self.candidates_retrieved / self.table_size

    def summary(self) -> str:
        return (
            f"candidates: {self.candidates_retrieved}/{self.table_size} "
            f"({100 * self.fraction:.1f}%)"
        )


@dataclass
class ResultSet:
    columns: tuple
    rows: list = field(default_factory=list)
    scalar: object = None
    aggregate: bool = False
    provenance: Optional[set] = None

    def as_multiset(self) -> dict:
        out: dict = {}
        for r in self.rows:
            out[r] = out.get(r, 0) + 1
        return out

    def matches(self, other: "ResultSet", mode: str = "multiset") -> bool:
        """Compare under ``mode``: list, multiset, set or scalar."""
        if self.aggregate or other.aggregate or mode == "scalar":
            return self.aggregate == other.aggregate and self.scalar == other.scalar
        if tuple(self.columns) != tuple(other.columns):
            return False
        if mode == "list":
            return self.rows == other.rows
        if mode == "set":
            return set(self.rows) == set(other.rows)
        return self.as_multiset() == other.as_multiset()


def comparison_mode(ast: QueryAst) -> str:
    if isinstance(ast, SetOperation):
        return "set"
    if ast.aggregate is not None:
        return "scalar"
    if ast.join is not None or ast.distinct:
        return "set"
    return "multiset"


def _distinct(rows) -> list:
    seen = set()
    out = []
    for r in rows:
        if r not in seen:
            seen.add(r)
            out.append(r)
    return out


def _average(values):
    if not values:
        return None
    return Decimal(sum(values)) / Decimal(len(values))


def _extreme(func: str, values):
    if not values:
        return None
    pick = max if func == "max" else min
    return pick(values, key=sort_key)


def _header(ref, qualify: bool) -> str:
    return f"{ref.table}.{ref.name}" if qualify else ref.name


def _agg_header(agg) -> str:
    return "COUNT(*)" if agg.column is None else f"{agg.func.upper()}({agg.column.name})"


class _Decryptor:
    """Per-query cache of decrypted cells keyed by (slot, row id, column)."""

    def __init__(self, keyring: Keyring, schemas, stats: CandidateStats):
        self.schemas = schemas
        self.stats = stats
        self._ciphers = [CellDecryptor(keyring.for_schema(s)) for s in schemas]
        self._cache: dict = {}
        self._bits: dict = {}
        self._getters: dict = {}

    def value(self, slot: int, row, column: str):
        return self.getter(slot, column)(row)

    def getter(self, slot: int, column: str):
        """``fn(row) -> plaintext`` for one column, decrypting at most once per cell."""
        fn = self._getters.get((slot, column))
        if fn is not None:
            return fn
        schema = self.schemas[slot]
        ci = schema.index_of(column)
        col = schema.columns[ci]
        if not col.sensitive:
            def fn(row):
                return row.cells[ci]
        else:
            cache, cipher, kind, stats = self._cache, self._ciphers[slot], col.kind, self.stats

            def fn(row):
                key = (slot, row.row_id, ci)
                try:
                    return cache[key]
                except KeyError:
                    pass
                t0 = time.perf_counter()
                value = cache[key] = codec.decode_value(cipher.decrypt(row.cells[ci]), kind)
                stats.decrypt_seconds += time.perf_counter() - t0
                stats.decrypted_cells += 1
                return value

        self._getters[(slot, column)] = fn
        return fn

    def _singleton_bit(self, atom: ValueAtom):
        """Bit position deciding ``atom`` exactly, or None if it needs the value."""
        if atom not in self._bits:
            pos = None
            schema = self.schemas[atom.column.slot or 0]
            col = schema.column(atom.column.name)
            if col.sensitive and atom.op == "=":
                pd = col.locate(atom.value)
                if pd.exact:
                    pos = schema.layout.position(schema.index_of(col.name), pd.id)
            self._bits[atom] = pos
        return self._bits[atom]

    def _bit_test(self, atom):
        if isinstance(atom, ValueAtom):
            pos = self._singleton_bit(atom)
            if pos is not None:
                slot = atom.column.slot or 0
                return lambda rows: rows[slot].reference.test(pos)
        return None

    def _accessor(self, ref):
        slot = ref.slot or 0
        get = self.getter(slot, ref.name)
        return lambda rows: get(rows[slot])

    def compile(self, expr):
        """Residual test over candidate rows; atoms the reference bits decide
        exactly are answered without decrypting."""
        return compile_condition(expr, self._accessor, self._bit_test)


_NP_CMP = {
    "=": np.equal,
    "<>": np.not_equal,
    ">": np.greater,
    ">=": np.greater_equal,
    "<": np.less,
    "<=": np.less_equal,
}


def _ranks(keys_a, keys_b) -> tuple:
    """Joint dense ranks of two key lists, so comparisons can run on integers."""
    rank = {k: i for i, k in enumerate(sorted(set(keys_a) | set(keys_b)))}
    return (np.fromiter((rank[k] for k in keys_a), dtype=np.int64, count=len(keys_a)),
            np.fromiter((rank[k] for k in keys_b), dtype=np.int64, count=len(keys_b)))


class _PairFilter:
    """Residual test over candidate pairs held as row-id arrays.

    Subconditions touching one side are decided once per row and memoized;
    cross-side comparisons rank both sides' decrypted values under the
    collation and compare the ranks with numpy.  AND/OR only pass undecided
    pairs on to later items, so decryption stays as lazy as row-at-a-time
    evaluation.
    """

    def __init__(self, dec: _Decryptor, rows, ids, sizes):
        self.dec = dec
        self.rows = rows
        self.ids = ids
        self.sizes = sizes
        self._memo: dict = {}

    def __call__(self, expr) -> np.ndarray:
        return self._eval(expr, np.arange(len(self.ids[0])))

    def _eval(self, e, sel):
        slots = {c.slot or 0 for c in condition_columns(e)}
        if len(slots) == 1:
            return self._local(e, slots.pop(), sel)
        if isinstance(e, And):
            out = np.ones(len(sel), dtype=bool)
            for it in e.items:
                live = np.flatnonzero(out)
                if not live.size:
                    break
                out[live] = self._eval(it, sel[live])
            return out
        if isinstance(e, Or):
            out = np.zeros(len(sel), dtype=bool)
            for it in e.items:
                pending = np.flatnonzero(~out)
                if not pending.size:
                    break
                out[pending] = self._eval(it, sel[pending])
            return out
        if isinstance(e, Not):
            return ~self._eval(e.item, sel)
        return self._cross(e, sel)

    def _local(self, e, slot: int, sel):
        memo = self._memo.get(e)
        if memo is None:
            # 0 unknown, 1 false, 2 true
            memo = self._memo[e] = (np.zeros(self.sizes[slot], dtype=np.int8), self.dec.compile(e))
        state, test = memo
        ids = self.ids[slot][sel]
        rows = self.rows[slot]
        for i in np.unique(ids[state[ids] == 0]).tolist():
            args = (rows[i],) if slot == 0 else (None, rows[i])
            state[i] = 2 if test(args) else 1
        return state[ids] == 2

    def keys(self, ref, ids) -> tuple:
        """Collation keys for the distinct ``ids`` plus the inverse index."""
        uniq, inv = np.unique(ids, return_inverse=True)
        slot = ref.slot or 0
        get, rows = self.dec.getter(slot, ref.name), self.rows[slot]
        return [sort_key(get(rows[i])) for i in uniq.tolist()], inv

    def _cross(self, atom: ColumnAtom, sel):
        lk, linv = self.keys(atom.left, self.ids[atom.left.slot][sel])
        rk, rinv = self.keys(atom.right, self.ids[atom.right.slot][sel])
        lr, rr = _ranks(lk, rk)
        return _NP_CMP[atom.op](lr[linv], rr[rinv])


class QueryManager:
    """Trusted client: owns keys and schemas, talks to an untrusted store."""

    def __init__(self, store, keys, registry: Optional[SchemaRegistry] = None):
        self.store = store
        self.keyring = keys if isinstance(keys, Keyring) else Keyring(keys)
        self.registry = registry if registry is not None else SchemaRegistry()
        self.rewriter = QueryRewriter(self.registry, self.keyring)

    # -- loading ------------------------------------------------------------

    def define(self, definition) -> TableSchema:
        schema = self.registry.define(definition)
        self._create(schema)
        return schema

    def register(self, schema: TableSchema) -> TableSchema:
        """Register a schema; create its store table if it does not exist yet."""
        if schema.name not in self.registry:
            self.registry.register(schema)
        self._create(schema)
        return schema

    def _create(self, schema: TableSchema):
        token = self.keyring.table_token(schema)
        if not self.store.has_table(token):
            self.store.create_table(
                token,
                [self.keyring.column_id(schema, c.name) for c in schema.columns],
                schema.layout.word_count,
                [c.sensitive for c in schema.columns],
                [c.kind == "numeric" for c in schema.columns],
            )

    def encrypt_rows(self, table: str, rows) -> list:
        schema = self.registry.get(table)
        keys = self.keyring.for_schema(schema)
        return [codec.encrypt_row(schema, schema.layout, keys, r) for r in rows]

    def load(self, table: str, rows) -> int:
        """Encrypt plaintext rows and bulk-insert them."""
        schema = self.registry.get(table)
        encrypted = self.encrypt_rows(table, rows)
        return self.store.insert(self.keyring.table_token(schema), encrypted)

    # -- planning -------------------------------------------------------------

    def parse(self, sql_text: str) -> QueryAst:
        return parse(sql_text, self.registry)

    def rewrite(self, query) -> RewrittenQuery:
        ast = self.parse(query) if isinstance(query, str) else query
        return self.rewriter.rewrite(ast)

    def explain(self, query) -> str:
        return emit_sql(self.rewrite(query))

    # -- execution ------------------------------------------------------------

    def execute(self, query) -> tuple:
        """Run a query end to end; returns ``(ResultSet, CandidateStats)``."""
        t0 = time.perf_counter()
        ast = self.parse(query) if isinstance(query, str) else query
        rq = self.rewriter.rewrite(ast)
        stats = CandidateStats()
        if isinstance(ast, SetOperation):
            result = self._set_operation(ast, rq, stats)
        elif ast.join is not None:
            result = self._join(ast, rq, stats)
        elif ast.aggregate is not None:
            result = self._aggregate(ast, rq, stats)
        else:
            result = self._select(ast, rq, stats)
        stats.elapsed_seconds = time.perf_counter() - t0
        return result, stats

    def _schemas(self, sel: Select) -> tuple:
        return tuple(self.registry.get(t.name) for t in sel.tables)

    def _fetch(self, rq: RewrittenQuery, stats: CandidateStats, predicate=None) -> list:
        predicate = rq.predicate if predicate is None else predicate
        handle = rq.tables[0]
        stats.statements.append(emit_sql(replace(rq, predicate=predicate)))
        if rq.kind == "ordered_scan":
            rows = self.store.ordered_scan(handle, predicate, rq.groups, rq.descending, rq.projection[0])
        else:
            rows = self.store.scan(handle, predicate, rq.projection[0] if rq.projection else None)
        stats.candidates_retrieved += len(rows)
        return rows

    def _filtered(self, rows, postfilter, dec: _Decryptor, stats: CandidateStats, tag=None) -> list:
        kept = []
        test = None if postfilter is None else dec.compile(postfilter)
        for row in rows:
            stats.candidate_ids.add(row.row_id if tag is None else (tag, row.row_id))
            if test is None or test((row,)):
                kept.append(row)
        stats.matched += len(kept)
        return kept

    def _select_rows(self, sel: Select, rq: RewrittenQuery, stats: CandidateStats, tag=None) -> list:
        """Decrypted output tuples of a single-table select (before distinct)."""
        schemas = self._schemas(sel)
        dec = _Decryptor(self.keyring, schemas, stats)
        stats.table_size += self.store.size(rq.tables[0])
        rows = self._filtered(self._fetch(rq, stats), rq.residual.postfilter, dec, stats, tag)
        if sel.order_by is not None:
            oc = sel.order_by.column
            rows = sorted(
                rows,
                key=lambda r, get=dec.getter(0, oc.name): sort_key(get(r)),
                reverse=sel.order_by.descending,
            )
        outputs = output_columns(sel, self.registry)
        stats.full_decryptions += len(rows)
        gets = [dec.getter(0, c.name) for c in outputs]
        return [tuple(g(r) for g in gets) for r in rows]

    def _select(self, sel: Select, rq: RewrittenQuery, stats: CandidateStats) -> ResultSet:
        out = self._select_rows(sel, rq, stats)
        if sel.distinct:
            out = _distinct(out)
        headers = tuple(c.name for c in output_columns(sel, self.registry))
        return ResultSet(headers, out)

    def _aggregate(self, sel: Select, rq: RewrittenQuery, stats: CandidateStats) -> ResultSet:
        agg = sel.aggregate
        header = (_agg_header(agg),)
        handle = rq.tables[0]
        stats.table_size = self.store.size(handle)
        if rq.kind == "count":
            stats.statements.append(emit_sql(rq))
            stats.cloud_exact = True
            # ids only; nothing is shipped back or decrypted
            stats.candidate_ids.update(self.store.scan_ids(handle, rq.predicate))
            return ResultSet(header, scalar=self.store.count(handle, rq.predicate), aggregate=True)
        schemas = self._schemas(sel)
        dec = _Decryptor(self.keyring, schemas, stats)
        postfilter = rq.residual.postfilter
        if agg.func in ("max", "min") and rq.groups:
            probes = reversed(rq.groups) if rq.descending else rq.groups
            for group in probes:
                rows = self._filtered(
                    self._fetch(rq, stats, make_and([rq.predicate, group])), postfilter, dec, stats
                )
                if rows:
                    get = dec.getter(0, agg.column.name)
                    values = [get(r) for r in rows]
                    return ResultSet(header, scalar=_extreme(agg.func, values), aggregate=True)
            return ResultSet(header, scalar=None, aggregate=True)
        rows = self._filtered(self._fetch(rq, stats), postfilter, dec, stats)
        if agg.func == "count":
            return ResultSet(header, scalar=len(rows), aggregate=True)
        get = dec.getter(0, agg.column.name)
        values = [get(r) for r in rows]
        if agg.func == "avg":
            return ResultSet(header, scalar=_average(values), aggregate=True)
        return ResultSet(header, scalar=_extreme(agg.func, values), aggregate=True)

    def _join(self, sel: Select, rq: RewrittenQuery, stats: CandidateStats) -> ResultSet:
        schemas = self._schemas(sel)
        dec = _Decryptor(self.keyring, schemas, stats)
        outputs = output_columns(sel, self.registry)
        headers = tuple(_header(c, True) for c in outputs)
        left, right = rq.tables
        sizes = (self.store.size(left), self.store.size(right))
        stats.table_size = sizes[0] * sizes[1]
        stats.statements.append(emit_sql(rq))
        li, ri = self.store.join_pairs(left, right, rq.predicate)
        stats.candidates_retrieved = len(li)
        stats.candidate_ids.update(zip(li.tolist(), ri.tolist()))
        if not len(li):
            return ResultSet(headers, [])
        proj = rq.projection or (None, None)
        rows = (self.store.fetch(left, np.unique(li), proj[0]),
                self.store.fetch(right, np.unique(ri), proj[1]))
        pf = _PairFilter(dec, rows, (li, ri), sizes)
        kept = np.arange(len(li))
        if rq.residual.postfilter is not None:
            kept = np.flatnonzero(pf(rq.residual.postfilter))
        stats.matched = stats.full_decryptions = len(kept)
        if sel.order_by is not None and len(kept):
            oc = sel.order_by.column
            keys, inv = pf.keys(oc, (li, ri)[oc.slot][kept])
            rank = _ranks(keys, [])[0][inv]
            kept = kept[np.argsort(-rank if sel.order_by.descending else rank, kind="stable")]
        # dedupe on per-side output tuples before assembling rows
        side_cols = [[c for c in outputs if c.slot == s] for s in (0, 1)]
        codes, values = [], []
        for s in (0, 1):
            ids = (li, ri)[s][kept]
            gets = [dec.getter(s, c.name) for c in side_cols[s]]
            table: dict = {}
            per_id = {}
            for i in np.unique(ids).tolist():
                t = tuple(g(rows[s][i]) for g in gets)
                per_id[i] = table.setdefault(t, len(table))
            values.append({v: k for k, v in table.items()})
            codes.append(np.fromiter((per_id[i] for i in ids.tolist()), dtype=np.int64, count=len(ids)))
        combined = codes[0] * max(1, len(values[1])) + codes[1]
        first = np.sort(np.unique(combined, return_index=True)[1])
        out = []
        for k in first.tolist():
            lt, rt = values[0][codes[0][k]], values[1][codes[1][k]]
            it = (iter(lt), iter(rt))
            out.append(tuple(next(it[c.slot]) for c in outputs))
        return ResultSet(headers, out)

    def _set_operation(self, ast: SetOperation, rq: RewrittenQuery, stats: CandidateStats) -> ResultSet:
        headers = tuple(c.name for c in output_columns(ast.left, self.registry))
        if ast.op == "union" or rq.fallback:
            left = self._select_rows(ast.left, rq.parts[0], stats, tag=0)
            right = self._select_rows(ast.right, rq.parts[1], stats, tag=1)
            if ast.op == "union":
                return ResultSet(headers, _distinct(left + right))
            present = set(right)
            return ResultSet(headers, _distinct(r for r in left if r in present))
        schemas = (self.registry.get(ast.left.source.name), self.registry.get(ast.right.source.name))
        stats.table_size = sum(self.store.size(t) for t in rq.tables)
        stats.statements.append(emit_sql(rq))
        pairs = self.store.join(rq.tables[0], rq.tables[1], rq.predicate, rq.projection)
        lrows, rrows = {}, {}
        for a, b in pairs:
            lrows.setdefault(a.row_id, a)
            rrows.setdefault(b.row_id, b)
        stats.candidates_retrieved = len(lrows) + len(rrows)
        ldec = _Decryptor(self.keyring, schemas[:1], stats)
        rdec = _Decryptor(self.keyring, schemas[1:], stats)
        lkept = self._filtered(lrows.values(), rq.parts[0].residual.postfilter, ldec, stats, tag=0)
        rkept = self._filtered(rrows.values(), rq.parts[1].residual.postfilter, rdec, stats, tag=1)
        lout = output_columns(ast.left, self.registry)
        rout = output_columns(ast.right, self.registry)
        rgets = [rdec.getter(0, c.name) for c in rout]
        lgets = [ldec.getter(0, c.name) for c in lout]
        present = {tuple(g(r) for g in rgets) for r in rkept}
        left_tuples = [tuple(g(r) for g in lgets) for r in lkept]
        stats.full_decryptions = len(lkept) + len(rkept)
        return ResultSet(headers, _distinct(t for t in left_tuples if t in present))


# --------------------------------------------------------------------------
# plaintext oracle


@dataclass
class PlainTable:
    schema: TableSchema
    rows: list


def _table(tables, name: str) -> PlainTable:
    for key, t in tables.items():
        if key.casefold() == name.casefold():
            return t if isinstance(t, PlainTable) else PlainTable(*t)
    raise SchemaError(f"unknown table {name!r}")


def _plain_accessor(tables):
    def accessor(ref):
        slot = ref.slot or 0
        idx = tables[slot].schema.index_of(ref.name)
        return lambda rows: rows[slot][idx]
    return accessor


def _filter_rows(t: PlainTable, cond) -> list:
    test = compile_condition(cond, _plain_accessor((t,)))
    return [(i, r) for i, r in enumerate(t.rows) if test((r,))]


def _oracle_select(sel: Select, tables, registry) -> tuple:
    """(output tuples, provenance ids) for a single-table select, before distinct."""
    t = _table(tables, sel.source.name)
    hits = _filter_rows(t, sel.where)
    if sel.order_by is not None:
        oi = t.schema.index_of(sel.order_by.column.name)
        hits.sort(key=lambda ir: sort_key(ir[1][oi]), reverse=sel.order_by.descending)
    outputs = [t.schema.index_of(c.name) for c in output_columns(sel, registry)]
    return [tuple(r[o] for o in outputs) for _, r in hits], [i for i, _ in hits]


def _slots(expr) -> set:
    return {c.slot or 0 for c in condition_columns(expr)}


def _oracle_join_pairs(cond, lt: PlainTable, rt: PlainTable) -> list:
    """Matching (i, j) index pairs in left-major order.

    Conjuncts touching one side filter that side first; a cross-side equality
    conjunct, if any, drives a hash join; the full condition is then re-checked
    on every surviving pair.
    """
    items = conjuncts(cond)
    sides = []
    for slot, t in ((0, lt), (1, rt)):
        local = [e for e in items if _slots(e) == {slot}]
        keep = compile_condition(conjoin(*local), _plain_accessor(((t,) if slot == 0 else (None, t))))
        sides.append([i for i, r in enumerate(t.rows) if keep((r,) if slot == 0 else (None, r))])
    left, right = sides
    equi = next(
        (a for a in items if isinstance(a, ColumnAtom) and a.op == "=" and _slots(a) == {0, 1}),
        None,
    )
    if equi is None:
        pairs = ((i, j) for i in left for j in right)
    else:
        lref, rref = (equi.left, equi.right) if equi.left.slot == 0 else (equi.right, equi.left)
        li, ri = lt.schema.index_of(lref.name), rt.schema.index_of(rref.name)
        buckets: dict = {}
        for j in right:
            buckets.setdefault(sort_key(rt.rows[j][ri]), []).append(j)
        pairs = ((i, j) for i in left for j in buckets.get(sort_key(lt.rows[i][li]), ()))
    test = compile_condition(cond, _plain_accessor((lt, rt)))
    return [(i, j) for i, j in pairs if test((lt.rows[i], rt.rows[j]))]


def oracle_execute(ast: QueryAst, tables, registry=None) -> ResultSet:
    """Evaluate a resolved query directly over plaintext tables.

    ``tables`` maps table names to :class:`PlainTable` (or ``(schema, rows)``).
    The result carries ``provenance``: ids of the input rows (or row pairs)
    that contribute to the answer, in the same id scheme the store uses.
    """
    if registry is None:
        registry = SchemaRegistry(
            (t if isinstance(t, PlainTable) else PlainTable(*t)).schema for t in tables.values()
        )
    if isinstance(ast, SetOperation):
        headers = tuple(c.name for c in output_columns(ast.left, registry))
        left, lids = _oracle_select(ast.left, tables, registry)
        right, rids = _oracle_select(ast.right, tables, registry)
        if ast.op == "union":
            prov = {(0, i) for i in lids} | {(1, i) for i in rids}
            return ResultSet(headers, _distinct(left + right), provenance=prov)
        common = set(left) & set(right)
        prov = {(0, i) for i, t in zip(lids, left) if t in common}
        prov |= {(1, i) for i, t in zip(rids, right) if t in common}
        return ResultSet(headers, _distinct(t for t in left if t in common), provenance=prov)

    sel = ast
    if sel.join is not None:
        pt = (_table(tables, sel.source.name), _table(tables, sel.join.name))
        hits = [((i, j), (pt[0].rows[i], pt[1].rows[j]))
                for i, j in _oracle_join_pairs(conjoin(sel.on, sel.where), *pt)]
        if sel.order_by is not None:
            oc = sel.order_by.column
            oi = pt[oc.slot].schema.index_of(oc.name)
            hits.sort(key=lambda h: sort_key(h[1][oc.slot][oi]), reverse=sel.order_by.descending)
        outputs = output_columns(sel, registry)
        out = [
            tuple(rows[c.slot][pt[c.slot].schema.index_of(c.name)] for c in outputs)
            for _, rows in hits
        ]
        headers = tuple(_header(c, True) for c in outputs)
        return ResultSet(headers, _distinct(out), provenance={ij for ij, _ in hits})

    if sel.aggregate is not None:
        agg = sel.aggregate
        t = _table(tables, sel.source.name)
        hits = _filter_rows(t, sel.where)
        header = (_agg_header(agg),)
        if agg.func == "count":
            return ResultSet(header, scalar=len(hits), aggregate=True, provenance={i for i, _ in hits})
        ci = t.schema.index_of(agg.column.name)
        values = [r[ci] for _, r in hits]
        if agg.func == "avg":
            return ResultSet(header, scalar=_average(values), aggregate=True,
                             provenance={i for i, _ in hits})
        best = _extreme(agg.func, values)
        prov = {i for i, r in hits if best is not None and sort_key(r[ci]) == sort_key(best)}
        return ResultSet(header, scalar=best, aggregate=True, provenance=prov)

    out, ids = _oracle_select(sel, tables, registry)
    if sel.distinct:
        out = _distinct(out)
    headers = tuple(c.name for c in output_columns(sel, registry))
    return ResultSet(headers, out, provenance=set(ids))
