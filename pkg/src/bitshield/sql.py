"""SQL subset: tokenizer, recursive-descent parser, resolver and emitters.

Grammar (keywords are case-insensitive, string literals use double or single
quotes, identifiers with spaces go in backticks)::

    query   := select [(UNION | INTERSECT) select] [;]
    select  := SELECT [DISTINCT] items FROM table [[INNER] JOIN table ON cond]
               [WHERE cond] [ORDER BY column [ASC | DESC]]
    items   := * | COUNT(*) | MAX(column) | MIN(column) | AVG(column)
             | column {, column}
    table   := name [[AS] alias]
    cond    := conj {OR conj};  conj := neg {AND neg}
    neg     := NOT neg | ( cond ) | operand op operand
    op      := = | > | >= | < | <=
"""
from __future__ import annotations

import operator
import re
from dataclasses import dataclass, replace
from decimal import Decimal
from typing import Optional, Union

from .errors import ResolutionError, SchemaError, SqlSyntaxError
from .predicates import (
    And as PAnd,
    Const,
    MaskAtom,
    MaskPairAtom,
    Or as POr,
    PlainAtom,
    PlainColumnAtom,
    RewrittenQuery,
)
from .values import NUMERIC, compare, flip, format_number, is_number, kind_of, sort_key

# --------------------------------------------------------------------------
# syntax tree


@dataclass(frozen=True)
class ColumnRef:
    name: str
    table: Optional[str] = None  # qualifier as written; canonical table name once resolved
    slot: Optional[int] = None


@dataclass(frozen=True)
class ValueAtom:
    column: ColumnRef
    op: str
    value: object


@dataclass(frozen=True)
class ColumnAtom:
    left: ColumnRef
    op: str
    right: ColumnRef


@dataclass(frozen=True)
class And:
    items: tuple


@dataclass(frozen=True)
class Or:
    items: tuple


@dataclass(frozen=True)
class Not:
    item: object


ConditionExpr = Union[ValueAtom, ColumnAtom, And, Or, Not]


@dataclass(frozen=True)
class Aggregate:
    func: str  # count, max, min, avg
    column: Optional[ColumnRef] = None


@dataclass(frozen=True)
class TableRef:
    name: str
    alias: Optional[str] = None


@dataclass(frozen=True)
class OrderBy:
    column: ColumnRef
    descending: bool = False


@dataclass(frozen=True)
class Select:
    source: TableRef
    columns: Optional[tuple] = None  # None means *
    distinct: bool = False
    aggregate: Optional[Aggregate] = None
    join: Optional[TableRef] = None
    on: Optional[object] = None
    where: Optional[object] = None
    order_by: Optional[OrderBy] = None

    @property
    def kind(self) -> str:
        if self.aggregate is not None:
            return "aggregate"
        return "join" if self.join is not None else "select"

    @property
    def tables(self) -> tuple:
        return (self.source,) if self.join is None else (self.source, self.join)


@dataclass(frozen=True)
class SetOperation:
    op: str  # union or intersect
    left: Select
    right: Select

    @property
    def kind(self) -> str:
        return self.op

    @property
    def distinct(self) -> bool:
        return True


QueryAst = Union[Select, SetOperation]


def condition_columns(expr) -> list:
    """Column references of a condition, in first-seen order."""
    out = []

    def walk(e):
        if isinstance(e, ValueAtom):
            refs = [e.column]
        elif isinstance(e, ColumnAtom):
            refs = [e.left, e.right]
        elif isinstance(e, (And, Or)):
            for it in e.items:
                walk(it)
            return
        elif isinstance(e, Not):
            walk(e.item)
            return
        else:
            return
        for r in refs:
            if r not in out:
                out.append(r)

    walk(expr)
    return out


def conjoin(*conds):
    items = [c for c in conds if c is not None]
    if not items:
        return None
    return items[0] if len(items) == 1 else And(tuple(items))


def conjuncts(expr) -> list:
    """Top-level AND items, nested ANDs flattened."""
    if expr is None:
        return []
    if isinstance(expr, And):
        return [c for e in expr.items for c in conjuncts(e)]
    return [expr]


# --------------------------------------------------------------------------
# tokenizer

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<number>-?\d+(?:\.\d+)?)
  | (?P<string>"(?:[^"]|"")*"|'(?:[^']|'')*')
  | (?P<quoted>`[^`]+`)
  | (?P<word>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>>=|<=|≥|≤|=|>|<)
  | (?P<punct>[(),.*;])
    """,
    re.VERBOSE,
)

KEYWORDS = {
    "SELECT", "DISTINCT", "FROM", "INNER", "JOIN", "ON", "WHERE", "ORDER", "BY",
    "ASC", "DESC", "AND", "OR", "NOT", "UNION", "INTERSECT", "AS",
    "COUNT", "MAX", "MIN", "AVG",
}


@dataclass(frozen=True)
class Token:
    type: str  # kw, ident, number, string, op, punct, eof
    value: object
    pos: int


def tokenize(text: str) -> list:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise SqlSyntaxError(f"unexpected character {text[pos]!r}", pos)
        kind = m.lastgroup
        raw = m.group()
        if kind == "number":
            tokens.append(Token("number", Decimal(raw) if "." in raw else int(raw), pos))
        elif kind == "string":
            quote = raw[0]
            tokens.append(Token("string", raw[1:-1].replace(quote * 2, quote), pos))
        elif kind == "quoted":
            tokens.append(Token("ident", raw[1:-1], pos))
        elif kind == "word":
            upper = raw.upper()
            tokens.append(Token("kw", upper, pos) if upper in KEYWORDS else Token("ident", raw, pos))
        elif kind == "op":
            tokens.append(Token("op", {"≥": ">=", "≤": "<="}.get(raw, raw), pos))
        elif kind == "punct":
            tokens.append(Token("punct", raw, pos))
        pos = m.end()
    tokens.append(Token("eof", None, len(text)))
    return tokens


# --------------------------------------------------------------------------
# parser


class _Parser:
    def __init__(self, text: str):
        self.tokens = tokenize(text)
        self.i = 0

    def peek(self, offset=0) -> Token:
        return self.tokens[min(self.i + offset, len(self.tokens) - 1)]

    def advance(self) -> Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def at(self, type_, value=None) -> bool:
        tok = self.peek()
        return tok.type == type_ and (value is None or tok.value == value)

    def accept(self, type_, value=None) -> Optional[Token]:
        if self.at(type_, value):
            return self.advance()
        return None

    def expect(self, type_, value=None) -> Token:
        tok = self.peek()
        if not self.at(type_, value):
            want = value if value is not None else type_
            got = tok.value if tok.type != "eof" else "end of input"
            raise SqlSyntaxError(f"expected {want}, found {got!r}", tok.pos)
        return self.advance()

    def query(self) -> QueryAst:
        left = self.select()
        node: QueryAst = left
        for op in ("UNION", "INTERSECT"):
            if self.accept("kw", op):
                right = self.select()
                node = SetOperation(op.lower(), left, right)
                break
        self.accept("punct", ";")
        if not self.at("eof"):
            tok = self.peek()
            raise SqlSyntaxError(f"unexpected {tok.value!r} after end of query", tok.pos)
        if isinstance(node, SetOperation):
            for side in (node.left, node.right):
                if side.order_by or side.aggregate or side.join:
                    raise SqlSyntaxError(
                        "UNION/INTERSECT operands must be plain single-table selects", 0
                    )
        return node

    def select(self) -> Select:
        self.expect("kw", "SELECT")
        distinct = bool(self.accept("kw", "DISTINCT"))
        columns = None
        aggregate = None
        if self.accept("punct", "*"):
            pass
        elif self.peek().type == "kw" and self.peek().value in ("COUNT", "MAX", "MIN", "AVG"):
            func = self.advance().value.lower()
            self.expect("punct", "(")
            if func == "count":
                self.expect("punct", "*")
                aggregate = Aggregate("count")
            else:
                aggregate = Aggregate(func, self.column())
            self.expect("punct", ")")
            if distinct:
                raise SqlSyntaxError("DISTINCT is not supported with aggregates", self.peek().pos)
        else:
            cols = [self.column()]
            while self.accept("punct", ","):
                cols.append(self.column())
            columns = tuple(cols)
        self.expect("kw", "FROM")
        source = self.table()
        join = on = where = order = None
        if self.at("kw", "INNER") or self.at("kw", "JOIN"):
            self.accept("kw", "INNER")
            self.expect("kw", "JOIN")
            join = self.table()
            self.expect("kw", "ON")
            on = self.condition()
        if self.accept("kw", "WHERE"):
            where = self.condition()
        if self.accept("kw", "ORDER"):
            self.expect("kw", "BY")
            col = self.column()
            desc = False
            if self.accept("kw", "DESC"):
                desc = True
            else:
                self.accept("kw", "ASC")
            order = OrderBy(col, desc)
            if aggregate is not None:
                raise SqlSyntaxError("ORDER BY is not supported with aggregates", self.peek().pos)
        return Select(source, columns, distinct, aggregate, join, on, where, order)

    def table(self) -> TableRef:
        name = self.expect("ident").value
        alias = None
        if self.accept("kw", "AS"):
            alias = self.expect("ident").value
        elif self.at("ident"):
            alias = self.advance().value
        return TableRef(name, alias)

    def column(self) -> ColumnRef:
        first = self.expect("ident").value
        if self.accept("punct", "."):
            return ColumnRef(self.expect("ident").value, first)
        return ColumnRef(first)

    def condition(self):
        items = [self.conjunction()]
        while self.accept("kw", "OR"):
            items.append(self.conjunction())
        return items[0] if len(items) == 1 else Or(tuple(items))

    def conjunction(self):
        items = [self.negation()]
        while self.accept("kw", "AND"):
            items.append(self.negation())
        return items[0] if len(items) == 1 else And(tuple(items))

    def negation(self):
        if self.accept("kw", "NOT"):
            return Not(self.negation())
        if self.accept("punct", "("):
            inner = self.condition()
            self.expect("punct", ")")
            return inner
        return self.comparison()

    def operand(self):
        tok = self.peek()
        if tok.type in ("number", "string"):
            self.advance()
            return tok.value
        if tok.type == "ident":
            return self.column()
        raise SqlSyntaxError(f"expected a column or literal, found {tok.value!r}", tok.pos)

    def comparison(self):
        start = self.peek().pos
        left = self.operand()
        op = self.expect("op").value
        right = self.operand()
        lcol, rcol = isinstance(left, ColumnRef), isinstance(right, ColumnRef)
        if lcol and rcol:
            return ColumnAtom(left, op, right)
        if lcol:
            return ValueAtom(left, op, right)
        if rcol:
            return ValueAtom(right, flip(op), left)
        raise SqlSyntaxError("a comparison needs at least one column", start)


def parse(sql_text: str, registry=None) -> QueryAst:
    """Parse ``sql_text``; with a registry, also resolve and type-check names."""
    ast = _Parser(sql_text).query()
    if registry is not None:
        ast = resolve(ast, registry)
    return ast


# --------------------------------------------------------------------------
# name resolution


class _Scope:
    def __init__(self, registry, tables):
        self.entries = []  # (qualifier names, schema, slot)
        for slot, ref in enumerate(tables):
            try:
                schema = registry.get(ref.name)
            except SchemaError as exc:
                raise ResolutionError(str(exc)) from None
            names = {schema.name.casefold()}
            if ref.alias:
                names = {ref.alias.casefold()}
            self.entries.append((names, schema, slot))
        if len(self.entries) == 2 and self.entries[0][0] & self.entries[1][0]:
            raise ResolutionError("self-join needs distinct aliases")

    def column(self, ref: ColumnRef) -> ColumnRef:
        if ref.slot is not None:
            return ref
        candidates = []
        for names, schema, slot in self.entries:
            if ref.table is not None and ref.table.casefold() not in names:
                continue
            if schema.has_column(ref.name):
                candidates.append((schema, slot))
        if ref.table is not None and not any(
            ref.table.casefold() in names for names, _, _ in self.entries
        ):
            raise ResolutionError(f"unknown table or alias {ref.table!r}")
        if not candidates:
            raise ResolutionError(f"unknown column {ref.name!r}")
        if len(candidates) > 1:
            raise ResolutionError(f"column {ref.name!r} is ambiguous; qualify it")
        schema, slot = candidates[0]
        return ColumnRef(schema.column(ref.name).name, schema.name, slot)

    def spec(self, ref: ColumnRef):
        return self.entries[ref.slot][1].column(ref.name)

    def condition(self, expr):
        if expr is None:
            return None
        if isinstance(expr, ValueAtom):
            col = self.column(expr.column)
            spec = self.spec(col)
            if kind_of(expr.value) != spec.kind:
                raise ResolutionError(
                    f"column {col.name!r} is {spec.kind}; literal {expr.value!r} does not match"
                )
            return ValueAtom(col, expr.op, expr.value)
        if isinstance(expr, ColumnAtom):
            left, right = self.column(expr.left), self.column(expr.right)
            if self.spec(left).kind != self.spec(right).kind:
                raise ResolutionError(f"cannot compare {left.name!r} with {right.name!r}")
            return ColumnAtom(left, expr.op, right)
        if isinstance(expr, And):
            return And(tuple(self.condition(e) for e in expr.items))
        if isinstance(expr, Or):
            return Or(tuple(self.condition(e) for e in expr.items))
        if isinstance(expr, Not):
            return Not(self.condition(expr.item))
        raise TypeError(f"not a condition: {expr!r}")


def _resolve_select(sel: Select, registry) -> Select:
    scope = _Scope(registry, sel.tables)
    source = TableRef(scope.entries[0][1].name, sel.source.alias)
    join = None
    if sel.join is not None:
        join = TableRef(scope.entries[1][1].name, sel.join.alias)
    columns = None
    if sel.columns is not None:
        columns = tuple(scope.column(c) for c in sel.columns)
    aggregate = sel.aggregate
    if aggregate is not None and aggregate.column is not None:
        col = scope.column(aggregate.column)
        if aggregate.func == "avg" and scope.spec(col).kind != NUMERIC:
            raise ResolutionError("AVG needs a numeric column")
        aggregate = Aggregate(aggregate.func, col)
    order = None
    if sel.order_by is not None:
        order = OrderBy(scope.column(sel.order_by.column), sel.order_by.descending)
    return replace(
        sel,
        source=source,
        join=join,
        columns=columns,
        aggregate=aggregate,
        on=scope.condition(sel.on),
        where=scope.condition(sel.where),
        order_by=order,
    )


def resolve(ast: QueryAst, registry) -> QueryAst:
    if isinstance(ast, SetOperation):
        return SetOperation(ast.op, _resolve_select(ast.left, registry), _resolve_select(ast.right, registry))
    return _resolve_select(ast, registry)


def output_columns(sel: Select, registry) -> list:
    """Resolved column refs produced by a select (expands ``*``)."""
    if sel.columns is not None:
        return list(sel.columns)
    out = []
    for slot, ref in enumerate(sel.tables):
        schema = registry.get(ref.name)
        out.extend(ColumnRef(c.name, schema.name, slot) for c in schema.columns)
    return out


# --------------------------------------------------------------------------
# plaintext pretty printer (round-trips through parse)

_PLAIN_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")


def _ident(name: str) -> str:
    if _PLAIN_IDENT.fullmatch(name) and name.upper() not in KEYWORDS:
        return name
    return f"`{name}`"


def _literal(value) -> str:
    if is_number(value):
        return format_number(value)
    return '"' + str(value).replace('"', '""') + '"'


def _col(ref: ColumnRef, qualify) -> str:
    """``qualify`` is False or a per-slot tuple of qualifiers (alias or table)."""
    if qualify:
        if ref.slot is not None and ref.slot < len(qualify):
            return f"{_ident(qualify[ref.slot])}.{_ident(ref.name)}"
        if ref.table:
            return f"{_ident(ref.table)}.{_ident(ref.name)}"
    return _ident(ref.name)


def format_condition(expr, qualify=False) -> str:
    if isinstance(expr, ValueAtom):
        return f"{_col(expr.column, qualify)} {expr.op} {_literal(expr.value)}"
    if isinstance(expr, ColumnAtom):
        return f"{_col(expr.left, qualify)} {expr.op} {_col(expr.right, qualify)}"
    if isinstance(expr, Not):
        return f"NOT ({format_condition(expr.item, qualify)})"
    joiner = " AND " if isinstance(expr, And) else " OR "
    return "(" + joiner.join(format_condition(e, qualify) for e in expr.items) + ")"


def _table(ref: TableRef) -> str:
    return _ident(ref.name) + (f" AS {_ident(ref.alias)}" if ref.alias else "")


def format_query(ast: QueryAst) -> str:
    if isinstance(ast, SetOperation):
        return f"{format_query(ast.left)} {ast.op.upper()} {format_query(ast.right)}"
    sel = ast
    q = tuple(t.alias or t.name for t in sel.tables) if sel.join is not None else False
    parts = ["SELECT"]
    if sel.distinct:
        parts.append("DISTINCT")
    if sel.aggregate is not None:
        agg = sel.aggregate
        arg = "*" if agg.column is None else _col(agg.column, q)
        parts.append(f"{agg.func.upper()}({arg})")
    elif sel.columns is None:
        parts.append("*")
    else:
        parts.append(", ".join(_col(c, q) for c in sel.columns))
    parts.append("FROM " + _table(sel.source))
    if sel.join is not None:
        parts.append(f"INNER JOIN {_table(sel.join)} ON {format_condition(sel.on, q)}")
    if sel.where is not None:
        parts.append("WHERE " + format_condition(sel.where, q))
    if sel.order_by is not None:
        parts.append(f"ORDER BY {_col(sel.order_by.column, q)} {'DESC' if sel.order_by.descending else 'ASC'}")
    return " ".join(parts)


# --------------------------------------------------------------------------
# cloud SQL emitter


def _cloud_ident(name: str) -> str:
    return f"`{name}`"


def _emit_pred(pred, aliases) -> str:
    def ref(slot, column):
        prefix = f"{aliases[slot]}." if aliases else ""
        return prefix + column

    if isinstance(pred, Const):
        return "TRUE" if pred.value else "FALSE"
    if isinstance(pred, MaskAtom):
        return f"{ref(pred.slot, f'reference{pred.word}')} & {pred.mask} > 0"
    if isinstance(pred, MaskPairAtom):
        return f"({_emit_pred(pred.left, aliases)} AND {_emit_pred(pred.right, aliases)})"
    if isinstance(pred, PlainAtom):
        return f"{ref(pred.slot, _cloud_ident(pred.column))} {pred.op} {_literal(pred.value)}"
    if isinstance(pred, PlainColumnAtom):
        return (
            f"{ref(pred.left_slot, _cloud_ident(pred.left_column))} {pred.op} "
            f"{ref(pred.right_slot, _cloud_ident(pred.right_column))}"
        )
    joiner = " AND " if isinstance(pred, PAnd) else " OR "
    inner = joiner.join(_emit_pred(it, aliases) for it in pred.items)
    return f"({inner})"


def _emit_where(pred, aliases) -> str:
    if pred == Const(True):
        return ""
    text = _emit_pred(pred, aliases)
    if isinstance(pred, (PAnd, POr)):
        text = text[1:-1]
    return f" WHERE {text}"


def _emit_projection(rq: RewrittenQuery, aliases) -> str:
    if rq.projection is None:
        return ", ".join(f"{a}.*" for a in aliases) if aliases else "*"
    cols = []
    for slot, slot_cols in enumerate(rq.projection):
        for c in slot_cols:
            cols.append((f"{aliases[slot]}." if aliases else "") + _cloud_ident(c))
    return ", ".join(cols) if cols else "*"


def _emit_single(rq: RewrittenQuery) -> str:
    table = _cloud_ident(rq.tables[0])
    if rq.kind == "count":
        return f"SELECT COUNT(*) FROM {table}{_emit_where(rq.predicate, None)}"
    sql = f"SELECT {_emit_projection(rq, None)} FROM {table}{_emit_where(rq.predicate, None)}"
    if rq.kind == "ordered_scan" and rq.groups:
        cases = " ".join(
            f"WHEN {_emit_pred(g, None)} THEN {i}" for i, g in enumerate(rq.groups)
        )
        sql += f" ORDER BY CASE {cases} ELSE {len(rq.groups)} END {'DESC' if rq.descending else 'ASC'}"
    return sql


def emit_sql(rq: RewrittenQuery) -> str:
    """Render a rewritten query as the SQL text a stock server would run."""
    if rq.kind in ("scan", "count", "ordered_scan"):
        return _emit_single(rq)
    if rq.kind == "union_scan":
        return " UNION ALL ".join(_emit_single(p) for p in rq.parts)
    aliases = ("t0", "t1")
    if rq.kind == "intersect_join" and rq.fallback:
        return "; ".join(_emit_single(p) for p in rq.parts)
    left, right = (_cloud_ident(t) for t in rq.tables)
    on = _emit_pred(rq.predicate, aliases)
    if isinstance(rq.predicate, (PAnd, POr)):
        on = on[1:-1]
    return (
        f"SELECT {_emit_projection(rq, aliases)} FROM {left} AS t0 "
        f"INNER JOIN {right} AS t1 ON {on}"
    )


# --------------------------------------------------------------------------
# plaintext semantics


def evaluate_condition(expr, lookup) -> bool:
    """Evaluate a resolved condition; ``lookup(ColumnRef)`` yields a plaintext value."""
    if expr is None:
        return True
    if isinstance(expr, ValueAtom):
        return compare(expr.op, lookup(expr.column), expr.value)
    if isinstance(expr, ColumnAtom):
        return compare(expr.op, lookup(expr.left), lookup(expr.right))
    if isinstance(expr, And):
        return all(evaluate_condition(e, lookup) for e in expr.items)
    if isinstance(expr, Or):
        return any(evaluate_condition(e, lookup) for e in expr.items)
    if isinstance(expr, Not):
        return not evaluate_condition(expr.item, lookup)
    raise TypeError(f"not a condition: {expr!r}")


_OPS = {
    "=": operator.eq,
    "<>": operator.ne,
    ">": operator.gt,
    ">=": operator.ge,
    "<": operator.lt,
    "<=": operator.le,
}


def compile_condition(expr, accessor, atom_hook=None):
    """Compile a resolved condition into ``fn(rows) -> bool``.

    ``accessor(ColumnRef)`` returns ``get(rows) -> value``.  ``atom_hook`` may
    return a ready-made test for an atom (or None to compile it normally).
    Semantics match :func:`evaluate_condition`; operands are assumed well-typed.
    """
    if expr is None:
        return lambda rows: True
    if atom_hook is not None and isinstance(expr, (ValueAtom, ColumnAtom)):
        fn = atom_hook(expr)
        if fn is not None:
            return fn
    if isinstance(expr, ValueAtom):
        get, op, lit = accessor(expr.column), _OPS[expr.op], sort_key(expr.value)
        return lambda rows: op(sort_key(get(rows)), lit)
    if isinstance(expr, ColumnAtom):
        lget, rget, op = accessor(expr.left), accessor(expr.right), _OPS[expr.op]
        return lambda rows: op(sort_key(lget(rows)), sort_key(rget(rows)))
    if isinstance(expr, Not):
        inner = compile_condition(expr.item, accessor, atom_hook)
        return lambda rows: not inner(rows)
    if isinstance(expr, (And, Or)):
        parts = [compile_condition(e, accessor, atom_hook) for e in expr.items]
        if isinstance(expr, And):
            return lambda rows: all(p(rows) for p in parts)
        return lambda rows: any(p(rows) for p in parts)
    raise TypeError(f"not a condition: {expr!r}")
