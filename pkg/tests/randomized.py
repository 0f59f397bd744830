"""Seeded random schemas, tables and queries for oracle comparisons."""
import random
import string
from decimal import Decimal

from bitshield import CloudStore, PlainTable, QueryManager, derive_keys, define_table

COLORS = ["red", "green", "blue", "cyan", "magenta", "yellow", "black", "white"]
TAGS = ["alpha", "Beta", "gamma", "delta", "Alpha", "beta"]

OPERATORS = ("select", "join", "aggregate", "sort", "distinct", "project", "union", "intersect")


def _cuts(rng, lo, hi, parts):
    points = sorted(rng.sample(range(lo + 1, hi + 1), parts - 1))
    bounds = [lo] + points + [hi + 1]
    return [(bounds[i], bounds[i + 1] - 1) for i in range(parts)]


def random_schema(rng: random.Random, name: str) -> dict:
    """Plain Id/Tag plus sensitive categorical, letter, integer and decimal columns."""
    colors = COLORS[:]
    rng.shuffle(colors)
    cat_parts, i = [], 0
    while i < len(colors):
        k = rng.choice((1, 1, 2, 3))
        group = colors[i:i + k]
        i += k
        if len(group) == 1:
            cat_parts.append({"type": "singleton", "value": group[0]})
        else:
            cat_parts.append({"type": "bucket", "values": group})
    letters = _cuts(rng, 0, 25, rng.randint(2, 6))
    amount = _cuts(rng, 0, 999, rng.randint(2, 6))
    qty = [{"type": "singleton", "value": v} for v in range(3)] + [
        {"type": "range", "lo": lo, "hi": hi} for lo, hi in _cuts(rng, 3, 60, rng.randint(1, 3))
    ]
    price = [
        {"type": "range", "lo": f"{lo / 100:.2f}", "hi": f"{hi / 100:.2f}"}
        for lo, hi in _cuts(rng, 0, 9999, rng.randint(2, 4))
    ]
    return {
        "table": name,
        "columns": [
            {"name": "Id", "kind": "numeric"},
            {"name": "Tag"},
            {"name": "Color", "sensitive": True, "partitions": cat_parts},
            {"name": "Nm", "sensitive": True, "partitions": [
                {"type": "letters", "from": string.ascii_uppercase[a], "to": string.ascii_uppercase[b]}
                for a, b in letters
            ]},
            {"name": "Amount", "kind": "numeric", "sensitive": True,
             "partitions": [{"type": "range", "lo": lo, "hi": hi} for lo, hi in amount]},
            {"name": "Qty", "kind": "numeric", "sensitive": True, "partitions": qty},
            {"name": "Price", "kind": "numeric", "sensitive": True, "partitions": price},
        ],
    }


def _name(rng):
    first = rng.choice(string.ascii_letters)
    return first + "".join(rng.choice(string.ascii_lowercase) for _ in range(rng.randint(0, 4)))


def _color(rng):
    c = rng.choice(COLORS)
    return c.upper() if rng.random() < 0.15 else c


def random_value(rng, column):
    if column == "Id":
        return rng.randint(0, 50)
    if column == "Tag":
        return rng.choice(TAGS)
    if column == "Color":
        return _color(rng)
    if column == "Nm":
        return _name(rng)
    if column == "Amount":
        return rng.randint(0, 999)
    if column == "Qty":
        return rng.randint(0, 60)
    if column == "Price":
        return Decimal(rng.randint(0, 9999)) / 100
    raise KeyError(column)


COLUMNS = ("Id", "Tag", "Color", "Nm", "Amount", "Qty", "Price")
TEXT_COLUMNS = ("Tag", "Color", "Nm")
NUMERIC_COLUMNS = ("Id", "Amount", "Qty", "Price")
ORDERED = ("Id", "Tag", "Nm", "Amount", "Qty", "Price")  # Color only supports "="


def random_rows(rng, n):
    return [tuple(random_value(rng, c) for c in COLUMNS) for _ in range(n)]


def literal(v) -> str:
    if isinstance(v, str):
        return '"' + v.replace('"', '""') + '"'
    return str(v)


class Scenario:
    """Two random tables under one key, loaded both encrypted and in plaintext.

    ``max_rows`` caps ``ta``; ``tb`` is capped by ``max_rows_b`` (same cap if
    omitted), which bounds the cross product joins have to check.
    """

    def __init__(self, seed: int, max_rows: int = 300, max_rows_b: int = None):
        rng = random.Random(seed)
        self.rng = rng
        self.qm = QueryManager(CloudStore(), derive_keys(rng.randbytes(32)))
        self.tables = {}
        caps = {"ta": max_rows, "tb": max_rows if max_rows_b is None else max_rows_b}
        for name in ("ta", "tb"):
            schema = self.qm.define(random_schema(rng, name))
            rows = random_rows(rng, rng.randint(0, caps[name]))
            self.qm.load(name, rows)
            self.tables[name] = PlainTable(schema, rows)

    # -- conditions -------------------------------------------------------

    def value_atom(self, prefix=""):
        rng = self.rng
        col = rng.choice(COLUMNS)
        op = "=" if col == "Color" else rng.choice(("=", ">", ">=", "<", "<="))
        return f"{prefix}{col} {op} {literal(random_value(rng, col))}"

    def column_atom(self, lp="", rp=""):
        rng = self.rng
        kinds = rng.choice((TEXT_COLUMNS, NUMERIC_COLUMNS))
        a, b = rng.choice(kinds), rng.choice(kinds)
        ordered = a in ORDERED and b in ORDERED
        sensitive_pair = a not in ("Id", "Tag") and b not in ("Id", "Tag")
        # mixed letter/categorical pairs only support "="
        if not ordered or (sensitive_pair and {a, b} & {"Color"}):
            op = "="
        else:
            op = rng.choice(("=", ">", ">=", "<", "<="))
        return f"{lp}{a} {op} {rp}{b}"

    def condition(self, depth=2, prefixes=("",)):
        rng = self.rng
        r = rng.random()
        if depth <= 0 or r < 0.45:
            if len(prefixes) == 2 and rng.random() < 0.3:
                return self.column_atom(*prefixes)
            if len(prefixes) == 1 and rng.random() < 0.1:
                return self.column_atom(prefixes[0], prefixes[0])
            return self.value_atom(rng.choice(prefixes))
        if r < 0.55:
            return f"NOT ({self.condition(depth - 1, prefixes)})"
        joiner = " AND " if rng.random() < 0.5 else " OR "
        parts = [self.condition(depth - 1, prefixes) for _ in range(rng.randint(2, 3))]
        return "(" + joiner.join(parts) + ")"

    def where(self, prefixes=("",)):
        return "" if self.rng.random() < 0.1 else " WHERE " + self.condition(2, prefixes)

    # -- queries ----------------------------------------------------------

    def columns(self, k=None):
        k = k or self.rng.randint(1, 3)
        return self.rng.sample(COLUMNS, k)

    def query(self, operator: str) -> str:
        rng = self.rng
        t = rng.choice(("ta", "tb"))
        if operator == "select":
            return f"SELECT * FROM {t}{self.where()}"
        if operator == "project":
            return f"SELECT {', '.join(self.columns())} FROM {t}{self.where()}"
        if operator == "distinct":
            return f"SELECT DISTINCT {', '.join(self.columns())} FROM {t}{self.where()}"
        if operator == "sort":
            col = rng.choice(ORDERED + ("Color",))
            direction = rng.choice(("", " ASC", " DESC"))
            return f"SELECT {', '.join(self.columns())} FROM {t}{self.where()} ORDER BY {col}{direction}"
        if operator == "aggregate":
            func = rng.choice(("COUNT", "COUNT", "MAX", "MIN", "AVG"))
            if func == "COUNT":
                target = "*"
            elif func == "AVG":
                target = rng.choice(NUMERIC_COLUMNS)
            else:
                target = rng.choice(COLUMNS)
            return f"SELECT {func}({target}) FROM {t}{self.where()}"
        if operator == "join":
            on = self.column_atom("a.", "b.")
            if rng.random() < 0.3:
                on = f"{on} AND {self.condition(1, ('a.', 'b.'))}"
            cols = ", ".join(f"{rng.choice('ab')}.{c}" for c in self.columns())
            where = "" if rng.random() < 0.4 else " WHERE " + self.condition(1, ("a.", "b."))
            return f"SELECT {cols} FROM ta a INNER JOIN tb b ON {on}{where}"
        if operator in ("union", "intersect"):
            left = self.columns()
            right = [
                rng.choice(TEXT_COLUMNS if c in TEXT_COLUMNS else NUMERIC_COLUMNS) if rng.random() < 0.3 else c
                for c in left
            ]
            ta, tb = rng.choice(("ta", "tb")), rng.choice(("ta", "tb"))
            op = operator.upper()
            return (
                f"SELECT {', '.join(left)} FROM {ta}{self.where()} {op} "
                f"SELECT {', '.join(right)} FROM {tb}{self.where()}"
            )
        raise ValueError(operator)


def mode_for(operator: str) -> str:
    return {
        "select": "multiset", "project": "multiset", "join": "set", "aggregate": "scalar",
        "sort": "list", "distinct": "set", "union": "set", "intersect": "set",
    }[operator]


def schema_of(scenario, name):
    return define_table(scenario.tables[name].schema.to_dict())
