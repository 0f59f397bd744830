"""Benchmark harness: synthetic six-column tables, randomized query classes,
candidate counts, and an oracle check on every query.
"""
from __future__ import annotations

import csv
import io
import random
import string
import time
from dataclasses import dataclass, field

from .crypto import derive_keys
from .engine import PlainTable, QueryManager, comparison_mode, oracle_execute
from .errors import BitshieldError
from .sql import format_query
from .store import CloudStore

CLASSES = (
    "1-clause", "2-AND", "3-AND", "2-OR", "3-OR",
    "join", "count", "max", "min", "distinct", "union", "intersect",
)
CLAUSE_CLASSES = ("1-clause", "2-AND", "3-AND", "2-OR", "3-OR")

# Average retrieved candidates reported for the original system.
REFERENCE_CANDIDATES = {
    10000: {"1-clause": 2035, "2-AND": 303, "3-AND": 44, "2-OR": 3408, "3-OR": 6227},
    20000: {"1-clause": 4758, "2-AND": 583, "3-AND": 96, "2-OR": 7281, "3-OR": 12106},
}

VISAS = ("F1", "F2", "J1", "J2", "None")
DEPARTMENTS = ("CS", "CE", "IS", "Bus", "Math")
OTHER_DEPARTMENTS = ("Physics", "Chemistry", "Biology")
SALARY_BANDS = ((1000, 6799), (6800, 12599), (12600, 18399), (18400, 24199), (24200, 29999))
LETTER_BANDS = (("A", "E"), ("F", "J"), ("K", "O"), ("P", "T"), ("U", "Z"))
SENSITIVE = ("Name", "Visa", "Dept", "Salary")
COMPANION_ROWS = 100


def bench_schema(table: str) -> dict:
    """Two plain, two sensitive non-range and two sensitive range columns."""
    return {
        "table": table,
        "columns": [
            {"name": "Id", "kind": "numeric"},
            {"name": "Age", "kind": "numeric"},
            {"name": "Visa", "sensitive": True,
             "partitions": [{"type": "singleton", "value": v} for v in VISAS]},
            {"name": "Dept", "sensitive": True,
             "partitions": [{"type": "singleton", "value": d} for d in DEPARTMENTS]
             + [{"type": "bucket", "values": list(OTHER_DEPARTMENTS), "label": "other"}]},
            {"name": "Salary", "kind": "numeric", "sensitive": True,
             "partitions": [{"type": "range", "lo": lo, "hi": hi} for lo, hi in SALARY_BANDS]},
            {"name": "Name", "sensitive": True,
             "partitions": [{"type": "letters", "from": a, "to": b} for a, b in LETTER_BANDS]},
        ],
    }


def synthetic_rows(n: int, rng: random.Random, first_id: int = 1) -> list:
    """Rows uniform over each column's covered domain."""
    rows = []
    for i in range(n):
        dept_pd = rng.randrange(len(DEPARTMENTS) + 1)
        dept = DEPARTMENTS[dept_pd] if dept_pd < len(DEPARTMENTS) else rng.choice(OTHER_DEPARTMENTS)
        name = rng.choice(string.ascii_uppercase) + "".join(
            rng.choice(string.ascii_lowercase) for _ in range(rng.randint(3, 7))
        )
        rows.append((
            first_id + i,
            rng.randint(18, 65),
            rng.choice(VISAS),
            dept,
            rng.randint(SALARY_BANDS[0][0], SALARY_BANDS[-1][1]),
            name,
        ))
    return rows


def _literal(v) -> str:
    return str(v) if isinstance(v, int) else '"' + v.replace('"', '""') + '"'


_COL = {name: i for i, name in enumerate(("Id", "Age", "Visa", "Dept", "Salary", "Name"))}


class QueryGenerator:
    """Random queries of each class; literals are drawn from existing rows."""

    def __init__(self, rng: random.Random, table: str, rows: list, companion: str, companion_rows: list):
        self.rng = rng
        self.table = table
        self.rows = rows
        self.companion = companion
        self.companion_rows = companion_rows

    def _atoms(self, k: int, rows=None, prefix="") -> list:
        rows = rows if rows is not None else self.rows
        cols = self.rng.sample(SENSITIVE, k)
        return [
            f"{prefix}{c} = {_literal(self.rng.choice(rows)[_COL[c]])}" for c in cols
        ]

    def query(self, cls: str) -> str:
        rng, t, c = self.rng, self.table, self.companion
        if cls in CLAUSE_CLASSES:
            k = 1 if cls == "1-clause" else int(cls[0])
            joiner = " OR " if cls.endswith("OR") else " AND "
            return f"SELECT Id FROM {t} WHERE " + joiner.join(self._atoms(k))
        if cls == "join":
            col = rng.choice(SENSITIVE)
            key = rng.choice(self.companion_rows)[0]
            return f"SELECT a.Id, b.Id FROM {t} a INNER JOIN {c} b ON a.{col} = b.{col} WHERE b.Id = {key}"
        if cls == "count":
            return f"SELECT COUNT(*) FROM {t} WHERE " + " AND ".join(self._atoms(rng.randint(1, 2)))
        if cls in ("max", "min"):
            target = rng.choice(("Salary", "Name"))
            other = rng.choice([s for s in SENSITIVE if s != target])
            value = _literal(rng.choice(self.rows)[_COL[other]])
            return f"SELECT {cls.upper()}({target}) FROM {t} WHERE {other} = {value}"
        if cls == "distinct":
            target = rng.choice(("Visa", "Dept"))
            return f"SELECT DISTINCT {target} FROM {t} WHERE " + self._atoms(1)[0]
        if cls == "union":
            a, b = self._atoms(1), self._atoms(1)
            return f"SELECT Id, Visa FROM {t} WHERE {a[0]} UNION SELECT Id, Visa FROM {t} WHERE {b[0]}"
        if cls == "intersect":
            a = self._atoms(1)
            b = self._atoms(1, self.companion_rows)
            return (
                f"SELECT Visa, Dept FROM {t} WHERE {a[0]} "
                f"INTERSECT SELECT Visa, Dept FROM {c} WHERE {b[0]}"
            )
        raise ValueError(f"unknown query class {cls!r}")


class OracleMismatch(BitshieldError):
    pass


@dataclass
class ClassReport:
    size: int
    query_class: str
    queries: int = 0
    candidates: int = 0
    fraction_sum: float = 0.0
    decrypted_cells: int = 0
    wall_seconds: float = 0.0
    decrypt_seconds: float = 0.0

    @property
    def avg_candidates(self) -> float:
        return self.candidates / self.queries if self.queries else 0.0

    @property
    def avg_fraction(self) -> float:
        return self.fraction_sum / self.queries if self.queries else 0.0

    @property
    def avg_decrypted(self) -> float:
        return self.decrypted_cells / self.queries if self.queries else 0.0

    @property
    def reference(self):
        return REFERENCE_CANDIDATES.get(self.size, {}).get(self.query_class)


@dataclass
class BenchReport:
    sizes: tuple
    seed: int
    entries: list = field(default_factory=list)

    def entry(self, size: int, query_class: str) -> ClassReport:
        for e in self.entries:
            if e.size == size and e.query_class == query_class:
                return e
        raise KeyError((size, query_class))

    def to_csv(self, with_timings: bool = False) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        head = ["size", "class", "queries", "avg_candidates", "avg_fraction",
                "avg_decrypted_cells", "reference_candidates"]
        if with_timings:
            head += ["wall_seconds", "decrypt_seconds"]
        w.writerow(head)
        for e in self.entries:
            row = [e.size, e.query_class, e.queries, f"{e.avg_candidates:.2f}",
                   f"{e.avg_fraction:.4f}", f"{e.avg_decrypted:.2f}",
                   "" if e.reference is None else e.reference]
            if with_timings:
                row += [f"{e.wall_seconds:.3f}", f"{e.decrypt_seconds:.3f}"]
            w.writerow(row)
        return buf.getvalue()

    def render(self) -> str:
        lines = [f"{'size':>7} {'class':<10} {'queries':>7} {'avg cand':>10} {'fraction':>9} "
                 f"{'ref':>7} {'dec cells':>10} {'wall s':>8} {'dec s':>7}"]
        for e in self.entries:
            ref = "" if e.reference is None else str(e.reference)
            lines.append(
                f"{e.size:>7} {e.query_class:<10} {e.queries:>7} {e.avg_candidates:>10.1f} "
                f"{100 * e.avg_fraction:>8.1f}% {ref:>7} {e.avg_decrypted:>10.1f} "
                f"{e.wall_seconds:>8.2f} {e.decrypt_seconds:>7.2f}"
            )
        return "\n".join(lines)


def _diff(sql: str, got, want) -> str:
    return (
        f"oracle mismatch for: {sql}\n"
        f"  encrypted path: {sorted(map(repr, got.rows)) if not got.aggregate else got.scalar!r}\n"
        f"  oracle:         {sorted(map(repr, want.rows)) if not want.aggregate else want.scalar!r}"
    )


def run_bench(sizes=(10000, 20000), queries_per_class: int = 200, seed: int = 7,
              classes=CLASSES, secret: bytes = None, progress=None) -> BenchReport:
    """Build each synthetic table, run every class, check the oracle each time."""
    report = BenchReport(tuple(sizes), seed)
    for size in sizes:
        if size <= 0:
            continue
        rng = random.Random(f"{seed}:{size}")
        keys = derive_keys(secret if secret is not None else rng.randbytes(32))
        qm = QueryManager(CloudStore(), keys)
        main, comp = "bench", "companion"
        schema = qm.define(bench_schema(main))
        cschema = qm.define(bench_schema(comp))
        rows = synthetic_rows(size, rng)
        crows = synthetic_rows(min(size, COMPANION_ROWS), rng, first_id=size + 1)
        qm.load(main, rows)
        qm.load(comp, crows)
        tables = {main: PlainTable(schema, rows), comp: PlainTable(cschema, crows)}
        gen = QueryGenerator(rng, main, rows, comp, crows)
        for cls in classes:
            entry = ClassReport(size, cls)
            for _ in range(queries_per_class):
                sql = gen.query(cls)
                ast = qm.parse(sql)
                t0 = time.perf_counter()
                got, stats = qm.execute(ast)
                entry.wall_seconds += time.perf_counter() - t0
                want = oracle_execute(ast, tables, qm.registry)
                if not got.matches(want, comparison_mode(ast)):
                    raise OracleMismatch(_diff(format_query(ast), got, want))
                entry.queries += 1
                entry.candidates += stats.candidates_retrieved
                entry.fraction_sum += stats.fraction
                entry.decrypted_cells += stats.decrypted_cells
                entry.decrypt_seconds += stats.decrypt_seconds
            report.entries.append(entry)
            if progress:
                progress(entry)
    return report

