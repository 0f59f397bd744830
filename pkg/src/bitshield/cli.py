"""Command line entry point: define, load, query, bench, keygen."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import crypto
from .bench import CLASSES, OracleMismatch, run_bench
from .codec import coerce_row
from .engine import QueryManager
from .errors import BitshieldError, SchemaError, UncoveredValueError
from .rewriter import Keyring
from .schema import SchemaRegistry, define_table, describe_layout
from .store import CloudStore
from .values import format_number, is_number

log = logging.getLogger("bitshield")

CATALOG_FILE = "catalog.sealed"
_CATALOG_CONTEXT = b"bitshield/catalog"


def read_secret(path) -> bytes:
    """A secret file holds 32 raw bytes or 64 hex characters."""
    raw = Path(path).read_bytes()
    text = raw.strip()
    if len(text) == 2 * crypto.SECRET_BYTES:
        try:
            return bytes.fromhex(text.decode("ascii"))
        except (UnicodeDecodeError, ValueError):
            pass
    if len(raw) == crypto.SECRET_BYTES:
        return raw
    raise BitshieldError(f"{path}: expected 32 raw bytes or 64 hex characters")


def load_catalog(directory, keys) -> SchemaRegistry:
    path = Path(directory) / CATALOG_FILE
    registry = SchemaRegistry()
    if path.exists():
        blob = crypto.open_blob(keys, path.read_bytes(), _CATALOG_CONTEXT)
        for entry in json.loads(blob.decode("utf-8")):
            registry.define(entry)
    return registry


def save_catalog(directory, keys, registry: SchemaRegistry):
    path = Path(directory)
    path.mkdir(parents=True, exist_ok=True)
    data = json.dumps([s.to_dict() for s in registry]).encode("utf-8")
    tmp = path / (CATALOG_FILE + ".tmp")
    tmp.write_bytes(crypto.seal_blob(keys, data, _CATALOG_CONTEXT))
    tmp.replace(path / CATALOG_FILE)


def read_csv_rows(path, schema) -> list:
    """Rows reordered to schema column order; errors name the CSV line."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty CSV file") from None
        try:
            order = [header.index(next(h for h in header if h.strip().casefold() == c.name.casefold()))
                     for c in schema.columns]
        except StopIteration:
            missing = [c.name for c in schema.columns
                       if c.name.casefold() not in {h.strip().casefold() for h in header}]
            raise SchemaError(f"{path}: header is missing columns {missing}") from None
        rows = []
        for raw in reader:
            line = reader.line_num
            if not raw:
                continue
            if len(raw) != len(header):
                raise SchemaError(f"{path} line {line}: expected {len(header)} fields, got {len(raw)}")
            try:
                row = coerce_row(schema, [raw[i] for i in order])
                for col, value in zip(schema.columns, row):
                    if col.sensitive:
                        col.locate(value)
            except UncoveredValueError as exc:
                raise SchemaError(f"{path} line {line}: {exc}") from None
            except SchemaError as exc:
                raise SchemaError(f"{path} line {line}: {exc}") from None
            rows.append(row)
    return rows


def _cell(v) -> str:
    if v is None:
        return "NULL"
    return format_number(v) if is_number(v) else str(v)


def render_table(result) -> str:
    if result.aggregate:
        rows = [(result.scalar,)]
    else:
        rows = result.rows
    headers = [str(h) for h in result.columns]
    body = [[_cell(v) for v in r] for r in rows]
    widths = [max([len(h)] + [len(r[i]) for r in body]) for i, h in enumerate(headers)]
    lines = [" | ".join(h.ljust(w) for h, w in zip(headers, widths)),
             "-+-".join("-" * w for w in widths)]
    lines += [" | ".join(c.ljust(w) for c, w in zip(r, widths)) for r in body]
    return "\n".join(lines)


def cmd_keygen(args) -> int:
    secret = crypto.generate_secret()
    Path(args.out).write_text(secret.hex() + "\n", encoding="ascii")
    print(f"wrote 256-bit secret to {args.out}")
    return 0


def cmd_define(args) -> int:
    schema = define_table(Path(args.schema).read_text(encoding="utf-8"))
    layout = schema.layout
    print(f"table {schema.name}: {layout.total_bits} partitions, {layout.word_count} reference word(s)")
    for column, pd, pos, mask in describe_layout(schema):
        word, offset = layout.word_and_offset(pos)
        print(f"  {column:<16} {pd:<24} bit {pos:>4}  reference{word} & {1 << offset}")
    return 0


def cmd_load(args) -> int:
    keys = crypto.derive_keys(read_secret(args.secret_file))
    store = CloudStore.open(args.store)
    registry = load_catalog(args.store, keys)
    schema = define_table(Path(args.schema).read_text(encoding="utf-8"))
    if schema.name in registry:
        if registry.get(schema.name) != schema:
            raise SchemaError(f"table {schema.name!r} already exists with a different definition")
        schema = registry.get(schema.name)
    qm = QueryManager(store, Keyring(keys), registry)
    qm.register(schema)
    rows = read_csv_rows(args.csv, schema)
    n = qm.load(schema.name, rows)
    store.save(args.store)
    save_catalog(args.store, keys, registry)
    print(f"loaded {n} row(s) into {schema.name} ({store.size(qm.keyring.table_token(schema))} total)")
    return 0


def cmd_query(args) -> int:
    keys = crypto.derive_keys(read_secret(args.secret_file))
    store = CloudStore.open(args.store)
    registry = load_catalog(args.store, keys)
    qm = QueryManager(store, Keyring(keys), registry)
    if args.explain:
        print(qm.explain(args.sql))
        return 0
    result, stats = qm.execute(args.sql)
    print(render_table(result))
    print(stats.summary())
    if args.verbose:
        for stmt in stats.statements:
            print(f"cloud: {stmt}")
        print(f"decrypted cells: {stats.decrypted_cells}")
    return 0


def cmd_bench(args) -> int:
    sizes = tuple(int(s) for s in args.sizes.split(",") if s.strip())
    classes = tuple(args.classes.split(",")) if args.classes else CLASSES
    unknown = [c for c in classes if c not in CLASSES]
    if unknown:
        raise BitshieldError(f"unknown query classes {unknown}; choose from {', '.join(CLASSES)}")

    def progress(entry):
        log.info("size %d %s: %.1f avg candidates", entry.size, entry.query_class, entry.avg_candidates)

    try:
        report = run_bench(sizes, args.queries_per_class, args.seed, classes, progress=progress)
    except OracleMismatch as exc:
        print(str(exc), file=sys.stderr)
        return 3
    print(report.render())
    if args.out:
        Path(args.out).write_text(report.to_csv(args.with_timings), encoding="utf-8")
        print(f"report written to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bitshield", description="Query encrypted tables through reference bits.")
    p.add_argument("-v", "--verbose", action="store_true",
                   help="log bench progress; show cloud statements for query")
    sub = p.add_subparsers(dest="command", required=True)

    k = sub.add_parser("keygen", help="write a fresh owner secret")
    k.add_argument("--out", required=True)
    k.set_defaults(func=cmd_keygen)

    d = sub.add_parser("define", help="validate a schema and print its bit layout")
    d.add_argument("schema")
    d.set_defaults(func=cmd_define)

    ld = sub.add_parser("load", help="encrypt a CSV file into a store directory")
    ld.add_argument("--schema", required=True)
    ld.add_argument("--csv", required=True)
    ld.add_argument("--secret-file", required=True)
    ld.add_argument("--store", required=True)
    ld.set_defaults(func=cmd_load)

    q = sub.add_parser("query", help="run a query against a store directory")
    q.add_argument("--store", required=True)
    q.add_argument("--secret-file", required=True)
    q.add_argument("--explain", action="store_true", help="print the cloud SQL only")
    q.add_argument("sql")
    q.set_defaults(func=cmd_query)

    b = sub.add_parser("bench", help="run the synthetic benchmark")
    b.add_argument("--sizes", default="10000,20000")
    b.add_argument("--queries-per-class", type=int, default=200)
    b.add_argument("--seed", type=int, default=7)
    b.add_argument("--classes", default=None, help="comma-separated subset of query classes")
    b.add_argument("--out", default=None, help="CSV report path")
    b.add_argument("--with-timings", action="store_true", help="include timings in the CSV")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (BitshieldError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
