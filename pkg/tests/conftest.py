import csv
import json
from pathlib import Path

import pytest

from bitshield import CloudStore, QueryManager, derive_keys, define_table
from bitshield.codec import coerce_row
from bitshield.crypto import Ciphertext

DEMO = Path(__file__).resolve().parent.parent / "demo"

FIXED_SECRET = bytes(range(32))

# (ID, Name, Rank, Visa type, Department)
STUDENTS = [
    (110, "Alice", "freshman", "F1", "Computer science"),
    (111, "Sara", "senior", "J1", "Computer engineering"),
    (112, "John", "junior", "None", "Information system"),
    (113, "Ryan", "Sophomore", "J2", "Math"),
]

TABLE2_BITS = [
    "10001000010000100000",
    "00010100000100010000",
    "01000010000001001000",
    "00100001000010000010",
]


@pytest.fixture
def keys():
    return derive_keys(FIXED_SECRET)


@pytest.fixture
def students_schema():
    return define_table((DEMO / "students.json").read_text(encoding="utf-8"))


@pytest.fixture
def students_rows(students_schema):
    with open(DEMO / "students.csv", newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))[1:]
    return [coerce_row(students_schema, r) for r in rows]


@pytest.fixture
def students_qm(keys, students_schema, students_rows):
    qm = QueryManager(CloudStore(), keys)
    qm.register(students_schema)
    qm.load("Students", students_rows)
    return qm


def visible_text(store) -> str:
    """Serialized store state with every ciphertext cell swapped for a marker.

    Random base64 can contain short words by chance, so plaintext scans look
    at everything except the ciphertext bodies; those are checked to parse as
    IV plus at least one block instead.
    """
    out = []
    for line in store.serialize().splitlines():
        rec = json.loads(line)
        if "columns" in rec:
            encrypted = rec["encrypted"]
        else:
            cells = []
            for enc, cell in zip(encrypted, rec["cells"]):
                if enc:
                    ct = Ciphertext.from_text(cell)
                    assert len(ct.iv) == 16 and len(ct.body) >= 16
                    cell = "<ciphertext>"
                cells.append(cell)
            rec["cells"] = cells
        out.append(json.dumps(rec))
    return "\n".join(out)
