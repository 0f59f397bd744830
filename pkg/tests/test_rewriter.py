import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bitshield import SchemaRegistry, codec, define_table
from bitshield.errors import KeyMismatchError, RewriteError
from bitshield.predicates import (
    FALSE,
    TRUE,
    MaskAtom,
    MaskPairAtom,
    Or,
    PlainAtom,
    evaluate,
    make_or,
)
from bitshield.rewriter import QueryRewriter, is_exact, rewrite_compound
from bitshield.sql import And as QAnd
from bitshield.sql import ColumnRef, Not, ValueAtom, emit_sql, evaluate_condition, parse
from bitshield.sql import Or as QOr

from conftest import DEMO, STUDENTS


def employee(name="Employee"):
    return define_table({"table": name, "columns": [
        {"name": "Id", "kind": "numeric"},
        {"name": "Salary", "kind": "numeric", "sensitive": True, "partitions": [
            {"type": "range", "lo": 1000, "hi": 5000},
            {"type": "range", "lo": 5001, "hi": 9000},
            {"type": "range", "lo": 9001, "hi": 12000},
        ]},
        {"name": "Grade", "sensitive": True, "partitions": [
            {"type": "singleton", "value": "a"},
            {"type": "singleton", "value": "b"},
            {"type": "singleton", "value": "c"},
        ]},
    ]})


def salary_table(name, bounds):
    return define_table({"table": name, "columns": [
        {"name": "Salary", "kind": "numeric", "sensitive": True,
         "partitions": [{"type": "range", "lo": lo, "hi": hi} for lo, hi in bounds]},
    ]})


@pytest.fixture
def rw(keys, students_schema):
    info = define_table(dict(students_schema.to_dict(), table="students_info"))
    reg = SchemaRegistry([students_schema, info, employee()])
    return reg, QueryRewriter(reg, keys)


def plan(rw, sql):
    reg, rewriter = rw
    return rewriter.rewrite(parse(sql, reg))


# -- golden rewrites -----------------------------------------------------------

def test_department_equality_is_one_mask(rw):
    rq = plan(rw, 'select Name from Students where Department = "Computer science"')
    assert rq.predicate == MaskAtom(0, 0, 32)
    assert rq.exact
    assert "reference0 & 32 > 0" in emit_sql(rq)


def test_salary_greater_than(rw):
    rq = plan(rw, "select Id from Employee where Salary > 8000")
    assert rq.predicate == MaskAtom(0, 0, 16 | 8)
    assert emit_sql(rq).endswith("WHERE reference0 & 24 > 0")
    assert not rq.exact


def test_name_or_visa(rw):
    rq = plan(rw, 'select ID from Students where Name = "Alice" or `Visa type` = "J2"')
    assert rq.predicate == MaskAtom(0, 0, 524288 | 128)


def test_and_is_not_merged(rw):
    rq = plan(rw, 'select ID from Students where Rank = "senior" and Department = "Math"')
    assert rq.predicate.items == (MaskAtom(0, 0, 16384), MaskAtom(0, 0, 2))
    assert "reference0 & 16384 > 0 AND reference0 & 2 > 0" in emit_sql(rq)


def test_plain_atom_passes_through(rw):
    rq = plan(rw, "select ID from Students where ID >= 112")
    assert rq.predicate == PlainAtom(0, "ID", ">=", 112)
    assert rq.forwarded and rq.exact


def test_negated_singleton_becomes_other_partitions(rw):
    rq = plan(rw, 'select ID from Students where not Department = "Computer science"')
    assert rq.predicate == MaskAtom(0, 0, 31)
    # a bucket value cannot be excluded, so it stays a residual
    rq = plan(rw, 'select ID from Students where not Department = "Physics"')
    assert rq.predicate == TRUE and not rq.exact


def test_name_join_pairs_equal_letter_ranges(rw):
    rq = plan(rw, "select a.ID from Students a inner join students_info b on a.Name = b.Name")
    pairs = [(p.left.mask, p.right.mask) for p in rq.predicate.items]
    assert pairs == [(524288, 524288), (262144, 262144), (131072, 131072), (65536, 65536)]
    assert rq.kind == "join" and not rq.exact


def test_overlap_join_mapping(keys):
    a = salary_table("A", [(10000, 15000), (15001, 20000), (20001, 25000), (25001, 30000)])
    b = salary_table("B", [(10000, 20000), (20001, 30000)])
    reg = SchemaRegistry([a, b])
    rq = QueryRewriter(reg, keys).rewrite(parse("select a.Salary from B b inner join A a on b.Salary = a.Salary", reg))
    # B is slot 0 (bits 1, 0), A is slot 1 (bits 3..0)
    pairs = {(p.left.mask, p.right.mask) for p in rq.predicate.items}
    assert pairs == {(2, 8), (2, 4), (1, 2), (1, 1)}


def test_disjoint_ranges_join_to_false(keys):
    a = salary_table("A", [(0, 10)])
    b = salary_table("B", [(11, 20)])
    reg = SchemaRegistry([a, b])
    rq = QueryRewriter(reg, keys).rewrite(parse("select a.Salary from A a inner join B b on a.Salary = b.Salary", reg))
    assert rq.predicate == FALSE


def test_order_on_categorical_rejected(rw):
    with pytest.raises(RewriteError):
        plan(rw, 'select ID from Students where Rank > "junior"')


def test_mixed_sensitivity_column_pair_left_to_residual(rw):
    rq = plan(rw, "select a.Id from Employee a inner join Employee b on a.Id = b.Salary")
    assert rq.predicate == TRUE and not rq.exact


def test_count_exactness(rw):
    assert plan(rw, 'select count(*) from Students where Rank = "senior" or `Visa type` = "F1"').kind == "count"
    assert plan(rw, 'select count(*) from Students where Name = "Alice"').kind == "scan"
    assert plan(rw, 'select count(*) from Students where Department = "Biology"').kind == "scan"


def test_sort_uses_partition_groups(rw):
    rq = plan(rw, "select Id from Employee order by Salary desc")
    assert rq.kind == "ordered_scan" and rq.descending
    assert [g.mask for g in rq.groups] == [32, 16, 8]


def test_set_operation_checks(rw, keys):
    rq = plan(rw, "select Name from Students union select Name from students_info")
    assert rq.kind == "union_scan" and len(rq.parts) == 2
    with pytest.raises(RewriteError, match="number of columns"):
        plan(rw, "select Name, ID from Students union select Name from students_info")
    with pytest.raises(RewriteError, match="domains"):
        plan(rw, "select ID from Students union select Name from students_info")
    rq = plan(rw, "select Rank from Students intersect select Rank from students_info")
    assert rq.kind == "intersect_join" and not rq.fallback
    # letter ranges are not usable as intersection join columns
    rq = plan(rw, "select Name from Students intersect select Name from students_info")
    assert rq.fallback


def test_key_mismatch_for_union(students_schema, keys):
    other = define_table(dict(students_schema.to_dict(), table="Other", key="second"))
    reg = SchemaRegistry([students_schema, other])
    rewriter = QueryRewriter(reg, {"default": keys, "second": keys})
    with pytest.raises(KeyMismatchError):
        rewriter.rewrite(parse("select Name from Students union select Name from Other", reg))


def test_emitted_sql_hides_identifiers_and_literals(rw):
    rq = plan(rw, 'select Name, Rank from Students where Department = "Math" and Rank = "senior"')
    text = emit_sql(rq)
    for word in ("Students", "Name", "Rank", "Department", "Math", "senior"):
        assert word not in text
    assert emit_sql(rq) == text


# -- properties ----------------------------------------------------------------

SCHEMA = define_table((DEMO / "students.json").read_text(encoding="utf-8"))
LETTERS = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcxyz"
RANKS = ["freshman", "senior", "junior", "sophomore", "graduate"]
VISAS = ["F1", "F2", "J1", "J2", "None"]
DEPTS = ["Computer science", "Computer engineering", "Information system", "Business", "Math",
         "Physics", "Chemistry", "Biology", "History", "Undeclared"]

names = st.tuples(st.sampled_from(LETTERS), st.text("abz", max_size=3)).map("".join)
rows = st.tuples(st.integers(100, 130), names, st.sampled_from(RANKS), st.sampled_from(VISAS),
                 st.sampled_from(DEPTS))


@st.composite
def atoms(draw):
    col = draw(st.sampled_from(["ID", "Name", "Rank", "Visa type", "Department"]))
    if col == "ID":
        return ValueAtom(ColumnRef(col, "Students", 0), draw(st.sampled_from(["=", "<", ">="])),
                         draw(st.integers(95, 135)))
    if col == "Name":
        return ValueAtom(ColumnRef(col, "Students", 0), draw(st.sampled_from(["=", "<", "<=", ">", ">="])),
                         draw(names))
    pool = {"Rank": RANKS, "Visa type": VISAS, "Department": DEPTS}[col]
    return ValueAtom(ColumnRef(col, "Students", 0), "=", draw(st.sampled_from(pool)))


conditions = st.recursive(
    atoms(),
    lambda inner: st.one_of(
        inner.map(Not),
        st.lists(inner, min_size=2, max_size=3).map(lambda xs: QAnd(tuple(xs))),
        st.lists(inner, min_size=2, max_size=3).map(lambda xs: QOr(tuple(xs))),
    ),
    max_leaves=6,
)


def cloud_holds(pred, row):
    bits = codec.encode_bits(SCHEMA, SCHEMA.layout, row)
    return evaluate(pred, lambda slot: bits.words, lambda slot, col: row[SCHEMA.index_of(col)])


def plain_holds(cond, row):
    return evaluate_condition(cond, lambda ref: row[SCHEMA.index_of(ref.name)])


@settings(max_examples=300, deadline=None)
@given(conditions, st.lists(rows, min_size=1, max_size=8))
def test_rewrite_never_loses_a_matching_row(cond, sample):
    pred = rewrite_compound(SCHEMA, SCHEMA.layout, cond)
    exact = is_exact(SCHEMA, cond)
    for row in sample:
        truth = plain_holds(cond, row)
        got = cloud_holds(pred, row)
        if truth:
            assert got
        if exact:
            assert got == truth


masks = st.builds(MaskAtom, st.integers(0, 1), st.integers(0, 2), st.integers(1, (1 << 64) - 1))


@settings(max_examples=200)
@given(st.lists(st.one_of(masks, st.just(FALSE)), min_size=1, max_size=6),
       st.lists(st.integers(0, (1 << 64) - 1), min_size=3, max_size=3),
       st.lists(st.integers(0, (1 << 64) - 1), min_size=3, max_size=3))
def test_mask_merging_preserves_meaning(items, w0, w1):
    words = (tuple(w0), tuple(w1))

    def ev(p):
        return evaluate(p, lambda slot: words[slot], None)

    assert ev(make_or(items)) == any(ev(it) for it in items)
    merged = make_or(items)
    if isinstance(merged, Or):
        keys = [(m.slot, m.word) for m in merged.items if isinstance(m, MaskAtom)]
        assert len(keys) == len(set(keys))


def test_pair_atom_requires_both_sides():
    pair = MaskPairAtom(MaskAtom(0, 0, 1), MaskAtom(1, 0, 2))
    words = ((1,), (0,))
    assert not evaluate(pair, lambda s: words[s], None)


def test_alice_row_satisfies_cs_mask():
    assert cloud_holds(MaskAtom(0, 0, 32), STUDENTS[0])
    assert not cloud_holds(MaskAtom(0, 0, 32), STUDENTS[1])
