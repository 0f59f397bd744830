from dataclasses import replace
from decimal import Decimal

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bitshield import SchemaRegistry, define_table
from bitshield.errors import ResolutionError, SqlSyntaxError
from bitshield.sql import (
    And,
    ColumnAtom,
    ColumnRef,
    Not,
    Or,
    Select,
    SetOperation,
    ValueAtom,
    format_query,
    parse,
    tokenize,
)

from conftest import DEMO


def test_simple_select_with_text_literal():
    ast = parse('select name from students where department = "Computer science"')
    assert isinstance(ast, Select) and ast.kind == "select"
    assert ast.columns == (ColumnRef("name"),)
    assert ast.where == ValueAtom(ColumnRef("department"), "=", "Computer science")


def test_distinct_star_and_no_condition():
    ast = parse('select distinct Name from students where department = "Computer science"')
    assert ast.distinct
    ast = parse("select * from t")
    assert ast.columns is None and ast.where is None


def test_keywords_case_insensitive_and_single_quotes():
    ast = parse("SeLeCt a FrOm t WhErE a = 'it''s'")
    assert ast.where.value == "it's"


def test_literal_on_left_is_flipped():
    assert parse("select a from t where 5 < a").where == ValueAtom(ColumnRef("a"), ">", 5)
    assert parse("select a from t where 5 ≤ a").where == ValueAtom(ColumnRef("a"), ">=", 5)


def test_numbers_are_int_or_decimal():
    toks = tokenize("12 -3 4.50")
    assert [t.value for t in toks[:-1]] == [12, -3, Decimal("4.50")]


def test_precedence_and_not():
    ast = parse("select a from t where not a = 1 and b = 2 or c = 3")
    assert isinstance(ast.where, Or)
    first = ast.where.items[0]
    assert isinstance(first, And) and isinstance(first.items[0], Not)


def test_join_aggregate_order_set_operations():
    ast = parse("select a.x, b.y from s a inner join t b on a.x = b.x where b.y > 2 order by a.x desc")
    assert ast.kind == "join" and ast.on == ColumnAtom(ColumnRef("x", "a"), "=", ColumnRef("x", "b"))
    assert ast.order_by.descending
    assert parse("select avg(x) from t").aggregate.func == "avg"
    u = parse("select x from s union select y from t")
    assert isinstance(u, SetOperation) and u.op == "union"
    assert parse("select x from s intersect select y from t").op == "intersect"


@pytest.mark.parametrize("text, pos", [
    ("select from t", 7),
    ("select a from t where a = ", 26),
    ("select a from t where a ! 3", 24),
    ("select a from t where 1 = 2", 22),
    ("select a from t order by a limit 3", 27),
    ("select count(x) from t", 13),
])
def test_syntax_errors_carry_position(text, pos):
    with pytest.raises(SqlSyntaxError) as err:
        parse(text)
    assert err.value.position == pos
    assert f"offset {pos}" in str(err.value)


@pytest.mark.parametrize("text", [
    "select a from t group by a",
    "select a from t union select a from u order by a",
    "select distinct count(*) from t",
    "select max(a) from t order by a",
    "select a from t where a <> 1",
])
def test_outside_grammar_rejected(text):
    with pytest.raises(SqlSyntaxError):
        parse(text)


def test_resolution(students_schema):
    reg = SchemaRegistry([students_schema])
    ast = parse('select NAME from STUDENTS where `visa type` = "F1"', reg)
    assert ast.columns[0] == ColumnRef("Name", "Students", 0)
    assert ast.where.column.name == "Visa type"
    with pytest.raises(ResolutionError, match="unknown column"):
        parse("select nope from students", reg)
    with pytest.raises(ResolutionError):
        parse("select name from nobody", reg)
    with pytest.raises(ResolutionError, match="does not match"):
        parse("select name from students where id = \"x\"", reg)
    with pytest.raises(ResolutionError, match="AVG"):
        parse("select avg(name) from students", reg)
    with pytest.raises(ResolutionError, match="ambiguous"):
        parse("select name from students a join students b on a.id = b.id", reg)
    with pytest.raises(ResolutionError, match="aliases"):
        parse("select a.name from students join students on id = id", reg)
    with pytest.raises(ResolutionError, match="compare"):
        parse("select name from students where id = name", reg)


# -- plaintext round trip ------------------------------------------------------

COLS = ["ID", "Name", "Rank", "Visa type", "Department"]
TEXT_LIT = st.text(alphabet="abcXYZ \"'", min_size=0, max_size=6)


@st.composite
def atoms(draw):
    col = draw(st.sampled_from(COLS))
    op = draw(st.sampled_from(["=", ">", ">=", "<", "<="]))
    if col == "ID":
        value = draw(st.one_of(st.integers(-500, 500),
                               st.decimals(places=2, min_value=-100, max_value=100, allow_nan=False)))
    else:
        value = draw(TEXT_LIT)
    return ValueAtom(ColumnRef(col, "Students", 0), op, value)


conditions = st.recursive(
    atoms(),
    lambda inner: st.one_of(
        inner.map(Not),
        st.lists(inner, min_size=2, max_size=3).map(lambda xs: And(tuple(xs))),
        st.lists(inner, min_size=2, max_size=3).map(lambda xs: Or(tuple(xs))),
    ),
    max_leaves=6,
)


REGISTRY = SchemaRegistry([define_table((DEMO / "students.json").read_text(encoding="utf-8"))])


@settings(max_examples=150, deadline=None)
@given(conditions, st.booleans())
def test_format_then_parse_round_trips(cond, distinct):
    reg = REGISTRY
    original = parse("select name, `visa type` from students", reg)
    ast = replace(original, where=cond, distinct=distinct)
    text = format_query(ast)
    assert parse(text, reg) == ast
