from decimal import Decimal

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bitshield import codec
from bitshield.codec import BitVector
from bitshield.crypto import Ciphertext
from bitshield.errors import SchemaError, UncoveredValueError
from bitshield.schema import define_table

from conftest import STUDENTS, TABLE2_BITS


def test_table1_rows_encode_to_table2_vectors(students_schema):
    got = [str(codec.encode_bits(students_schema, students_schema.layout, r)) for r in STUDENTS]
    assert got == TABLE2_BITS


def test_alice_vector_is_sum_of_four_masks(students_schema):
    bv = codec.encode_bits(students_schema, students_schema.layout, STUDENTS[0])
    assert bv.words == (524288 + 32768 + 1024 + 32,)
    assert bv.positions() == [19, 15, 10, 5]
    assert bv.popcount() == 4


@settings(max_examples=100)
@given(st.integers(min_value=1, max_value=200).flatmap(
    lambda n: st.tuples(st.just(n), st.sets(st.integers(min_value=0, max_value=n - 1)))))
def test_bitvector_string_round_trip(args):
    n, positions = args
    bv = BitVector.from_positions(positions, n)
    assert BitVector.parse(str(bv)) == bv
    assert set(bv.positions()) == positions
    for p in positions:
        assert bv.words[p // 64] >> (p % 64) & 1


def test_bitvector_validation():
    with pytest.raises(ValueError):
        BitVector((0, 0), 20)
    with pytest.raises(ValueError):
        BitVector((1 << 20,), 20)
    with pytest.raises(ValueError):
        BitVector.from_positions([20], 20)
    with pytest.raises(ValueError):
        BitVector.parse("0102")


def test_bit_80_lands_in_word_one_offset_16():
    bv = BitVector.from_positions([80], 100)
    assert bv.words == (0, 1 << 16)
    assert bv.test(80)


def test_encrypt_row_hides_sensitive_cells(keys, students_schema):
    row = codec.encrypt_row(students_schema, students_schema.layout, keys, STUDENTS[0])
    assert row.cells[0] == 110
    assert all(isinstance(c, Ciphertext) for c in row.cells[1:])
    assert str(row.reference) == TABLE2_BITS[0]
    plain = codec.decrypt_columns(students_schema, keys, row, ["Name", "Department"])
    assert plain[1] == "Alice" and plain[4] == "Computer science"
    assert isinstance(plain[2], Ciphertext)


def test_uncovered_and_malformed_rows(keys, students_schema):
    with pytest.raises(UncoveredValueError):
        codec.encrypt_row(students_schema, students_schema.layout, keys, (1, "Bob", "senior", "H1", "Math"))
    with pytest.raises(SchemaError, match="expects 5 values"):
        codec.encrypt_row(students_schema, students_schema.layout, keys, (1, "Bob"))
    with pytest.raises(SchemaError):
        codec.coerce_row(students_schema, ("abc", "Bob", "senior", "F1", "Math"))


@settings(max_examples=60)
@given(st.one_of(
    st.integers(min_value=-10**12, max_value=10**12),
    st.decimals(allow_nan=False, allow_infinity=False, places=3, min_value=-10**6, max_value=10**6),
))
def test_numeric_values_round_trip(value):
    assert codec.decode_value(codec.encode_value(value, "numeric"), "numeric") == value


def test_decimal_scale_survives(keys):
    schema = define_table({"table": "p", "columns": [{"name": "price", "kind": "numeric", "sensitive": True,
                           "partitions": [{"type": "range", "lo": "0", "hi": "100"}]}]})
    row = codec.encrypt_row(schema, schema.layout, keys, ("1.50",))
    value = codec.decrypt_cell(schema, keys, 0, row.cells[0])
    assert value == Decimal("1.50") and str(value) == "1.50"
