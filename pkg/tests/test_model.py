from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from skdtree.model import (
    MAXVAL,
    BoundingBox,
    Point,
    RangeQuery,
    Schema,
    box_contains_point,
    encode_column,
    encode_dataset,
    range_covers_box_dim,
    read_csv,
    read_dataset,
    write_dataset,
)


def test_unsigned_values_pass_through():
    coords, ids = encode_dataset(np.array([[42]], dtype=np.uint64))
    assert coords[0, 0] == 42
    assert ids.tolist() == [0]


def test_top_value_is_clamped():
    coords, _ = encode_dataset(np.array([[MAXVAL]], dtype=np.uint64))
    assert int(coords[0, 0]) == MAXVAL - 1


@given(st.floats(allow_nan=False, allow_infinity=False), st.floats(allow_nan=False, allow_infinity=False))
def test_double_encoding_preserves_order(a, b):
    ea, eb = encode_column(np.array([a, b])).tolist()
    if a < b:
        assert ea < eb
    elif a == b:
        assert ea == eb
    else:
        assert ea > eb


@given(st.lists(st.integers(-(2**63), 2**63 - 1), min_size=2, max_size=20))
def test_signed_encoding_preserves_order(values):
    enc = encode_column(np.array(values, dtype=np.int64)).tolist()
    for (x, ex), (y, ey) in zip(zip(values, enc), zip(values[1:], enc[1:])):
        assert (x < y) == (ex < ey)
        assert (x == y) == (ex == ey)


def test_negative_zero_folds_onto_zero():
    a, b = encode_column(np.array([-0.0, 0.0])).tolist()
    assert a == b


def test_non_finite_reports_row():
    with pytest.raises(ValueError, match="row 2"):
        encode_column(np.array([1.0, 2.0, np.nan]))


def test_inconsistent_rows_rejected():
    with pytest.raises(ValueError):
        encode_dataset([[1, 2], [3]])


def test_box_contains_point_examples():
    b = BoundingBox((0, 0), (10, 10))
    assert box_contains_point(b, Point((5, 5), 0))
    assert not box_contains_point(b, (5, 11))
    assert box_contains_point(BoundingBox((3, 3), (3, 3)), (3, 3))


def test_range_covers_box_dim_examples():
    b = BoundingBox((2,), (9,))
    assert range_covers_box_dim(RangeQuery((0,), (10,)), b, 0)
    assert not range_covers_box_dim(RangeQuery((3,), (10,)), b, 0)
    assert range_covers_box_dim(RangeQuery((2,), (9,)), b, 0)


def test_invalid_boxes_and_queries():
    with pytest.raises(ValueError):
        BoundingBox((5,), (4,))
    with pytest.raises(ValueError):
        RangeQuery((5,), (4,))
    with pytest.raises(ValueError):
        RangeQuery((0,), (MAXVAL + 1,))
    assert RangeQuery.whole_domain(3).hi == (MAXVAL,) * 3


def test_schema_validation():
    assert Schema(3).dim_order == [0, 1, 2]
    with pytest.raises(ValueError):
        Schema(2, dim_order=[0, 0])
    with pytest.raises(ValueError):
        Schema(2, leaf_capacity=1)


def test_dataset_file_round_trip(tmp_path, rng):
    coords = rng.integers(0, MAXVAL, size=(50, 3), dtype=np.uint64)
    ids = np.arange(100, 150, dtype=np.uint64)
    path = tmp_path / "d.bin"
    write_dataset(path, coords, ids)
    c2, i2 = read_dataset(path)
    assert np.array_equal(coords, c2) and np.array_equal(ids, i2)
    raw = path.read_bytes()
    path.write_bytes(raw[:-8])
    with pytest.raises(ValueError):
        read_dataset(path)
    path.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(ValueError, match="magic"):
        read_dataset(path)


def test_csv_ingestion(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("x,y,id\n1,2.5,10\n3,-1.0,11\n")
    coords, ids = read_csv(path, id_column=2, header=True)
    assert ids.tolist() == [10, 11]
    assert coords[:, 0].tolist() == [1, 3]
    assert coords[1, 1] < coords[0, 1]
