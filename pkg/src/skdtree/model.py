"""Points, coordinate encoding, boxes, schema and the on-disk dataset format."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

MAXVAL = (1 << 64) - 1
"""Reserved padding code for 64-bit splitter slots. Never a data coordinate."""

BLOCK_WIDTH = 8
"""Lanes per data-parallel block (one 64-byte line of 64-bit keys)."""

_SIGN = 1 << 63
DATASET_MAGIC = b"SKD1"
_HEADER = struct.Struct("<4sIQ")


@dataclass(frozen=True)
class Point:
    coords: tuple[int, ...]
    id: int

    @property
    def dims(self) -> int:
        return len(self.coords)


@dataclass(frozen=True)
class BoundingBox:
    lo: tuple[int, ...]
    hi: tuple[int, ...]

    def __post_init__(self):
        if len(self.lo) != len(self.hi):
            raise ValueError("box bounds differ in dimensionality")
        if any(a > b for a, b in zip(self.lo, self.hi)):
            raise ValueError(f"inverted box {self.lo} > {self.hi}")

    @classmethod
    def of(cls, coords: np.ndarray) -> "BoundingBox":
        """Exact box of an (n, D) coordinate array."""
        return cls(tuple(int(v) for v in coords.min(axis=0)), tuple(int(v) for v in coords.max(axis=0)))


@dataclass(frozen=True)
class RangeQuery:
    lo: tuple[int, ...]
    hi: tuple[int, ...]

    def __post_init__(self):
        if len(self.lo) != len(self.hi):
            raise ValueError("query bounds differ in dimensionality")
        for d, (a, b) in enumerate(zip(self.lo, self.hi)):
            if a > b:
                raise ValueError(f"query lo > hi in dimension {d}")
            if a < 0 or b > MAXVAL:
                raise ValueError(f"query bound outside the 64-bit domain in dimension {d}")

    @classmethod
    def whole_domain(cls, dims: int) -> "RangeQuery":
        return cls((0,) * dims, (MAXVAL,) * dims)

    @property
    def dims(self) -> int:
        return len(self.lo)


@dataclass
class Schema:
    dims: int
    leaf_capacity: int = 128
    dim_order: list[int] = field(default_factory=list)

    def __post_init__(self):
        if not 1 <= self.dims <= 255:
            raise ValueError(f"unsupported dimensionality {self.dims}")
        if self.leaf_capacity < 2:
            raise ValueError("leaf capacity must be at least 2")
        if not self.dim_order:
            self.dim_order = list(range(self.dims))
        if sorted(self.dim_order) != list(range(self.dims)):
            raise ValueError(f"dim_order {self.dim_order} is not a permutation")


def box_contains_point(box: BoundingBox, point: Point | Sequence[int]) -> bool:
    coords = point.coords if isinstance(point, Point) else point
    if len(coords) != len(box.lo):
        raise ValueError("dimension mismatch")
    return all(lo <= x <= hi for lo, x, hi in zip(box.lo, coords, box.hi))


def range_covers_box_dim(q: RangeQuery, box: BoundingBox, d: int) -> bool:
    return q.lo[d] <= box.lo[d] and q.hi[d] >= box.hi[d]


def encode_column(values: np.ndarray, row_offset: int = 0) -> np.ndarray:
    """Order-preserving map of one column to unsigned 64-bit ordinals.

    Unsigned integers pass through, signed integers get their sign bit
    flipped, and IEEE doubles use the sign-flip bit transform (negative
    values have all bits inverted, non-negative ones get the sign bit set).
    """
    values = np.asarray(values)
    if values.dtype.kind == "u":
        out = values.astype(np.uint64)
    elif values.dtype.kind in "ib":
        out = values.astype(np.int64).view(np.uint64) ^ np.uint64(_SIGN)
    elif values.dtype.kind == "f":
        f = values.astype(np.float64)
        bad = ~np.isfinite(f)
        if bad.any():
            row = int(np.flatnonzero(bad)[0]) + row_offset
            raise ValueError(f"non-finite value in row {row}")
        f = np.where(f == 0.0, 0.0, f)  # fold -0.0 onto +0.0
        bits = f.view(np.uint64)
        neg = (bits & np.uint64(_SIGN)) != 0
        out = np.where(neg, ~bits, bits | np.uint64(_SIGN))
    else:
        raise TypeError(f"cannot encode column of dtype {values.dtype}")
    return np.minimum(out, np.uint64(MAXVAL - 1))


def encode_dataset(rows, ids: Iterable[int] | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Encode an (N, D) numeric table into (coords uint64 (N, D), ids uint64 (N,))."""
    if isinstance(rows, np.ndarray):
        arr = rows
    else:
        rows = list(rows)
        widths = {len(r) for r in rows}
        if len(widths) > 1:
            raise ValueError(f"rows have inconsistent widths {sorted(widths)}")
        if rows and all(isinstance(v, int) and v >= 0 for r in rows for v in r):
            arr = np.array(rows, dtype=np.uint64)
        else:
            arr = np.array(rows, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError("expected a two-dimensional table")
    coords = np.empty(arr.shape, dtype=np.uint64)
    for d in range(arr.shape[1]):
        coords[:, d] = encode_column(arr[:, d])
    if ids is None:
        id_arr = np.arange(arr.shape[0], dtype=np.uint64)
    else:
        id_arr = np.asarray(list(ids) if not isinstance(ids, np.ndarray) else ids, dtype=np.uint64)
        if id_arr.shape != (arr.shape[0],):
            raise ValueError("ids length does not match row count")
    return coords, id_arr


def to_points(coords: np.ndarray, ids: np.ndarray) -> list[Point]:
    return [Point(tuple(c), i) for c, i in zip(coords.tolist(), ids.tolist())]


def write_dataset(path: str | Path, coords: np.ndarray, ids: np.ndarray) -> None:
    n, dims = coords.shape
    records = np.empty((n, dims + 1), dtype="<u8")
    records[:, :dims] = coords
    records[:, dims] = ids
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(DATASET_MAGIC, dims, n))
        fh.write(records.tobytes())


def read_dataset(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, dims, n = _HEADER.unpack_from(raw)
    if magic != DATASET_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    expected = _HEADER.size + n * (dims + 1) * 8
    if len(raw) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(raw)}")
    records = np.frombuffer(raw, dtype="<u8", offset=_HEADER.size).reshape(n, dims + 1)
    return records[:, :dims].astype(np.uint64), records[:, dims].astype(np.uint64)


def read_csv(path: str | Path, id_column: int | None = None, header: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Load a CSV of D numeric columns plus an optional id column.

    Columns that parse as non-negative integers are indexed as unsigned
    values; anything else is read as doubles.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        if header:
            next(reader, None)
        table = [row for row in reader if row]
    if not table:
        return np.empty((0, 0), dtype=np.uint64), np.empty(0, dtype=np.uint64)
    width = len(table[0])
    for i, row in enumerate(table):
        if len(row) != width:
            raise ValueError(f"row {i} has {len(row)} columns, expected {width}")
    ids = None
    if id_column is not None:
        ids = np.array([int(row[id_column]) for row in table], dtype=np.uint64)
        table = [row[:id_column] + row[id_column + 1:] for row in table]
    columns = []
    for d in range(len(table[0])):
        raw = [row[d].strip() for row in table]
        try:
            col = np.array([int(v) for v in raw], dtype=object)
            if (col < 0).any() or (col > MAXVAL).any():
                raise ValueError
            col = col.astype(np.uint64)
        except ValueError:
            col = np.array([float(v) for v in raw], dtype=np.float64)
        columns.append(col)
    coords = np.empty((len(table), len(columns)), dtype=np.uint64)
    for d, col in enumerate(columns):
        coords[:, d] = encode_column(col)
    if ids is None:
        ids = np.arange(len(table), dtype=np.uint64)
    return coords, ids
