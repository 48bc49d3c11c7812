"""Inner and leaf node layouts plus the per-node search kernels.

Every kernel exists twice: a lane-parallel version built from numpy
whole-block operations (load, broadcast compare, mask AND, popcount) and a
plain scalar loop. Both return identical results; ``simd`` selects one.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .model import BLOCK_WIDTH, MAXVAL

U128_MAX = (1 << 128) - 1
_M32 = np.uint64(0xFFFFFFFF)
_U64_MAX = np.uint64(MAXVAL)


class Layout(enum.Enum):
    N64 = 64
    N32 = 32
    N16 = 16

    @property
    def width(self) -> int:
        return self.value

    @property
    def slots(self) -> int:
        """Splitter slots in one 64-byte line; also the maximum fanout."""
        return 512 // self.value

    @property
    def fanout(self) -> int:
        return self.slots

    @property
    def max_splitters(self) -> int:
        return self.slots - 1

    @property
    def maxval(self) -> int:
        return (1 << self.value) - 1

    @property
    def dtype(self):
        return {64: np.uint64, 32: np.uint32, 16: np.uint16}[self.value]

    def wider(self) -> "Layout | None":
        return {Layout.N16: Layout.N32, Layout.N32: Layout.N64, Layout.N64: None}[self]


class LeafType(enum.IntEnum):
    LIGHT = 0
    HEAVY = 1
    OUTLIER = 2


def quantize(splitter: int, shift: int, layout: Layout = Layout.N64) -> int:
    """Stored code of a full-precision splitter: drop the low ``shift`` bits."""
    if not 0 <= shift <= 48:
        raise ValueError(f"shift {shift} out of range")
    return (splitter >> shift) & layout.maxval


def effective(code: int, shift: int) -> int:
    return code << shift


def node_shift_for_layout(max_candidate: int, layout: Layout) -> int:
    if layout is Layout.N64:
        return 0
    return max(0, int(max_candidate).bit_length() - layout.width)


class InnerNode:
    """One splitting dimension, a sorted padded splitter block, child refs.

    A coordinate ``x`` routes to child ``#{t : key(x) >= t}`` where
    ``key(x) = min(x >> shift, maxval - 1)``. Stored codes never reach the
    layout's MAXVAL, so padding slots never count.
    """

    __slots__ = ("layout", "dim", "shift", "codes", "block", "children", "top")

    def __init__(self, layout: Layout, dim: int, shift: int, codes: list[int], children: list):
        if len(children) != len(codes) + 1:
            raise ValueError("need exactly one more child than splitters")
        if len(codes) > layout.max_splitters:
            raise ValueError(f"{len(codes)} splitters overflow a {layout.name} node")
        if layout is Layout.N64 and shift != 0:
            raise ValueError("N64 nodes are never shifted")
        self.layout = layout
        self.top = layout.maxval - 1  # largest routable key
        self.dim = dim
        self.shift = shift
        self.codes = list(codes)
        self.children = list(children)
        self._check_codes()
        self._refresh_block()

    def _check_codes(self) -> None:
        codes = self.codes
        for a, b in zip(codes, codes[1:]):
            if a >= b:
                raise ValueError(f"splitters not strictly increasing: {codes}")
        if codes and (codes[0] < 0 or codes[-1] >= self.layout.maxval):
            raise ValueError(f"splitter code outside [0, {self.layout.maxval})")

    def _refresh_block(self) -> None:
        block = np.full(self.layout.slots, self.layout.maxval, dtype=self.layout.dtype)
        block[: len(self.codes)] = self.codes
        self.block = block

    @property
    def slotuse(self) -> int:
        return len(self.codes)

    @property
    def has_free_slot(self) -> bool:
        return len(self.codes) < self.layout.max_splitters

    def key(self, x: int) -> int:
        k = x >> self.shift
        return k if k < self.top else self.top

    def lower_bound(self, i: int) -> int:
        """Inclusive lower end of child ``i``'s interval."""
        return 0 if i == 0 else self.codes[i - 1] << self.shift

    def upper_bound(self, i: int) -> int | None:
        """Exclusive upper end of child ``i``'s interval (None for the last child)."""
        return None if i == len(self.codes) else self.codes[i] << self.shift

    def insert_splitter(self, pos: int, code: int, right_child) -> None:
        """Insert ``code`` as splitter ``pos``; ``right_child`` becomes child ``pos + 1``."""
        if not self.has_free_slot:
            raise ValueError("node is full")
        self.codes.insert(pos, code)
        self.children.insert(pos + 1, right_child)
        self._check_codes()
        self._refresh_block()

    def remove_child(self, i: int) -> None:
        """Unlink child ``i``; its interval is absorbed by a neighbour."""
        del self.children[i]
        del self.codes[i - 1 if i > 0 else 0]
        self._refresh_block()

    def __repr__(self) -> str:
        return f"InnerNode({self.layout.name}, dim={self.dim}, shift={self.shift}, codes={self.codes})"


def _padded(n: int) -> int:
    return -(-n // BLOCK_WIDTH) * BLOCK_WIDTH


class LeafNode:
    """Columnar leaf: one uint64 vector per dimension plus ids, padded to the block width.

    Lanes between ``n`` and the next block boundary repeat the last point;
    an occupancy mask keeps them out of every result.
    """

    __slots__ = ("coords", "ids", "n", "lo", "hi", "kind", "outlier_level")

    def __init__(self, coords: np.ndarray, ids: np.ndarray):
        """``coords`` is (m, D) row-major as produced by construction."""
        m, dims = coords.shape
        cap = max(_padded(m), BLOCK_WIDTH)
        self.coords = np.empty((dims, cap), dtype=np.uint64)
        self.ids = np.zeros(cap, dtype=np.uint64)
        self.coords[:, :m] = coords.T
        self.ids[:m] = ids
        self.n = m
        self.kind = LeafType.LIGHT
        self.outlier_level = 0
        self._repad()
        self.recompute_box()

    @property
    def dims(self) -> int:
        return self.coords.shape[0]

    @property
    def slotuse(self) -> int:
        return self.n

    def _repad(self) -> None:
        n = self.n
        end = _padded(n)
        if n and end > n:
            self.coords[:, n:end] = self.coords[:, n - 1 : n]
            self.ids[n:end] = self.ids[n - 1]

    def recompute_box(self) -> None:
        if self.n == 0:
            self.lo = [MAXVAL] * self.dims
            self.hi = [0] * self.dims
            return
        live = self.coords[:, : self.n]
        self.lo = live.min(axis=1).tolist()
        self.hi = live.max(axis=1).tolist()

    def point(self, i: int) -> tuple[tuple[int, ...], int]:
        return tuple(self.coords[:, i].tolist()), int(self.ids[i])

    def rows(self) -> np.ndarray:
        """Live coordinates as an (n, D) array (copy)."""
        return np.ascontiguousarray(self.coords[:, : self.n].T)

    def live_ids(self) -> np.ndarray:
        return self.ids[: self.n].copy()

    def append(self, coords: tuple[int, ...], pid: int) -> None:
        n = self.n
        if _padded(n + 1) > self.coords.shape[1]:
            cap = _padded(max(2 * self.coords.shape[1], n + 1))
            grown = np.empty((self.dims, cap), dtype=np.uint64)
            grown[:, :n] = self.coords[:, :n]
            ids = np.zeros(cap, dtype=np.uint64)
            ids[:n] = self.ids[:n]
            self.coords, self.ids = grown, ids
        self.coords[:, n] = coords
        self.ids[n] = pid
        self.n = n + 1
        self._repad()
        lo, hi = self.lo, self.hi
        for d, x in enumerate(coords):
            if x < lo[d]:
                lo[d] = x
            if x > hi[d]:
                hi[d] = x

    def remove_at(self, i: int) -> None:
        """Overwrite slot ``i`` with the last point; shrink the box only if needed."""
        last = self.n - 1
        victim = self.coords[:, i].tolist()
        if i != last:
            self.coords[:, i] = self.coords[:, last]
            self.ids[i] = self.ids[last]
        self.n = last
        self._repad()
        if any(v == self.lo[d] or v == self.hi[d] for d, v in enumerate(victim)):
            self.recompute_box()

    def __repr__(self) -> str:
        return f"LeafNode(n={self.n}, kind={self.kind.name})"


def is_leaf(node) -> bool:
    return type(node) is LeafNode


# --- inner-node kernels -----------------------------------------------------


def locate_child(node: InnerNode, x: int, simd: bool = True) -> int:
    k = node.key(x)
    if simd:
        return int(np.count_nonzero(node.block <= k))
    count = 0
    for t in node.codes:
        count += k >= t
    return count


def locate_children_range(node: InnerNode, qlo: int, qhi: int, simd: bool = True) -> tuple[int, int]:
    """First and last child (inclusive) whose interval meets [qlo, qhi]."""
    shift, top = node.shift, node.top
    klo, khi = min(qlo >> shift, top), min(qhi >> shift, top)
    if simd:
        block = node.block
        return int(np.count_nonzero(block <= klo)), int(np.count_nonzero(block <= khi))
    start = end = 0
    for t in node.codes:
        start += klo >= t
        end += khi >= t
    return start, end


# --- leaf kernels -----------------------------------------------------------


def range_lanes(qlo, qhi) -> tuple[list, list]:
    """Per-dimension lane constants (lo, hi - lo) as uint64 scalars, computed once per query."""
    return [np.uint64(a) for a in qlo], [np.uint64(b - a) for a, b in zip(qlo, qhi)]


def leaf_filter_range(
    leaf: LeafNode,
    qlo,
    qhi,
    simd: bool = True,
    skip_covered: bool = True,
    stats=None,
    lanes: tuple[list, list] | None = None,
) -> np.ndarray:
    """Local indices of the points inside [qlo, qhi], ascending.

    ``lanes`` is :func:`range_lanes` of the query, passed in to avoid
    rebuilding the constants for every leaf.
    """
    n = leaf.n
    lo, hi = leaf.lo, leaf.hi
    dims = leaf.dims
    active = [d for d in range(dims) if not (skip_covered and qlo[d] <= lo[d] and qhi[d] >= hi[d])]
    if stats is not None:
        stats.points_compared += n * len(active)
    if not active:
        return np.arange(n)
    if simd:
        # lo <= x <= hi  <=>  (x - lo) mod 2**64 <= hi - lo: one subtract and one compare per lane
        base, width = lanes or range_lanes(qlo, qhi)
        coords = leaf.coords[:, : _padded(n)]
        d = active[0]
        mask = (coords[d] - base[d]) <= width[d]
        for d in active[1:]:
            mask &= (coords[d] - base[d]) <= width[d]
        # padding lanes repeat a real point, so dropping them is enough
        return np.flatnonzero(mask[:n])
    keep = [True] * n
    for d in active:
        a, b = qlo[d], qhi[d]
        col = leaf.coords[d, :n].tolist()
        for i in range(n):
            if keep[i] and not (a <= col[i] <= b):
                keep[i] = False
    return np.array([i for i in range(n) if keep[i]], dtype=np.intp)


def sq_distance_words(leaf: LeafNode, q) -> tuple[np.ndarray, np.ndarray, bool]:
    """Lane-parallel exact squared distances as (high, low) 64-bit words.

    Saturated lanes hold all-ones in both words; the flag reports whether any
    lane saturated.
    """
    n = leaf.n
    width = _padded(n)
    acc_hi = np.zeros(width, dtype=np.uint64)
    acc_lo = np.zeros(width, dtype=np.uint64)
    over = np.zeros(width, dtype=bool)
    shift32, shift33, shift31 = np.uint64(32), np.uint64(33), np.uint64(31)
    for d in range(leaf.dims):
        col = leaf.coords[d, :width]
        qd = np.uint64(q[d])
        diff = np.where(col >= qd, col - qd, qd - col)
        h = diff >> shift32
        l = diff & _M32
        ll = l * l
        hl = h * l
        lo = ll + (hl << shift33)
        hi = h * h + (hl >> shift31) + (lo < ll)
        new_lo = acc_lo + lo
        carry = new_lo < lo
        t = acc_hi + hi
        over |= t < hi
        new_hi = t + carry
        over |= new_hi < t
        acc_lo, acc_hi = new_lo, new_hi
    saturated = bool(over[:n].any())
    if saturated:
        acc_hi[over] = _U64_MAX
        acc_lo[over] = _U64_MAX
    return acc_hi[:n], acc_lo[:n], saturated


def leaf_sq_distances(leaf: LeafNode, q, simd: bool = True) -> tuple[list[int], bool]:
    """Squared Euclidean distances from ``q`` to every stored point.

    Exact while the sum fits 128 bits; otherwise saturated to 2**128 - 1
    and the returned flag is set.
    """
    if simd:
        hi, lo, saturated = sq_distance_words(leaf, q)
        return [(h << 64) | l for h, l in zip(hi.tolist(), lo.tolist())], saturated
    n = leaf.n
    cols = [leaf.coords[d, :n].tolist() for d in range(leaf.dims)]
    out = []
    saturated = False
    for i in range(n):
        s = 0
        for d, col in enumerate(cols):
            diff = col[i] - q[d]
            s += diff * diff
        if s > U128_MAX:
            s = U128_MAX
            saturated = True
        out.append(s)
    return out, saturated


def leaf_find_id(leaf: LeafNode, pid: int, simd: bool = True) -> int | None:
    n = leaf.n
    if simd:
        hits = np.flatnonzero(leaf.ids[:n] == np.uint64(pid))
        return int(hits[0]) if hits.size else None
    for i, v in enumerate(leaf.ids[:n].tolist()):
        if v == pid:
            return i
    return None


def leaf_find_point(leaf: LeafNode, coords, pid: int, simd: bool = True) -> int | None:
    """Smallest slot holding exactly (coords, pid)."""
    n = leaf.n
    if simd:
        mask = leaf.ids[:n] == np.uint64(pid)
        if not mask.any():
            return None
        for d, x in enumerate(coords):
            mask &= leaf.coords[d, :n] == np.uint64(x)
        hits = np.flatnonzero(mask)
        return int(hits[0]) if hits.size else None
    cols = [leaf.coords[d, :n].tolist() for d in range(leaf.dims)]
    for i, v in enumerate(leaf.ids[:n].tolist()):
        if v == pid and all(cols[d][i] == x for d, x in enumerate(coords)):
            return i
    return None


@dataclass
class QueryStats:
    nodes_visited: int = 0
    leaves_scanned: int = 0
    points_compared: int = 0

    def add(self, other: "QueryStats") -> None:
        self.nodes_visited += other.nodes_visited
        self.leaves_scanned += other.leaves_scanned
        self.points_compared += other.points_compared
