"""Range search (breadth-first) and exact kNN (best-first over NODE/GROUP entries)."""

from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass, field
from enum import IntEnum
from itertools import count

import numpy as np

from .nodes import (
    InnerNode,
    LeafNode,
    QueryStats,
    U128_MAX,
    leaf_filter_range,
    leaf_sq_distances,
    locate_child,
    locate_children_range,
    range_lanes,
    sq_distance_words,
)

_M64 = (1 << 64) - 1


class EntryKind(IntEnum):
    NODE = 0
    GROUP = 1


@dataclass
class HeapEntry:
    """Frontier element. For GROUP entries ``lo..hi`` are the member child
    indices of ``node`` and ``side`` is -1 (left of the query) or +1."""

    node: object
    kind: EntryKind
    dist: int
    delta: tuple[int, ...]
    lo: int = 0
    hi: int = 0
    side: int = 0


@dataclass
class RangeResult:
    coords: np.ndarray
    ids: np.ndarray

    def __len__(self) -> int:
        return self.ids.shape[0]


@dataclass
class KnnResult:
    dists: list[int]
    coords: np.ndarray
    ids: np.ndarray
    truncated: bool = False
    saturated: bool = False

    def __len__(self) -> int:
        return len(self.dists)


@dataclass
class KnnTrace:
    """Popped frontier entries and the bound seen when each was popped."""

    popped: list[HeapEntry] = field(default_factory=list)
    bounds: list[int | None] = field(default_factory=list)


def _as_bounds(q, dims):
    lo, hi = (q.lo, q.hi) if hasattr(q, "lo") else q
    lo, hi = tuple(int(v) for v in lo), tuple(int(v) for v in hi)
    if len(lo) != dims or len(hi) != dims:
        raise ValueError(f"query has {len(lo)} dimensions, tree has {dims}")
    return lo, hi


def range_query(tree, q, stats: QueryStats | None = None, skip_covered: bool = True) -> RangeResult:
    dims = tree.schema.dims
    qlo, qhi = _as_bounds(q, dims)
    simd = tree.simd
    parts_c, parts_i = [], []
    root = tree.root
    if root is not None:
        lanes = range_lanes(qlo, qhi) if simd else None
        queue = deque([root])
        visited = leaves = 0
        while queue:
            node = queue.popleft()
            visited += 1
            if type(node) is LeafNode:
                leaves += 1
                idx = leaf_filter_range(node, qlo, qhi, simd, skip_covered, stats, lanes)
                if idx.size == node.n:
                    parts_c.append(node.coords[:, : node.n])
                    parts_i.append(node.ids[: node.n])
                elif idx.size:
                    parts_c.append(node.coords[:, idx])
                    parts_i.append(node.ids[idx])
            else:
                d = node.dim
                start, end = locate_children_range(node, qlo[d], qhi[d], simd)
                queue.extend(node.children[start : end + 1])
        if stats is not None:
            stats.nodes_visited += visited
            stats.leaves_scanned += leaves
    if not parts_i:
        return RangeResult(np.empty((0, dims), dtype=np.uint64), np.empty(0, dtype=np.uint64))
    return RangeResult(np.concatenate(parts_c, axis=1).T.copy(), np.concatenate(parts_i))


def _with(delta: tuple[int, ...], d: int, value: int) -> tuple[int, ...]:
    return delta[:d] + (value,) + delta[d + 1 :]


def expand_inner_knn(node: InnerNode, q, dist: int, delta: tuple[int, ...], simd: bool = True) -> list[HeapEntry]:
    """One NODE entry for the child holding q[dim] plus up to two GROUP entries.

    A group's bound uses the gap from q[dim] to the group's nearest splitter.
    """
    d = node.dim
    qd = q[d]
    i = locate_child(node, qd, simd)
    inherited = delta[d]
    out = [HeapEntry(node.children[i], EntryKind.NODE, dist, delta)]
    base = dist - inherited * inherited
    shift = node.shift
    if i > 0:
        gap = max(qd - (node.codes[i - 1] << shift), inherited)
        out.append(HeapEntry(node, EntryKind.GROUP, base + gap * gap, _with(delta, d, gap), 0, i - 1, -1))
    last = len(node.codes)
    if i < last:
        gap = max((node.codes[i] << shift) - qd, inherited)
        out.append(HeapEntry(node, EntryKind.GROUP, base + gap * gap, _with(delta, d, gap), i + 1, last, 1))
    return out


def pop_group(entry: HeapEntry, q) -> list[HeapEntry]:
    """Split a GROUP into its member nearest the query plus the remaining group."""
    node: InnerNode = entry.node
    d = node.dim
    qd = q[d]
    shift = node.shift
    inherited = entry.delta[d]
    base = entry.dist - inherited * inherited
    if entry.side > 0:
        near, rest = entry.lo, (entry.lo + 1, entry.hi)
        next_gap = (node.codes[near] << shift) - qd if rest[0] <= rest[1] else None
    else:
        near, rest = entry.hi, (entry.lo, entry.hi - 1)
        next_gap = qd - (node.codes[near - 1] << shift) if rest[0] <= rest[1] else None
    out = [HeapEntry(node.children[near], EntryKind.NODE, entry.dist, entry.delta)]
    if next_gap is not None:
        gap = max(next_gap, inherited)
        out.append(HeapEntry(node, EntryKind.GROUP, base + gap * gap, _with(entry.delta, d, gap), rest[0], rest[1], entry.side))
    return out


def knn(tree, q, k: int, stats: QueryStats | None = None, trace: KnnTrace | None = None) -> KnnResult:
    """The k nearest stored points to ``q`` by squared Euclidean distance.

    Ties at the k-th distance keep the earliest discovered point. When k
    exceeds the number of stored points everything is returned and
    ``truncated`` is set.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    dims = tree.schema.dims
    q = tuple(int(v) for v in (q.coords if hasattr(q, "coords") else q))
    if len(q) != dims:
        raise ValueError(f"query has {len(q)} dimensions, tree has {dims}")
    simd = tree.simd
    total = tree.total_points
    truncated = k > total
    k = min(k, total)
    if tree.root is None or k == 0:
        return KnnResult([], np.empty((0, dims), dtype=np.uint64), np.empty(0, dtype=np.uint64), truncated)

    seq = count()
    frontier: list = []

    def push(e: HeapEntry) -> None:
        heapq.heappush(frontier, (e.dist, next(seq), e))

    push(HeapEntry(tree.root, EntryKind.NODE, 0, (0,) * dims))
    found: list = []  # max-heap of (-dist, -order, order, leaf, slot)
    bound = None
    order = 0
    saturated = False
    visited = leaves = compared = 0

    while frontier:
        dist, _, entry = heapq.heappop(frontier)
        if bound is not None and dist >= bound:
            break
        if trace is not None:
            trace.popped.append(entry)
            trace.bounds.append(bound)
        node = entry.node
        if entry.kind is EntryKind.GROUP:
            for e in pop_group(entry, q):
                push(e)
            continue
        visited += 1
        if type(node) is LeafNode:
            leaves += 1
            compared += node.n
            if simd:
                hi, lo, sat = sq_distance_words(node, q)
                if bound is not None:
                    bh, bl = bound >> 64, bound & _M64
                    mask = (hi < np.uint64(bh)) | ((hi == np.uint64(bh)) & (lo < np.uint64(bl)))
                    slots = np.flatnonzero(mask)
                    cand = zip(slots.tolist(), hi[slots].tolist(), lo[slots].tolist())
                else:
                    cand = zip(range(node.n), hi.tolist(), lo.tolist())
                dists = ((i, (h << 64) | l) for i, h, l in cand)
            else:
                vals, sat = leaf_sq_distances(node, q, simd=False)
                dists = enumerate(vals)
            saturated |= sat
            for i, dd in dists:
                if len(found) < k:
                    heapq.heappush(found, (-dd, -order, order, node, i))
                    if len(found) == k:
                        bound = -found[0][0]
                elif dd < bound:
                    heapq.heapreplace(found, (-dd, -order, order, node, i))
                    bound = -found[0][0]
                order += 1
            continue
        for e in expand_inner_knn(node, q, entry.dist, entry.delta, simd):
            push(e)

    if stats is not None:
        stats.nodes_visited += visited
        stats.leaves_scanned += leaves
        stats.points_compared += compared
    found.sort(key=lambda t: (-t[0], t[2]))
    coords = np.empty((len(found), dims), dtype=np.uint64)
    ids = np.empty(len(found), dtype=np.uint64)
    for j, (_, _, _, leaf, slot) in enumerate(found):
        coords[j] = leaf.coords[:, slot]
        ids[j] = leaf.ids[slot]
    return KnnResult([-t[0] for t in found], coords, ids, truncated, saturated)


__all__ = [
    "EntryKind",
    "HeapEntry",
    "KnnResult",
    "KnnTrace",
    "RangeResult",
    "U128_MAX",
    "expand_inner_knn",
    "knn",
    "pop_group",
    "range_query",
]
