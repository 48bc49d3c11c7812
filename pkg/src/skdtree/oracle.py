"""Ground truth for tests and benchmarks: linear scans and a textbook binary kd-tree.

Nothing here shares code with the tree's kernels.
"""

from __future__ import annotations

import heapq

import numpy as np


class FlatStore:
    """Live point multiset in parallel arrays; delete swaps the last row in.

    A dict from id to row numbers keeps deletion O(1) amortised.
    """

    def __init__(self, coords: np.ndarray | None = None, ids: np.ndarray | None = None, dims: int | None = None):
        if coords is None:
            if dims is None:
                raise ValueError("need coords or dims")
            coords = np.empty((0, dims), dtype=np.uint64)
            ids = np.empty(0, dtype=np.uint64)
        coords = np.asarray(coords, dtype=np.uint64)
        n, self.dims = coords.shape
        cap = max(16, n)
        self._coords = np.empty((cap, self.dims), dtype=np.uint64)
        self._ids = np.empty(cap, dtype=np.uint64)
        self._coords[:n] = coords
        self._ids[:n] = np.arange(n) if ids is None else ids
        self.n = n
        self._rows: dict[int, list[int]] = {}
        for row, pid in enumerate(self._ids[:n].tolist()):
            self._rows.setdefault(pid, []).append(row)

    def __len__(self) -> int:
        return self.n

    @property
    def coords(self) -> np.ndarray:
        return self._coords[: self.n]

    @property
    def ids(self) -> np.ndarray:
        return self._ids[: self.n]

    def append(self, coords, pid: int) -> None:
        if self.n == self._ids.size:
            cap = 2 * self._ids.size
            grown = np.empty((cap, self.dims), dtype=np.uint64)
            grown[: self.n] = self._coords[: self.n]
            gids = np.empty(cap, dtype=np.uint64)
            gids[: self.n] = self._ids[: self.n]
            self._coords, self._ids = grown, gids
        self._coords[self.n] = coords
        self._ids[self.n] = pid
        self._rows.setdefault(int(pid), []).append(self.n)
        self.n += 1

    def remove(self, coords, pid: int) -> bool:
        pid = int(pid)
        want = np.asarray(coords, dtype=np.uint64)
        rows = self._rows.get(pid, [])
        for j, i in enumerate(rows):
            if np.array_equal(self._coords[i], want):
                break
        else:
            return False
        rows.pop(j)
        if not rows:
            del self._rows[pid]
        last = self.n - 1
        if i != last:
            moved = int(self._ids[last])
            self._coords[i] = self._coords[last]
            self._ids[i] = moved
            where = self._rows[moved]
            where[where.index(last)] = i
        self.n = last
        return True


def scan_range(store: FlatStore, lo, hi) -> tuple[np.ndarray, np.ndarray]:
    """Every live point p with lo <= p <= hi componentwise, in storage order."""
    coords = store.coords
    keep = np.ones(store.n, dtype=bool)
    for d in range(store.dims):
        col = coords[:, d]
        keep &= (col >= np.uint64(lo[d])) & (col <= np.uint64(hi[d]))
    idx = np.flatnonzero(keep)
    return coords[idx], store.ids[idx]


def scan_count(store: FlatStore, lo, hi) -> int:
    return int(scan_range(store, lo, hi)[1].size)


def _exact_sq(row, q) -> int:
    return sum((int(a) - b) ** 2 for a, b in zip(row, q))


def scan_knn(store: FlatStore, q, k: int) -> tuple[list[int], np.ndarray, np.ndarray]:
    """k smallest exact squared distances; ties broken by storage order.

    A float64 pass picks a candidate superset (relative error far below the
    1e-9 margin), then distances are recomputed exactly with Python integers.
    """
    n = store.n
    if n == 0:
        return [], np.empty((0, store.dims), dtype=np.uint64), np.empty(0, dtype=np.uint64)
    k = min(k, n)
    q = [int(v) for v in q]
    coords = store.coords
    approx = np.zeros(n, dtype=np.float64)
    for d in range(store.dims):
        col = coords[:, d]
        qd = np.uint64(q[d])
        diff = np.where(col >= qd, col - qd, qd - col).astype(np.float64)
        approx += diff * diff
    kth = np.partition(approx, k - 1)[k - 1]
    eps = 1e-9
    cand = np.flatnonzero(approx <= kth * (1 + eps) / (1 - eps))
    exact = [(_exact_sq(coords[i].tolist(), q), int(i)) for i in cand]
    exact.sort()
    best = exact[:k]
    idx = np.array([i for _, i in best], dtype=np.intp)
    return [d for d, _ in best], coords[idx], store.ids[idx]


class _KdNode:
    __slots__ = ("axis", "split", "left", "right", "points")

    def __init__(self, axis=-1, split=0, left=None, right=None, points=None):
        self.axis, self.split, self.left, self.right, self.points = axis, split, left, right, points


class BinaryKdTree:
    """Median-split binary kd-tree with buckets of up to ``leaf_size`` points.

    Pure Python loops on purpose: it is the unoptimised baseline. Points with
    a coordinate below the split go left, the rest right.
    """

    def __init__(self, coords: np.ndarray, ids: np.ndarray, leaf_size: int = 128):
        coords = np.asarray(coords, dtype=np.uint64)
        self.dims = coords.shape[1]
        self.leaf_size = leaf_size
        self.size = coords.shape[0]
        order = np.arange(coords.shape[0])
        self.root = self._build(coords, np.asarray(ids, dtype=np.uint64), order, 0) if self.size else None

    def _build(self, coords, ids, idx, depth):
        if idx.size <= self.leaf_size:
            return _KdNode(points=list(zip(map(tuple, coords[idx].tolist()), ids[idx].tolist())))
        for step in range(self.dims):
            axis = (depth + step) % self.dims
            col = coords[idx, axis]
            mid = idx.size // 2
            split = int(np.partition(col, mid)[mid])
            left = col < np.uint64(split)
            if left.any():
                break
            above = col[col > np.uint64(split)]
            if above.size:
                split = int(above.min())
                left = col < np.uint64(split)
                break
        else:
            return _KdNode(points=list(zip(map(tuple, coords[idx].tolist()), ids[idx].tolist())))
        return _KdNode(
            axis,
            split,
            self._build(coords, ids, idx[left], depth + 1),
            self._build(coords, ids, idx[~left], depth + 1),
        )

    def range(self, lo, hi) -> list[tuple[tuple[int, ...], int]]:
        lo, hi = [int(v) for v in lo], [int(v) for v in hi]
        out = []
        stack = [self.root] if self.root is not None else []
        dims = range(self.dims)
        while stack:
            node = stack.pop()
            if node.points is not None:
                for p, pid in node.points:
                    inside = True
                    for d in dims:
                        if p[d] < lo[d] or p[d] > hi[d]:
                            inside = False
                            break
                    if inside:
                        out.append((p, pid))
                continue
            if hi[node.axis] >= node.split:
                stack.append(node.right)
            if lo[node.axis] < node.split:
                stack.append(node.left)
        return out

    def knn(self, q, k: int) -> list[tuple[int, tuple[int, ...], int]]:
        """(dist, coords, id) for the k nearest points, ascending."""
        q = [int(v) for v in q]
        heap: list = []  # (-dist, -order, coords, id)
        order = 0

        def visit(node):
            nonlocal order
            if node.points is not None:
                for p, pid in node.points:
                    dist = 0
                    for d in range(self.dims):
                        diff = p[d] - q[d]
                        dist += diff * diff
                    if len(heap) < k:
                        heapq.heappush(heap, (-dist, -order, p, pid))
                    elif dist < -heap[0][0]:
                        heapq.heapreplace(heap, (-dist, -order, p, pid))
                    order += 1
                return
            gap = q[node.axis] - node.split
            near, far = (node.left, node.right) if gap < 0 else (node.right, node.left)
            visit(near)
            if len(heap) < k or gap * gap < -heap[0][0]:
                visit(far)

        if self.root is not None:
            visit(self.root)
        return sorted(((-d, p, pid) for d, _, p, pid in heap), key=lambda t: t[0])
