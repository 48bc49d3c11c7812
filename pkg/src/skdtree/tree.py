"""The tree object: root, schema, live leaf statistics and the public API.

Queries may run concurrently with each other; inserts and deletes need
exclusive access (no internal locking).
"""

from __future__ import annotations

from collections import Counter

import numpy as np

from . import query, updates
from .construction import BuildConfig, LeafThresholds, build_subtree, thresholds_for
from .model import RangeQuery, Schema
from .nodes import InnerNode, LeafNode, LeafType, QueryStats


class InvariantError(AssertionError):
    pass


class SkdTree:
    def __init__(self, root, schema: Schema, config: BuildConfig | None = None):
        self.root = root
        self.schema = schema
        self.config = config or BuildConfig(leaf_capacity=schema.leaf_capacity)
        self.simd = self.config.simd
        self.leaf_count = 0
        self.total_points = 0
        self.build_plans = []
        self.rng = np.random.default_rng(self.config.seed + 1)
        self._th_key = None
        self._th = None

    # --- statistics -------------------------------------------------------

    def __len__(self) -> int:
        return self.total_points

    @property
    def dims(self) -> int:
        return self.schema.dims

    @property
    def thresholds(self) -> LeafThresholds:
        key = (self.total_points, self.leaf_count)
        if key != self._th_key:
            self._th = thresholds_for(max(self.total_points, 0), max(self.leaf_count, 1), self.schema.leaf_capacity)
            self._th_key = key
        return self._th

    def refresh_thresholds(self) -> LeafThresholds:
        self._th_key = None
        return self.thresholds

    def reset_stats(self) -> None:
        leaves = list(self.leaves())
        self.leaf_count = len(leaves)
        self.total_points = sum(l.n for l in leaves)

    def classify_all(self) -> None:
        if self.root is None:
            return
        th = self.thresholds
        for leaf in self.leaves():
            leaf.kind = th.classify(leaf.n)
            leaf.outlier_level = 1 if leaf.kind is LeafType.OUTLIER else 0

    # --- traversal --------------------------------------------------------

    def leaves(self, start=None):
        stack = [self.root if start is None else start]
        while stack:
            node = stack.pop()
            if node is None:
                continue
            if type(node) is LeafNode:
                yield node
            else:
                stack.extend(reversed(node.children))

    def inner_nodes(self, start=None):
        stack = [self.root if start is None else start]
        while stack:
            node = stack.pop()
            if type(node) is InnerNode:
                yield node
                stack.extend(reversed(node.children))

    def height(self) -> int:
        """Number of node levels on the longest root-to-leaf path (0 when empty)."""
        if self.root is None:
            return 0
        best = 0
        stack = [(self.root, 1)]
        while stack:
            node, depth = stack.pop()
            if type(node) is LeafNode:
                best = max(best, depth)
            else:
                stack.extend((c, depth + 1) for c in node.children)
        return best

    def points(self, start=None) -> tuple[np.ndarray, np.ndarray]:
        leaves = [l for l in self.leaves(start) if l.n]
        if not leaves:
            return np.empty((0, self.dims), dtype=np.uint64), np.empty(0, dtype=np.uint64)
        coords = np.concatenate([l.coords[:, : l.n] for l in leaves], axis=1).T.copy()
        ids = np.concatenate([l.ids[: l.n] for l in leaves])
        return coords, ids

    def structure_stats(self) -> dict:
        leaves = list(self.leaves())
        kinds = Counter(l.kind for l in leaves)
        layouts = Counter(n.layout.name for n in self.inner_nodes())
        nleaves = len(leaves)
        pct = {k.name.lower(): (100.0 * kinds[k] / nleaves if nleaves else 0.0) for k in LeafType}
        return {
            "points": self.total_points,
            "leaves": nleaves,
            "inner_nodes": sum(layouts.values()),
            "height": self.height(),
            "avg_leaf_capacity": (self.total_points / nleaves) if nleaves else 0.0,
            "light_pct": pct["light"],
            "heavy_pct": pct["heavy"],
            "outlier_pct": pct["outlier"],
            "layout_n64": layouts.get("N64", 0),
            "layout_n32": layouts.get("N32", 0),
            "layout_n16": layouts.get("N16", 0),
        }

    # --- queries and updates ---------------------------------------------

    def range_query(self, q: RangeQuery | tuple, stats: QueryStats | None = None, skip_covered: bool = True):
        return query.range_query(self, q, stats, skip_covered)

    def knn(self, q, k: int, stats: QueryStats | None = None, trace=None):
        return query.knn(self, q, k, stats, trace)

    def insert(self, coords, pid: int) -> updates.InsertOutcome:
        return updates.insert(self, coords, pid)

    def delete(self, coords, pid: int) -> updates.DeleteOutcome:
        return updates.delete(self, coords, pid)

    def rebuild(self) -> None:
        """Rebuild the whole tree from its current points, keeping the schema."""
        coords, ids = self.points()
        self.root = build_subtree(coords, ids, self.schema, self.config, 0, self.rng)
        self.reset_stats()
        self.classify_all()

    # --- validation -------------------------------------------------------

    def check_invariants(self) -> None:
        """Walk the whole tree and raise InvariantError on the first violation."""
        if self.root is None:
            if self.total_points or self.leaf_count:
                raise InvariantError("empty tree with non-zero stats")
            return
        dims = self.dims
        leaf_count = total = 0
        stack = [(self.root, [0] * dims, [None] * dims)]
        while stack:
            node, lo, hi = stack.pop()
            if type(node) is LeafNode:
                leaf_count += 1
                total += node.n
                if node.n == 0:
                    raise InvariantError("empty leaf left in the tree")
                live = node.coords[:, : node.n]
                if node.lo != live.min(axis=1).tolist() or node.hi != live.max(axis=1).tolist():
                    raise InvariantError(f"stale bounding box in {node!r}")
                for d in range(dims):
                    if int(live[d].min()) < lo[d] or (hi[d] is not None and int(live[d].max()) >= hi[d]):
                        raise InvariantError(f"point outside its partition in dimension {d}")
                continue
            codes = node.codes
            if not codes:
                raise InvariantError("inner node without splitters")
            if any(a >= b for a, b in zip(codes, codes[1:])):
                raise InvariantError(f"splitters not increasing: {codes}")
            if codes[-1] >= node.layout.maxval:
                raise InvariantError("splitter collides with padding code")
            block = node.block.tolist()
            if block[: len(codes)] != codes or any(v != node.layout.maxval for v in block[len(codes) :]):
                raise InvariantError("splitter block out of sync")
            if node.block.nbytes != 64:
                raise InvariantError("splitter block is not one cache line")
            if len(node.children) != len(codes) + 1 or any(c is None for c in node.children):
                raise InvariantError("child array does not match splitters")
            for i, child in enumerate(node.children):
                clo, chi = list(lo), list(hi)
                d = node.dim
                clo[d] = max(clo[d], node.lower_bound(i))
                ub = node.upper_bound(i)
                if ub is not None:
                    chi[d] = ub if chi[d] is None else min(chi[d], ub)
                stack.append((child, clo, chi))
        if leaf_count != self.leaf_count or total != self.total_points:
            raise InvariantError(
                f"stats ({self.leaf_count} leaves, {self.total_points} points) "
                f"disagree with tree ({leaf_count}, {total})"
            )
