"""Point insertion and deletion.

Writers need exclusive access to the tree; nothing here takes locks.
"""

from __future__ import annotations

import enum

import numpy as np

from .construction import build_subtree, split_code
from .model import MAXVAL
from .nodes import InnerNode, LeafNode, LeafType, leaf_find_point, locate_child


class InsertOutcome(enum.Enum):
    INSERTED = "inserted"
    INSERTED_WITH_SPLIT = "inserted_with_split"
    INSERTED_WITH_REBUILD = "inserted_with_rebuild"
    INSERTED_OUTLIER_GROWN = "inserted_outlier_grown"
    DUPLICATE = "duplicate"


class DeleteOutcome(enum.Enum):
    DELETED = "deleted"
    NOT_FOUND = "not_found"


def _check_point(tree, coords) -> tuple[int, ...]:
    coords = tuple(int(v) for v in coords)
    if len(coords) != tree.schema.dims:
        raise ValueError(f"point has {len(coords)} dimensions, tree has {tree.schema.dims}")
    for d, v in enumerate(coords):
        if not 0 <= v < MAXVAL:
            raise ValueError(f"coordinate {v} in dimension {d} outside [0, MAXVAL)")
    return coords


def descend(tree, coords) -> tuple[LeafNode, list[tuple[InnerNode, int]]]:
    """Leaf responsible for ``coords`` and the (node, child index) path to it."""
    path = []
    node = tree.root
    simd = tree.simd
    while type(node) is InnerNode:
        i = locate_child(node, coords[node.dim], simd)
        path.append((node, i))
        node = node.children[i]
    return node, path


def insert(tree, coords, pid: int) -> InsertOutcome:
    coords = _check_point(tree, coords)
    pid = int(pid)
    if tree.root is None:
        tree.root = LeafNode(np.array([coords], dtype=np.uint64), np.array([pid], dtype=np.uint64))
        tree.leaf_count, tree.total_points = 1, 1
        return InsertOutcome.INSERTED
    leaf, path = descend(tree, coords)
    if leaf_find_point(leaf, coords, pid, tree.simd) is not None:
        return InsertOutcome.DUPLICATE
    leaf.append(coords, pid)
    tree.total_points += 1
    th = tree.thresholds
    n = leaf.n
    if leaf.kind is LeafType.OUTLIER:
        if n >= (1 << leaf.outlier_level) * th.outlier:
            done = split_leaf(tree, leaf, path)
            if done:
                return done
            leaf.outlier_level += 1
        return InsertOutcome.INSERTED_OUTLIER_GROWN
    if n > th.outlier:
        done = split_leaf(tree, leaf, path)
        if done:
            return done
        leaf.kind = LeafType.OUTLIER
        leaf.outlier_level = 1
        return InsertOutcome.INSERTED_OUTLIER_GROWN
    leaf.kind = LeafType.HEAVY if n > th.heavy else LeafType.LIGHT
    return InsertOutcome.INSERTED


def _separator(node: InnerNode, child: int, col: np.ndarray) -> int | None:
    """Quantized splitter for ``node`` that divides ``col`` (values under ``child``) near its median."""
    n = col.size
    if n < 2:
        return None
    median = int(np.partition(col, n // 2)[n // 2])
    code = split_code(col, median, node.shift, node.layout)
    if code is None:
        return None
    lower = node.codes[child - 1] if child > 0 else -1
    upper = node.codes[child] if child < len(node.codes) else node.layout.maxval
    if not lower < code < upper:
        return None
    return code


def _classify_new(tree, nodes) -> None:
    th = tree.thresholds
    for sub in nodes:
        for leaf in tree.leaves(sub):
            leaf.kind = th.classify(leaf.n)
            leaf.outlier_level = 1 if leaf.kind is LeafType.OUTLIER else 0


def split_leaf(tree, leaf: LeafNode, path: list[tuple[InnerNode, int]]) -> InsertOutcome | None:
    """Split an overfull leaf; returns the outcome, or None if no unique splitter exists.

    Uses a free slot in the parent when there is one; otherwise rebuilds the
    subtree under the nearest ancestor with a free slot as two subtrees, or
    the whole tree when no ancestor has room.
    """
    if not path:
        tree.rebuild()
        return InsertOutcome.INSERTED_WITH_REBUILD
    parent, ci = path[-1]
    if parent.has_free_slot:
        col = leaf.coords[parent.dim, : leaf.n]
        code = _separator(parent, ci, col)
        if code is None:
            return None
        rows, ids = leaf.rows(), leaf.live_ids()
        right = rows[:, parent.dim] >= np.uint64(code << parent.shift)
        left_leaf = LeafNode(rows[~right], ids[~right])
        right_leaf = LeafNode(rows[right], ids[right])
        parent.children[ci] = left_leaf
        parent.insert_splitter(ci, code, right_leaf)
        tree.leaf_count += 1
        _classify_new(tree, (left_leaf, right_leaf))
        return InsertOutcome.INSERTED_WITH_SPLIT
    for j in range(len(path) - 2, -1, -1):
        v, vi = path[j]
        if v.has_free_slot:
            break
    else:
        tree.rebuild()
        return InsertOutcome.INSERTED_WITH_REBUILD
    sub = v.children[vi]
    rows, ids = tree.points(sub)
    code = _separator(v, vi, rows[:, v.dim])
    if code is None:
        return None
    right = rows[:, v.dim] >= np.uint64(code << v.shift)
    order = tree.schema.dim_order
    start = order.index(v.dim) + 1
    old_leaves = sum(1 for _ in tree.leaves(sub))
    left_sub = build_subtree(rows[~right], ids[~right], tree.schema, tree.config, start, tree.rng)
    right_sub = build_subtree(rows[right], ids[right], tree.schema, tree.config, start, tree.rng)
    v.children[vi] = left_sub
    v.insert_splitter(vi, code, right_sub)
    tree.leaf_count += sum(1 for _ in tree.leaves(left_sub)) + sum(1 for _ in tree.leaves(right_sub)) - old_leaves
    _classify_new(tree, (left_sub, right_sub))
    return InsertOutcome.INSERTED_WITH_REBUILD


def delete(tree, coords, pid: int) -> DeleteOutcome:
    coords = tuple(int(v) for v in coords)
    if len(coords) != tree.schema.dims:
        raise ValueError(f"point has {len(coords)} dimensions, tree has {tree.schema.dims}")
    if tree.root is None:
        return DeleteOutcome.NOT_FOUND
    leaf, path = descend(tree, coords)
    slot = leaf_find_point(leaf, coords, int(pid), tree.simd)
    if slot is None:
        return DeleteOutcome.NOT_FOUND
    leaf.remove_at(slot)
    tree.total_points -= 1
    if leaf.n == 0:
        _unlink(tree, path)
        return DeleteOutcome.DELETED
    if leaf.kind is not LeafType.LIGHT:
        th = tree.thresholds
        if leaf.kind is LeafType.OUTLIER and leaf.n <= th.outlier:
            leaf.kind = th.classify(leaf.n)
            leaf.outlier_level = 0
        elif leaf.kind is LeafType.HEAVY and leaf.n <= th.heavy:
            leaf.kind = LeafType.LIGHT
    return DeleteOutcome.DELETED


def _unlink(tree, path) -> None:
    tree.leaf_count -= 1
    if not path:
        tree.root = None
        return
    parent, ci = path[-1]
    parent.remove_child(ci)
    if parent.slotuse == 0:
        # a single remaining child takes the parent's place
        only = parent.children[0]
        if len(path) == 1:
            tree.root = only
        else:
            grand, gi = path[-2]
            grand.children[gi] = only
