"""Top-down bulk loading.

Dimensions are ranked once, then each node cracks its slice of the point
array along one dimension around quantized recursive-median splitters.
Split counts adapt to how far a node's population drifted from the
uniform expectation, and nodes pick the N64/N32/N16 layout whose fanout
fits the count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .model import Schema
from .nodes import InnerNode, Layout, LeafNode, LeafType, node_shift_for_layout

_EPS = 1e-9


@dataclass
class BuildConfig:
    leaf_capacity: int = 128
    sample_size: int = 4096
    seed: int = 0
    layouts: str = "auto"  # "auto" or "n64-only"
    simd: bool = True
    dim_order: list[int] | None = None
    unique_weight: float = 1.0
    spread_weight: float = 1.0

    def __post_init__(self):
        if self.leaf_capacity < 2:
            raise ValueError("leaf_capacity must be >= 2")
        if self.sample_size < 1:
            raise ValueError("sample_size must be >= 1")
        if self.layouts not in ("auto", "n64-only"):
            raise ValueError(f"unknown layouts mode {self.layouts!r}")

    @property
    def max_fanout(self) -> int:
        return Layout.N64.fanout if self.layouts == "n64-only" else Layout.N16.fanout


@dataclass(frozen=True)
class LeafThresholds:
    heavy: int
    outlier: int
    mean_capacity: Fraction = field(compare=False)

    def classify(self, n: int) -> LeafType:
        if n > self.outlier:
            return LeafType.OUTLIER
        if n > self.heavy:
            return LeafType.HEAVY
        return LeafType.LIGHT


@dataclass(frozen=True)
class SplitPlan:
    target: float  # S, the remaining ideal split count for this dimension
    adjusted: float  # S' = S * M / M_exp
    count: int  # children actually requested from the layout
    layout: Layout
    points: int  # M
    expected: float  # M_exp


def thresholds_for(total_points: int, leaf_count: int, leaf_capacity: int) -> LeafThresholds:
    mean = Fraction(total_points, leaf_count)
    heavy = math.floor(Fraction(6, 5) * max(mean, Fraction(leaf_capacity)))
    return LeafThresholds(heavy, 2 * heavy, mean)


def rank_dimensions(sample: np.ndarray, unique_weight: float = 1.0, spread_weight: float = 1.0) -> list[int]:
    """Order dimensions by uniformity: distinct-value ratio times normalised 10-90% spread."""
    sample = np.asarray(sample)
    if sample.ndim != 2 or sample.shape[0] == 0:
        raise ValueError("need a non-empty (m, D) sample")
    m = sample.shape[0]
    scores = []
    for d in range(sample.shape[1]):
        col = sample[:, d].astype(np.float64)
        unique_ratio = np.unique(sample[:, d]).size / m
        lo, hi = col.min(), col.max()
        if hi == lo:
            spread = 0.0
        else:
            q10, q90 = np.quantile(col, [0.1, 0.9])
            spread = float((q90 - q10) / (hi - lo))
        scores.append((unique_ratio ** unique_weight) * (spread ** spread_weight))
    return sorted(range(len(scores)), key=lambda d: (-scores[d], d))


def target_splits(n: int, leaf_capacity: int, dims: int) -> float:
    if n < 1:
        raise ValueError("need at least one point")
    leaves = -(-n // leaf_capacity)
    if leaves == 1:
        return 1.0
    s = leaves ** (1.0 / dims)
    r = round(s)
    # snap exact integer roots (e.g. 1024 ** 0.5) that float pow misses
    return float(r) if r ** dims == leaves else s


def choose_layout(s: float, layouts: str = "auto") -> tuple[Layout, int]:
    """Layout and child count for a node asked to produce ``s`` partitions."""
    if s < 2 - _EPS:
        raise ValueError("a node needs at least two partitions")
    want = math.ceil(s - _EPS)
    if layouts == "n64-only":
        return Layout.N64, min(want, Layout.N64.fanout)
    if want <= Layout.N64.fanout:
        return Layout.N64, want
    if want <= Layout.N32.fanout:
        return Layout.N32, want
    return Layout.N16, min(want, Layout.N16.fanout)


def _value_at_rank(col: np.ndarray, rank: int, rng: np.random.Generator, sample_size: int) -> int:
    n = col.size
    if n <= sample_size:
        return int(np.partition(col, rank)[rank])
    sample = col[rng.integers(0, n, sample_size)]
    r = min(sample_size - 1, rank * sample_size // n)
    return int(np.partition(sample, r)[r])


def split_code(col: np.ndarray, candidate: int, shift: int, layout: Layout) -> int | None:
    """Quantized splitter that puts a non-empty part of ``col`` on each side.

    Starts from ``candidate >> shift``; when that code leaves the left side
    empty (it equals the smallest code present) the next larger code present
    in ``col`` is used instead. Returns None when every value shares one code.
    """
    top = layout.maxval - 1
    sh = np.uint64(shift)
    codes = col >> sh if shift else col
    cmin = int(codes.min())
    code = min(candidate >> shift, top)
    if code <= cmin:
        above = codes[codes > np.uint64(cmin)]
        if above.size == 0:
            return None
        code = min(int(above.min()), top)
        if code <= cmin:
            return None
    return code


def crack(pts: np.ndarray, ids: np.ndarray, a: int, b: int, dim: int, pivot: int) -> int:
    """Partition rows [a, b) so values < pivot come first; returns the split row."""
    seg = pts[a:b]
    left = seg[:, dim] < np.uint64(pivot)
    nleft = int(np.count_nonzero(left))
    if 0 < nleft < b - a:
        order = np.argsort(~left, kind="stable")
        pts[a:b] = seg[order]
        ids[a:b] = ids[a:b][order]
    return a + nleft


def recursive_median_split(
    pts: np.ndarray,
    ids: np.ndarray,
    a: int,
    b: int,
    dim: int,
    target: int,
    layout: Layout,
    shift: int,
    rng: np.random.Generator | None = None,
    sample_size: int = 4096,
) -> tuple[list[int], list[int]]:
    """Crack rows [a, b) into up to ``target`` segments along ``dim``.

    Each segment carries the number of pieces it still owes; the segment
    owing the most is cut at the quantile that divides those pieces in half
    (the plain median when the count is a power of two). Segments that
    cannot produce a distinct quantized splitter are left whole.
    Returns the ascending splitter codes and the row boundaries of the
    resulting segments (len(codes) + 2 entries).
    """
    if b <= a:
        raise ValueError("empty slice")
    if target < 2:
        return [], [a, b]
    rng = rng if rng is not None else np.random.default_rng(0)
    segs = [[a, b, target]]
    codes: list[int] = []
    while len(codes) < target - 1:
        best = None
        for i, (s, e, p) in enumerate(segs):
            if p > 1 and (best is None or (p, e - s) > (segs[best][2], segs[best][1] - segs[best][0])):
                best = i
        if best is None:
            break
        s, e, p = segs[best]
        col = pts[s:e, dim]
        left_pieces = p // 2
        rank = (e - s) * left_pieces // p
        candidate = _value_at_rank(col, rank, rng, sample_size)
        code = split_code(col, candidate, shift, layout)
        if code is None:
            segs[best][2] = 1
            continue
        mid = crack(pts, ids, s, e, dim, code << shift)
        segs[best:best + 1] = [[s, mid, left_pieces], [mid, e, p - left_pieces]]
        codes.insert(best, code)
    bounds = [seg[0] for seg in segs] + [b]
    return codes, bounds


def _merge_small(codes: list[int], bounds: list[int], small: int, cap: int) -> tuple[list[int], list[int]]:
    """Fold segments smaller than ``small`` into a neighbour when the union fits ``cap``."""
    codes, bounds = list(codes), list(bounds)
    i = 0
    while i < len(bounds) - 1 and len(bounds) > 2:
        size = bounds[i + 1] - bounds[i]
        if size < small:
            left = bounds[i] - bounds[i - 1] if i > 0 else None
            right = bounds[i + 2] - bounds[i + 1] if i + 2 < len(bounds) else None
            options = [(s, side) for s, side in ((left, -1), (right, 1)) if s is not None and s + size <= cap]
            if options:
                _, side = min(options)
                if side < 0:
                    del codes[i - 1]
                    del bounds[i]
                    i -= 1
                else:
                    del codes[i]
                    del bounds[i + 1]
                continue
        i += 1
    return codes, bounds


class _Builder:
    def __init__(self, pts: np.ndarray, ids: np.ndarray, schema: Schema, config: BuildConfig, rng: np.random.Generator):
        self.pts = pts
        self.ids = ids
        self.schema = schema
        self.config = config
        self.rng = rng
        self.C = schema.leaf_capacity
        self.leaf_cap = (6 * self.C) // 5
        self.plans: list[SplitPlan] = []

    def build(self, a: int, b: int, start_pos: int) -> LeafNode | InnerNode:
        s = target_splits(b - a, self.C, self.schema.dims)
        return self.node(a, b, start_pos, s, float(b - a), s, leaf_level=False)

    def leaf(self, a: int, b: int) -> LeafNode:
        return LeafNode(self.pts[a:b], self.ids[a:b])

    def node(self, a: int, b: int, pos: int, target: float, m_exp: float, s_global: float, leaf_level: bool):
        M = b - a
        if M <= self.C or (leaf_level and M <= self.leaf_cap):
            return self.leaf(a, b)
        dims = self.schema.dims
        order = self.schema.dim_order
        for _ in range(dims):
            dim = order[pos % dims]
            col = self.pts[a:b, dim]
            if col.min() != col.max():
                made = self.split(a, b, pos, dim, target, m_exp, s_global)
                if made is not None:
                    return made
            pos, target = pos + 1, s_global
        return self.leaf(a, b)

    def split(self, a, b, pos, dim, target, m_exp, s_global):
        M = b - a
        C = self.C
        maxf = self.config.max_fanout
        adjusted = target * M / m_exp
        by_size = -(-M // C)
        desired = max(2, min(math.ceil(adjusted - _EPS), by_size))
        leaf_level = desired == by_size
        if desired > maxf and -(-M // self.leaf_cap) <= maxf:
            desired, leaf_level = maxf, True
        if desired > maxf:
            levels = math.ceil(math.log(desired) / math.log(maxf) - _EPS)
            per = max(2, math.ceil(desired ** (1.0 / levels) - _EPS))
        else:
            per = desired
        layout, count = choose_layout(per, self.config.layouts)

        best = None
        attempt = 0
        col_max = int(self.pts[a:b, dim].max())
        while layout is not None:
            k = min(count, layout.fanout)
            shift = node_shift_for_layout(col_max, layout)
            codes, bounds = recursive_median_split(
                self.pts, self.ids, a, b, dim, k, layout, shift, self.rng, self.config.sample_size
            )
            attempt += 1
            if best is None or len(codes) > len(best[2]):
                best = (layout, shift, codes, bounds, k, attempt)
            if len(codes) == k - 1:
                break
            layout = layout.wider()
        layout, shift, codes, bounds, k, which = best
        if not codes:
            return None
        if which != attempt:
            # later attempts re-cracked the slice; restore the chosen partition
            bounds = self._recrack(a, b, dim, shift, codes)
        if leaf_level:
            codes, bounds = _merge_small(codes, bounds, C // 2, C)
        nchild = len(codes) + 1
        self.plans.append(SplitPlan(target, adjusted, k, layout, M, m_exp))
        keep_dim = adjusted / nchild >= 2
        children = []
        for i in range(nchild):
            s, e = bounds[i], bounds[i + 1]
            if keep_dim:
                children.append(self.node(s, e, pos, target / nchild, m_exp / nchild, s_global, leaf_level))
            else:
                children.append(self.node(s, e, pos + 1, s_global, m_exp / target, s_global, leaf_level))
        return InnerNode(layout, dim, shift, codes, children)

    def _recrack(self, a, b, dim, shift, codes) -> list[int]:
        col = self.pts[a:b, dim]
        keys = np.searchsorted(np.array([c << shift for c in codes], dtype=np.uint64), col, side="right")
        order = np.argsort(keys, kind="stable")
        self.pts[a:b] = self.pts[a:b][order]
        self.ids[a:b] = self.ids[a:b][order]
        counts = np.bincount(keys, minlength=len(codes) + 1)
        return [a] + (a + np.cumsum(counts)).tolist()


def build_subtree(
    coords: np.ndarray,
    ids: np.ndarray,
    schema: Schema,
    config: BuildConfig,
    start_pos: int = 0,
    rng: np.random.Generator | None = None,
):
    """Build a root node over the given rows (copied), starting at ``dim_order[start_pos]``."""
    pts = np.array(coords, dtype=np.uint64, copy=True)
    idv = np.array(ids, dtype=np.uint64, copy=True)
    if pts.shape[0] == 0:
        return None
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    return _Builder(pts, idv, schema, config, rng).build(0, pts.shape[0], start_pos)


def build(coords, ids=None, config: BuildConfig | None = None):
    """Bulk-load a tree from an (N, D) uint64 coordinate array."""
    from .tree import SkdTree

    config = config or BuildConfig()
    coords = np.asarray(coords, dtype=np.uint64)
    if coords.ndim != 2:
        raise ValueError("coords must be (N, D)")
    n, dims = coords.shape
    ids = np.arange(n, dtype=np.uint64) if ids is None else np.asarray(ids, dtype=np.uint64)
    if ids.shape != (n,):
        raise ValueError("ids length does not match coords")
    rng = np.random.default_rng(config.seed)
    if config.dim_order is not None:
        order = list(config.dim_order)
    elif n:
        take = rng.choice(n, size=min(n, config.sample_size), replace=False) if n > config.sample_size else slice(None)
        order = rank_dimensions(coords[take], config.unique_weight, config.spread_weight)
    else:
        order = list(range(dims))
    schema = Schema(dims, config.leaf_capacity, order)
    tree = SkdTree(None, schema, config)
    if n:
        pts = coords.copy()
        idv = ids.copy()
        builder = _Builder(pts, idv, schema, config, rng)
        tree.root = builder.build(0, n, 0)
        tree.build_plans = builder.plans
    tree.reset_stats()
    tree.classify_all()
    return tree


def compute_thresholds(tree) -> LeafThresholds:
    leaves = list(tree.leaves())
    if not leaves:
        raise ValueError("tree has no leaves")
    return thresholds_for(sum(l.n for l in leaves), len(leaves), tree.schema.leaf_capacity)
